//! Dense layouts: a background prompt plus ordered (mask, prompt) regions on an ERP canvas.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BinaryMask, ErpGrid};

/// Trigger phrase that activates the panorama LoRA.
pub const PANORAMA_TRIGGER: &str = "360-degree panoramic image";

pub const DEFAULT_MAX_REGIONS: usize = 3;

/// `object_id` reserved for the implicit background path.
pub const BACKGROUND_ID: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoraMode {
    Yes,
    #[default]
    BgOnly,
    No,
}

impl LoraMode {
    pub fn background(self) -> bool {
        matches!(self, LoraMode::Yes | LoraMode::BgOnly)
    }

    pub fn foreground(self) -> bool {
        self == LoraMode::Yes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub mask: BinaryMask,
    pub prompt: String,
    pub lora_enabled: bool,
    pub object_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub grid: ErpGrid,
    pub background_prompt: String,
    pub regions: Vec<RegionSpec>,
    pub include_objects_in_global: bool,
    pub background_lora: bool,
    pub max_regions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutWarning {
    /// Two regions share pixels; the merge averages them.
    Overlap { first: u32, second: u32, pixels: usize },
    /// A region reaches the top or bottom row, where objects tend to fail.
    TouchesPole { object_id: u32, row: usize },
}

impl fmt::Display for LayoutWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutWarning::Overlap {
                first,
                second,
                pixels,
            } => write!(
                f,
                "regions {first} and {second} overlap on {pixels} pixels; overlapping objects are often neglected or distorted"
            ),
            LayoutWarning::TouchesPole { object_id, row } => write!(
                f,
                "region {object_id} touches the pole row {row}; objects near the poles are hard to synthesize"
            ),
        }
    }
}

/// One denoising path derived from a layout. The background path comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub mask: BinaryMask,
    pub prompt: String,
    pub lora: bool,
    /// Index into `Layout::regions`; `None` for the background.
    pub region: Option<usize>,
}

impl PathSpec {
    pub fn is_foreground(&self) -> bool {
        self.region.is_some()
    }
}

impl Layout {
    pub fn new(grid: ErpGrid, background_prompt: impl Into<String>) -> Self {
        Self {
            grid,
            background_prompt: background_prompt.into(),
            regions: Vec::new(),
            include_objects_in_global: false,
            background_lora: false,
            max_regions: DEFAULT_MAX_REGIONS,
        }
    }

    /// Appends a region with the next free object id.
    pub fn with_region(mut self, mask: BinaryMask, prompt: impl Into<String>) -> Self {
        let id = self.regions.iter().map(|r| r.object_id + 1).max().unwrap_or(0);
        self.regions.push(RegionSpec {
            mask,
            prompt: prompt.into(),
            lora_enabled: false,
            object_id: id,
        });
        self
    }

    pub fn with_lora_mode(mut self, mode: LoraMode) -> Self {
        self.background_lora = mode.background();
        for r in &mut self.regions {
            r.lora_enabled = mode.foreground();
        }
        self
    }

    /// Keeps only the regions at `indices`, in ascending index order.
    pub fn select_regions(&self, indices: &[usize]) -> Result<Self> {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.regions.len()) {
            return Err(Error::Layout(format!(
                "mask index {bad} out of range for {} regions",
                self.regions.len()
            )));
        }
        Ok(Self {
            regions: idx.iter().map(|&i| self.regions[i].clone()).collect(),
            ..self.clone()
        })
    }

    /// Hard errors for malformed layouts, warnings for legal but risky ones.
    pub fn validate(&self) -> Result<Vec<LayoutWarning>> {
        if self.regions.len() > self.max_regions {
            return Err(Error::Layout(format!(
                "{} regions exceed the maximum of {}",
                self.regions.len(),
                self.max_regions
            )));
        }
        let dims = (self.grid.width(), self.grid.height());
        for r in &self.regions {
            if r.mask.dims() != dims {
                return Err(Error::Shape(format!(
                    "mask of region {} is {:?}, layout grid is {dims:?}",
                    r.object_id,
                    r.mask.dims()
                )));
            }
            if r.mask.values().iter().any(|&v| v > 1) {
                return Err(Error::Layout(format!("mask of region {} is not binary", r.object_id)));
            }
            if r.mask.is_empty() {
                return Err(Error::Layout(format!("mask of region {} is empty", r.object_id)));
            }
            if r.object_id == BACKGROUND_ID {
                return Err(Error::Layout(format!("object id {BACKGROUND_ID} is reserved")));
            }
        }
        let mut warnings = Vec::new();
        for (i, a) in self.regions.iter().enumerate() {
            for b in &self.regions[i + 1..] {
                if a.object_id == b.object_id {
                    return Err(Error::Layout(format!("duplicate object id {}", a.object_id)));
                }
                let pixels = a
                    .mask
                    .values()
                    .iter()
                    .zip(b.mask.values())
                    .filter(|(&x, &y)| x != 0 && y != 0)
                    .count();
                if pixels > 0 {
                    warnings.push(LayoutWarning::Overlap {
                        first: a.object_id,
                        second: b.object_id,
                        pixels,
                    });
                }
            }
        }
        let last = self.grid.height() - 1;
        for r in &self.regions {
            for row in [0, last] {
                if r.mask.occupied_rows().any(|y| y == row) {
                    warnings.push(LayoutWarning::TouchesPole {
                        object_id: r.object_id,
                        row,
                    });
                }
            }
        }
        Ok(warnings)
    }

    /// Background prompt, optionally followed by every local prompt and
    /// optionally preceded by `trigger`.
    pub fn effective_global_prompt(&self, trigger: Option<&str>) -> String {
        let mut p = self.background_prompt.clone();
        if self.include_objects_in_global && !self.regions.is_empty() {
            let objs: Vec<&str> = self.regions.iter().map(|r| r.prompt.as_str()).collect();
            p = format!("{p}, {}", objs.join(", "));
        }
        match trigger {
            Some(t) => format!("{t}, {p}"),
            None => p,
        }
    }

    /// The implicit all-ones background region.
    pub fn background_region(&self, trigger: Option<&str>) -> RegionSpec {
        RegionSpec {
            mask: BinaryMask::ones(self.grid.width(), self.grid.height()),
            prompt: self.effective_global_prompt(trigger),
            lora_enabled: self.background_lora,
            object_id: BACKGROUND_ID,
        }
    }

    /// Denoising paths in merge order. `trigger` is prepended wherever LoRA is on.
    pub fn paths(&self, trigger: Option<&str>) -> Vec<PathSpec> {
        let bg_trigger = trigger.filter(|_| self.background_lora);
        let bg = self.background_region(bg_trigger);
        let mut out = vec![PathSpec {
            mask: bg.mask,
            prompt: bg.prompt,
            lora: bg.lora_enabled,
            region: None,
        }];
        for (i, r) in self.regions.iter().enumerate() {
            let prompt = match trigger.filter(|_| r.lora_enabled) {
                Some(t) => format!("{t}, {}", r.prompt),
                None => r.prompt.clone(),
            };
            out.push(PathSpec {
                mask: r.mask.clone(),
                prompt,
                lora: r.lora_enabled,
                region: Some(i),
            });
        }
        out
    }
}

/// JSON layout manifest. Mask paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub background_prompt: String,
    #[serde(default)]
    pub regions: Vec<RegionEntry>,
    #[serde(default)]
    pub flags: LayoutFlags,
    /// Needed only when there are no regions to infer the grid from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ErpGrid>,
    #[serde(default = "default_max_regions")]
    pub max_regions: usize,
}

fn default_max_regions() -> usize {
    DEFAULT_MAX_REGIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub mask_png_path: PathBuf,
    pub prompt: String,
    #[serde(default)]
    pub lora: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayoutFlags {
    #[serde(default)]
    pub include_objects_in_global: bool,
    #[serde(default)]
    pub background_lora: bool,
}

impl Layout {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: LayoutFile = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(&file, base)
    }

    pub fn from_file(file: &LayoutFile, base: &Path) -> Result<Self> {
        let mut regions = Vec::with_capacity(file.regions.len());
        for (i, r) in file.regions.iter().enumerate() {
            let mask = BinaryMask::load_png(base.join(&r.mask_png_path))?;
            regions.push(RegionSpec {
                mask,
                prompt: r.prompt.clone(),
                lora_enabled: r.lora,
                object_id: r.object_id.unwrap_or(i as u32),
            });
        }
        let grid = match (file.grid, regions.first()) {
            (Some(g), _) => g,
            (None, Some(r)) => ErpGrid::new(r.mask.width(), r.mask.height())?,
            (None, None) => ErpGrid::default(),
        };
        let layout = Layout {
            grid,
            background_prompt: file.background_prompt.clone(),
            regions,
            include_objects_in_global: file.flags.include_objects_in_global,
            background_lora: file.flags.background_lora,
            max_regions: file.max_regions,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Writes `<dir>/<stem>.json` plus one PNG per region.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut regions = Vec::new();
        for r in &self.regions {
            let name = PathBuf::from(format!("{stem}_mask{}.png", r.object_id));
            r.mask.save_png(dir.join(&name))?;
            regions.push(RegionEntry {
                mask_png_path: name,
                prompt: r.prompt.clone(),
                lora: r.lora_enabled,
                object_id: Some(r.object_id),
            });
        }
        let file = LayoutFile {
            background_prompt: self.background_prompt.clone(),
            regions,
            flags: LayoutFlags {
                include_objects_in_global: self.include_objects_in_global,
                background_lora: self.background_lora,
            },
            grid: Some(self.grid),
            max_regions: self.max_regions,
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::PixelBox;

    fn grid() -> ErpGrid {
        ErpGrid::new(64, 32).unwrap()
    }

    fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        BinaryMask::rect(64, 32, PixelBox { x0, y0, x1, y1 })
    }

    fn two_animals() -> Layout {
        Layout::new(grid(), "a green field")
            .with_region(rect(4, 10, 14, 20), "cow")
            .with_region(rect(30, 10, 40, 20), "sheep")
    }

    #[test]
    fn disjoint_masks_no_warnings() {
        assert!(two_animals().validate().unwrap().is_empty());
    }

    #[test]
    fn overlap_warns() {
        let l = Layout::new(grid(), "bg")
            .with_region(rect(4, 10, 14, 20), "a")
            .with_region(rect(10, 12, 20, 22), "b");
        let w = l.validate().unwrap();
        assert_eq!(
            w,
            vec![LayoutWarning::Overlap {
                first: 0,
                second: 1,
                pixels: 4 * 8
            }]
        );
    }

    #[test]
    fn pole_warns() {
        let l = Layout::new(grid(), "bg").with_region(rect(4, 0, 14, 5), "kite");
        assert_eq!(
            l.validate().unwrap(),
            vec![LayoutWarning::TouchesPole { object_id: 0, row: 0 }]
        );
    }

    #[test]
    fn hard_errors() {
        let wrong = Layout::new(grid(), "bg").with_region(BinaryMask::ones(32, 16), "x");
        assert!(matches!(wrong.validate(), Err(Error::Shape(_))));
        let empty = Layout::new(grid(), "bg").with_region(BinaryMask::zeros(64, 32), "x");
        assert!(empty.validate().is_err());
        let mut many = two_animals()
            .with_region(rect(50, 3, 52, 5), "c")
            .with_region(rect(55, 3, 57, 5), "d");
        assert!(many.validate().is_err());
        many.max_regions = 4;
        assert!(many.validate().is_ok());
        let mut dup = two_animals();
        dup.regions[1].object_id = 0;
        assert!(dup.validate().is_err());
    }

    #[test]
    fn validate_is_idempotent() {
        let l = Layout::new(grid(), "bg")
            .with_region(rect(4, 0, 14, 20), "a")
            .with_region(rect(10, 12, 20, 22), "b");
        let before = l.clone();
        assert_eq!(l.validate().unwrap(), l.validate().unwrap());
        assert_eq!(l, before);
    }

    #[test]
    fn global_prompt_variants() {
        let mut l = two_animals();
        assert_eq!(l.effective_global_prompt(None), "a green field");
        l.include_objects_in_global = true;
        let p = l.effective_global_prompt(None);
        assert!(p.contains("cow") && p.contains("sheep"));
        assert!(l
            .effective_global_prompt(Some(PANORAMA_TRIGGER))
            .starts_with("360-degree panoramic image"));
    }

    #[test]
    fn background_covers_everything() {
        let l = two_animals();
        let bg = l.background_region(None);
        assert_eq!(bg.mask.count(), 64 * 32);
        assert_eq!(Layout::new(grid(), "x").paths(None).len(), 1);
        let l3 = two_animals().with_region(rect(50, 3, 52, 5), "c");
        assert_eq!(l3.paths(None).len(), 4);
        // coverage >= 1 everywhere
        let paths = l3.paths(None);
        for i in 0..64 * 32 {
            assert!(paths.iter().map(|p| u32::from(p.mask.values()[i])).sum::<u32>() >= 1);
        }
    }

    #[test]
    fn lora_modes_set_triggers() {
        let l = two_animals().with_lora_mode(LoraMode::BgOnly);
        let p = l.paths(Some(PANORAMA_TRIGGER));
        assert!(p[0].prompt.starts_with(PANORAMA_TRIGGER) && p[0].lora);
        assert_eq!(p[1].prompt, "cow");
        let p = two_animals().with_lora_mode(LoraMode::Yes).paths(Some(PANORAMA_TRIGGER));
        assert!(p.iter().all(|q| q.prompt.starts_with(PANORAMA_TRIGGER)));
        let p = two_animals().with_lora_mode(LoraMode::No).paths(Some(PANORAMA_TRIGGER));
        assert!(p.iter().all(|q| !q.prompt.contains(PANORAMA_TRIGGER)));
    }

    #[test]
    fn select_regions_by_index() {
        let l = two_animals();
        let s = l.select_regions(&[1]).unwrap();
        assert_eq!(s.regions.len(), 1);
        assert_eq!(s.regions[0].prompt, "sheep");
        assert!(l.select_regions(&[2]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut l = two_animals().with_lora_mode(LoraMode::Yes);
        l.include_objects_in_global = true;
        let p = l.save(dir.path(), "scene").unwrap();
        assert_eq!(Layout::load(&p).unwrap(), l);
    }

    #[test]
    fn non_binary_png_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::GrayImage::from_fn(64, 32, |x, _| image::Luma([if x < 3 { 128 } else { 0 }]));
        img.save(dir.path().join("m.png")).unwrap();
        let f = serde_json::json!({
            "background_prompt": "bg",
            "regions": [{"mask_png_path": "m.png", "prompt": "x"}]
        });
        std::fs::write(dir.path().join("l.json"), f.to_string()).unwrap();
        assert!(Layout::load(dir.path().join("l.json")).is_err());
    }
}
