//! The DSynView benchmark: six scenes of three objects each, mask variants,
//! seeds and the job lists for panoramas, perspective crops and reference images.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{
    erp_to_spherical, gnomonic_project, project_mask_erp_to_persp, projected_center_bounds, reproject_bounds_to_erp, BinaryMask, CameraPose,
    ErpGrid, PixelBox,
};
use crate::layout::Layout;

pub const BACKGROUNDS: [&str; 3] = ["an indoor room", "a green field", "a busy street"];

/// Object prompts indexed `[background][slot][mask set]`.
pub const OBJECT_PROMPTS: [[[&str; 2]; 3]; 3] = [
    [["table", "bed"], ["television", "potted plant"], ["wardrobe", "door"]],
    [["cow", "sheep"], ["cat", "pond"], ["tree", "windmill"]],
    [["bus", "car"], ["sign", "bicycle"], ["building", "traffic light"]],
];

pub const MASK_SETS: [u8; 2] = [1, 2];
pub const DEFAULT_SEEDS: usize = 168;
/// FoV of the camera used to re-project masks and to frame reference views.
pub const REPROJECT_FOV_DEG: f64 = 120.0;
pub const PLACEMENTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum MaskSize {
    S,
    #[default]
    M,
    L,
}

impl MaskSize {
    pub const ALL: [MaskSize; 3] = [MaskSize::S, MaskSize::M, MaskSize::L];

    /// Side length scale relative to `S`; areas go 1 : 2 : 4.
    pub fn linear_scale(self) -> f64 {
        match self {
            MaskSize::S => 1.0,
            MaskSize::M => SQRT_2,
            MaskSize::L => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    Regular,
    #[default]
    ErpReproj,
}

impl MaskType {
    pub const ALL: [MaskType; 2] = [MaskType::Regular, MaskType::ErpReproj];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Long,
    Square,
    Tall,
}

/// Where an object slot sits on the canvas, as fractions of the ERP size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotPlacement {
    pub aspect: Aspect,
    pub center_u: f64,
    pub center_v: f64,
    /// Width and height of the `S` mask as fractions of the ERP width.
    pub width_frac: f64,
    pub height_frac: f64,
}

/// Versioned canonical mask placements, per mask set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placements {
    pub version: u32,
    pub sets: BTreeMap<u8, [SlotPlacement; 3]>,
}

impl Default for Placements {
    fn default() -> Self {
        let long = (3.0 / 32.0, 1.0 / 32.0);
        let square = (3.0 / 64.0, 3.0 / 64.0);
        let tall = (1.0 / 32.0, 3.0 / 32.0);
        let slot = |aspect, (w, h): (f64, f64), u| SlotPlacement {
            aspect,
            center_u: u,
            center_v: 0.5,
            width_frac: w,
            height_frac: h,
        };
        let mut sets = BTreeMap::new();
        sets.insert(
            1,
            [
                slot(Aspect::Long, long, 1.0 / 6.0),
                slot(Aspect::Square, square, 0.5),
                slot(Aspect::Tall, tall, 5.0 / 6.0),
            ],
        );
        // second set mirrors the slot order
        sets.insert(
            2,
            [
                slot(Aspect::Long, long, 5.0 / 6.0),
                slot(Aspect::Square, square, 0.5),
                slot(Aspect::Tall, tall, 1.0 / 6.0),
            ],
        );
        Self {
            version: PLACEMENTS_VERSION,
            sets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub background: usize,
    pub background_prompt: String,
    pub object_prompts: Vec<String>,
    pub mask_size: MaskSize,
    pub mask_type: MaskType,
    pub mask_set: u8,
}

impl SceneSpec {
    pub fn new(background: usize, mask_set: u8, mask_size: MaskSize, mask_type: MaskType) -> Result<Self> {
        let set = MASK_SETS
            .iter()
            .position(|&s| s == mask_set)
            .ok_or_else(|| Error::Config(format!("mask set {mask_set} not in {MASK_SETS:?}")))?;
        let bg = *BACKGROUNDS
            .get(background)
            .ok_or_else(|| Error::Config(format!("background index {background} out of range")))?;
        Ok(Self {
            background,
            background_prompt: bg.to_string(),
            object_prompts: OBJECT_PROMPTS[background].iter().map(|p| p[set].to_string()).collect(),
            mask_size,
            mask_type,
            mask_set,
        })
    }

    /// Stable id of the (background, mask set) pair, e.g. `green_field-2`.
    pub fn scene_id(&self) -> String {
        let bg = self.background_prompt.trim_start_matches("an ").trim_start_matches("a ");
        format!("{}-{}", bg.replace(' ', "_"), self.mask_set)
    }

    pub fn variant_id(&self) -> String {
        let t = match self.mask_type {
            MaskType::Regular => "regular",
            MaskType::ErpReproj => "erp",
        };
        format!("{}-{:?}-{t}", self.scene_id(), self.mask_size)
    }
}

/// The six benchmark scenes for one mask variant.
pub fn scenes(mask_size: MaskSize, mask_type: MaskType) -> Vec<SceneSpec> {
    (0..BACKGROUNDS.len())
        .flat_map(|b| MASK_SETS.iter().map(move |&s| (b, s)))
        .map(|(b, s)| SceneSpec::new(b, s, mask_size, mask_type).expect("indices in range"))
        .collect()
}

fn regular_rect(p: &SlotPlacement, size: MaskSize, grid: ErpGrid) -> PixelBox {
    let w = grid.width() as f64;
    let k = size.linear_scale();
    let bw = (p.width_frac * w * k).round();
    let bh = (p.height_frac * w * k).round();
    let x0 = (p.center_u * w - bw / 2.0).round().max(0.0) as usize;
    let y0 = (p.center_v * grid.height() as f64 - bh / 2.0).round().max(0.0) as usize;
    PixelBox {
        x0,
        y0,
        x1: (x0 + bw as usize).min(grid.width()),
        y1: (y0 + bh as usize).min(grid.height()),
    }
}

/// Regular or re-projected masks of a scene, one per object slot.
pub fn build_masks(scene: &SceneSpec, grid: ErpGrid, placements: &Placements) -> Result<Vec<BinaryMask>> {
    let slots = placements
        .sets
        .get(&scene.mask_set)
        .ok_or_else(|| Error::Config(format!("no placements for mask set {}", scene.mask_set)))?;
    let regular: Vec<BinaryMask> = slots
        .iter()
        .map(|p| BinaryMask::rect(grid.width(), grid.height(), regular_rect(p, scene.mask_size, grid)))
        .collect();
    match scene.mask_type {
        MaskType::Regular => Ok(regular),
        MaskType::ErpReproj => erp_reproject_masks(&regular, grid),
    }
}

/// Camera looking at the center of a mask's bounding box.
pub fn mask_camera(mask: &BinaryMask, grid: ErpGrid, fov_deg: f64, image_size: usize) -> Result<CameraPose> {
    let b = mask
        .bbox()
        .ok_or_else(|| Error::Domain("cannot center a camera on an empty mask".into()))?;
    let u = (b.x0 + b.x1) as f64 / 2.0;
    let v = (b.y0 + b.y1) as f64 / 2.0;
    let c = erp_to_spherical(u, v, grid)?;
    if c.lat.abs() > 80f64.to_radians() {
        return Err(Error::Domain(format!(
            "mask centered at latitude {:.1} deg is too close to a pole; move it towards the equator",
            c.lat.to_degrees()
        )));
    }
    CameraPose::new(c.lon, c.lat, 0.0, fov_deg.to_radians(), image_size)
}

/// Re-projects each mask through a 120° view centered on it: the projected
/// mask's bounding box is drawn back onto an empty ERP canvas.
pub fn erp_reproject_masks(masks: &[BinaryMask], grid: ErpGrid) -> Result<Vec<BinaryMask>> {
    masks
        .iter()
        .map(|m| {
            if m.dims() != (grid.width(), grid.height()) {
                return Err(Error::Shape(format!("mask {:?} is not on the {grid:?} grid", m.dims())));
            }
            let cam = mask_camera(m, grid, REPROJECT_FOV_DEG, grid.height())?;
            ensure_fully_visible(m, &cam, grid)?;
            // bounds of the projected pixel centers rather than of the sampled
            // view raster: the raster box is snapped outward to whole view
            // pixels and would grow the mask on every application
            let b = projected_center_bounds(m, &cam)?
                .ok_or_else(|| Error::Domain("mask vanished in its reference view".into()))?;
            Ok(reproject_bounds_to_erp(b, &cam, grid))
        })
        .collect()
}

fn ensure_fully_visible(mask: &BinaryMask, cam: &CameraPose, grid: ErpGrid) -> Result<()> {
    let n = cam.image_size() as f64;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            let s = erp_to_spherical(x as f64 + 0.5, y as f64 + 0.5, grid)?;
            match gnomonic_project(s, cam) {
                Some((px, py)) if (0.0..=n).contains(&px) && (0.0..=n).contains(&py) => {}
                _ => {
                    return Err(Error::Domain(
                        "mask does not fit in a 120 degree view around its center; use a smaller mask or move it towards the equator".into(),
                    ))
                }
            }
        }
    }
    Ok(())
}

/// Layout of a benchmark scene.
pub fn scene_layout(scene: &SceneSpec, grid: ErpGrid, placements: &Placements) -> Result<Layout> {
    let masks = build_masks(scene, grid, placements)?;
    let mut layout = Layout::new(grid, scene.background_prompt.clone());
    for (m, p) in masks.into_iter().zip(&scene.object_prompts) {
        layout = layout.with_region(m, p.clone());
    }
    Ok(layout)
}

/// Centered box of the object in its reference view, in view pixels.
pub fn centered_target_box(mask: &BinaryMask, grid: ErpGrid, view_size: usize) -> Result<PixelBox> {
    let cam = mask_camera(mask, grid, REPROJECT_FOV_DEG, view_size)?;
    let view = project_mask_erp_to_persp(mask, &cam)?;
    let b = view
        .bbox()
        .ok_or_else(|| Error::Domain("mask vanished in its reference view".into()))?;
    let (w, h) = (b.x1 - b.x0, b.y1 - b.y0);
    let x0 = (view_size - w) / 2;
    let y0 = (view_size - h) / 2;
    Ok(PixelBox {
        x0,
        y0,
        x1: x0 + w,
        y1: y0 + h,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub grid: ErpGrid,
    pub n_seeds: usize,
    pub seed_base: u64,
    /// Mask variant of the panorama entries.
    pub mask_size: MaskSize,
    pub mask_type: MaskType,
    /// Pixel size of reference views.
    pub view_size: usize,
    pub placements: Placements,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            grid: ErpGrid::default(),
            n_seeds: DEFAULT_SEEDS,
            seed_base: 0,
            mask_size: MaskSize::M,
            mask_type: MaskType::ErpReproj,
            view_size: 512,
            placements: Placements::default(),
        }
    }
}

impl DatasetConfig {
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.seed_base + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaEntry {
    pub scene_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub paths: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveEntry {
    pub scene_id: String,
    pub seed: u64,
    pub object_index: usize,
    pub prompt: String,
    pub config_hash: String,
    pub paths: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceJob {
    pub scene_id: String,
    pub background_prompt: String,
    pub prompt: String,
    pub seed: u64,
    pub mask_size: MaskSize,
    pub mask_type: MaskType,
    pub view_size: usize,
    pub target_box: PixelBox,
    pub config_hash: String,
    pub paths: BTreeMap<String, PathBuf>,
}

/// How the reference job count is composed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factorization {
    pub used: String,
    pub alternative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub config: DatasetConfig,
    pub config_hash: String,
    pub scenes: Vec<SceneSpec>,
    pub seeds: Vec<u64>,
    pub panoramas: Vec<PanoramaEntry>,
    pub perspectives: Vec<PerspectiveEntry>,
    pub reference_jobs: Vec<ReferenceJob>,
    pub factorization: Factorization,
}

fn mask_file(scene: &SceneSpec, slot: usize) -> PathBuf {
    PathBuf::from("masks").join(format!("{}-{slot}.png", scene.variant_id()))
}

fn layout_file(scene: &SceneSpec) -> PathBuf {
    PathBuf::from("layouts").join(format!("{}.json", scene.variant_id()))
}

/// Job lists of the benchmark. Paths are relative to the dataset root.
pub fn build_manifest(config: &DatasetConfig) -> Result<BenchmarkManifest> {
    let hash = config.hash();
    let seeds = config.seeds();
    let main = scenes(config.mask_size, config.mask_type);
    let mut panoramas = Vec::with_capacity(main.len() * seeds.len());
    let mut perspectives = Vec::with_capacity(main.len() * seeds.len() * 3);
    for scene in &main {
        for &seed in &seeds {
            let dir = PathBuf::from("panoramas").join(scene.variant_id());
            panoramas.push(PanoramaEntry {
                scene_id: scene.scene_id(),
                seed,
                config_hash: hash.clone(),
                paths: BTreeMap::from([
                    ("layout".to_string(), layout_file(scene)),
                    ("image".to_string(), dir.join(format!("{seed:04}.png"))),
                ]),
            });
            for (k, prompt) in scene.object_prompts.iter().enumerate() {
                perspectives.push(PerspectiveEntry {
                    scene_id: scene.scene_id(),
                    seed,
                    object_index: k,
                    prompt: prompt.clone(),
                    config_hash: hash.clone(),
                    paths: BTreeMap::from([
                        ("panorama".to_string(), dir.join(format!("{seed:04}.png"))),
                        ("mask".to_string(), mask_file(scene, k)),
                        ("image".to_string(), dir.join(format!("{seed:04}-obj{k}.png"))),
                    ]),
                });
            }
        }
    }
    let mut reference_jobs = Vec::new();
    for &size in &MaskSize::ALL {
        for &ty in &MaskType::ALL {
            for scene in scenes(size, ty) {
                let masks = build_masks(&scene, config.grid, &config.placements)?;
                for (k, (mask, prompt)) in masks.iter().zip(&scene.object_prompts).enumerate() {
                    let target_box = centered_target_box(mask, config.grid, config.view_size)?;
                    for &seed in &seeds {
                        reference_jobs.push(ReferenceJob {
                            scene_id: scene.scene_id(),
                            background_prompt: scene.background_prompt.clone(),
                            prompt: prompt.clone(),
                            seed,
                            mask_size: size,
                            mask_type: ty,
                            view_size: config.view_size,
                            target_box,
                            config_hash: hash.clone(),
                            paths: BTreeMap::from([(
                                "image".to_string(),
                                PathBuf::from("references")
                                    .join(scene.variant_id())
                                    .join(format!("obj{k}-{seed:04}.png")),
                            )]),
                        });
                    }
                }
            }
        }
    }
    Ok(BenchmarkManifest {
        config: config.clone(),
        config_hash: hash,
        scenes: main,
        seeds,
        panoramas,
        perspectives,
        reference_jobs,
        factorization: Factorization {
            used: "18 prompts x seeds x 3 mask sizes x 2 mask types".into(),
            alternative: "perspective entries x 6 (3 mask sizes x 2 mask types)".into(),
        },
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes masks, layouts, placements and the three JSON-lines job lists under `root`.
pub fn write_dataset(config: &DatasetConfig, root: impl AsRef<Path>) -> Result<BenchmarkManifest> {
    let root = root.as_ref();
    let manifest = build_manifest(config)?;
    for sub in ["masks", "layouts"] {
        let d = root.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for &size in &MaskSize::ALL {
        for &ty in &MaskType::ALL {
            for scene in scenes(size, ty) {
                let layout = scene_layout(&scene, config.grid, &config.placements)?;
                for (k, r) in layout.regions.iter().enumerate() {
                    r.mask.save_png(root.join(mask_file(&scene, k)))?;
                }
                layout.save(root.join("layouts"), &scene.variant_id())?;
            }
        }
    }
    let placements = root.join("placements.json");
    std::fs::write(&placements, serde_json::to_string_pretty(&config.placements)?)
        .map_err(|e| Error::io(&placements, e))?;
    write_jsonl(&root.join("panoramas.jsonl"), &manifest.panoramas)?;
    write_jsonl(&root.join("perspectives.jsonl"), &manifest.perspectives)?;
    write_jsonl(&root.join("references.jsonl"), &manifest.reference_jobs)?;
    let summary = serde_json::json!({
        "config": manifest.config,
        "config_hash": manifest.config_hash,
        "scenes": manifest.scenes,
        "counts": {
            "panoramas": manifest.panoramas.len(),
            "perspectives": manifest.perspectives.len(),
            "reference_jobs": manifest.reference_jobs.len(),
        },
        "factorization": manifest.factorization,
    });
    let p = root.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}
