//! Pipeline configuration shared by both pipelines, the sweep runner and the CLI.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsynview::{MaskSize, MaskType};
use crate::error::{Error, Result};
use crate::fusion::Coupling;
use crate::layout::{Layout, LoraMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    #[default]
    Mstd,
    Mpf,
}

/// Which branches of the dual-branch pipeline receive region paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdMode {
    #[default]
    MdPano,
    MdPers,
    MdBoth,
}

impl MdMode {
    pub fn pano(self) -> bool {
        matches!(self, MdMode::MdPano | MdMode::MdBoth)
    }

    pub fn pers(self) -> bool {
        matches!(self, MdMode::MdPers | MdMode::MdBoth)
    }

    /// Number of branches that run region paths.
    pub fn branches(self) -> usize {
        usize::from(self.pano()) + usize::from(self.pers())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: Pipeline,
    /// Number of sampling steps.
    pub steps: usize,
    /// Bootstrap steps `B`.
    pub bootstrap: usize,
    /// Window stride in latent columns.
    pub stride: usize,
    /// Window width in latent columns; defaults to the latent height.
    pub window: Option<usize>,
    pub stitch: bool,
    /// Used when layouts are built from the benchmark scenes.
    pub mask_size: MaskSize,
    pub mask_type: MaskType,
    /// Subset of regions to keep; all when absent.
    pub mask_indices: Option<Vec<usize>>,
    /// Overrides the layout's LoRA flags when set.
    pub lora: Option<LoraMode>,
    /// Defaults to `none` for MSTD and `branches` for MPF.
    pub bootstrap_coupling: Option<Coupling>,
    pub noise_coupling: bool,
    /// Overrides the layout's include-objects-in-global flag when set.
    pub global_prompt: Option<bool>,
    pub fg_eppa: bool,
    pub md_mode: MdMode,
    /// Master switch of the branch exchange.
    pub eppa: bool,
    /// Width of the exchange's footprint weighting, relative to the view half-size.
    pub eppa_sigma: f64,
    pub view_fov_deg: f64,
    /// Perspective latent size in cells; defaults to half the panorama latent height.
    pub view_size: Option<usize>,
    pub rotate: bool,
    pub rotation_seed: Option<u64>,
    pub circular_padding: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pipeline: Pipeline::Mstd,
            steps: 50,
            bootstrap: 20,
            stride: 8,
            window: None,
            stitch: true,
            mask_size: MaskSize::M,
            mask_type: MaskType::ErpReproj,
            mask_indices: None,
            lora: None,
            bootstrap_coupling: None,
            noise_coupling: true,
            global_prompt: None,
            fg_eppa: true,
            md_mode: MdMode::MdPano,
            eppa: true,
            eppa_sigma: 0.5,
            view_fov_deg: 90.0,
            view_size: None,
            rotate: true,
            rotation_seed: None,
            circular_padding: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn mpf() -> Self {
        Self {
            pipeline: Pipeline::Mpf,
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.bootstrap > self.steps {
            return Err(Error::Config(format!(
                "bootstrap {} exceeds steps {}",
                self.bootstrap, self.steps
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if let Some(w) = self.window {
            if self.stride > w {
                return Err(Error::Config(format!("stride {} exceeds window {w}", self.stride)));
            }
        }
        if !(self.view_fov_deg > 0.0 && self.view_fov_deg < 180.0) {
            return Err(Error::Config(format!("view fov {} out of range", self.view_fov_deg)));
        }
        if !(self.eppa_sigma > 0.0 && self.eppa_sigma.is_finite()) {
            return Err(Error::Config("eppa_sigma must be positive".into()));
        }
        Ok(())
    }

    /// LoRA default of the pipeline: background only for MSTD, everywhere for MPF.
    pub fn lora_mode(&self) -> LoraMode {
        self.lora.unwrap_or(match self.pipeline {
            Pipeline::Mstd => LoraMode::BgOnly,
            Pipeline::Mpf => LoraMode::Yes,
        })
    }

    pub fn coupling(&self) -> Coupling {
        self.bootstrap_coupling.unwrap_or(match self.pipeline {
            Pipeline::Mstd => Coupling::None,
            Pipeline::Mpf => Coupling::Branches,
        })
    }

    /// Applies the layout-level overrides of this config.
    pub fn apply_to_layout(&self, layout: &Layout) -> Result<Layout> {
        let mut l = match &self.mask_indices {
            Some(idx) => layout.select_regions(idx)?,
            None => layout.clone(),
        };
        if let Some(mode) = self.lora {
            l = l.with_lora_mode(mode);
        }
        if let Some(g) = self.global_prompt {
            l.include_objects_in_global = g;
        }
        Ok(l)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
