//! Single-run plumbing: backend selection, pipeline dispatch and artifacts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backend::{AdapterDenoiser, DdimScheduler, Denoiser, MockCodec, MockDenoiser};
use crate::config::{Pipeline, PipelineConfig};
use crate::error::{Error, Result};
use crate::fusion::{Engine, StepStats};
use crate::geom::CameraPose;
use crate::layout::Layout;
use crate::mpf::mpf_sample;
use crate::mstd::mstd_sample;

/// `mock` or `adapter:<host:port>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Mock,
    Adapter(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "mock" => Ok(Self::Mock),
            Some(("adapter", ep)) if !ep.is_empty() => Ok(Self::Adapter(ep.to_string())),
            _ => Err(Error::Config(format!("unknown backend `{s}`; expected mock or adapter:<endpoint>"))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mock => f.write_str("mock"),
            Self::Adapter(ep) => write!(f, "adapter:{ep}"),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

/// Owned denoiser, scheduler and codec for one step count.
pub struct Backend {
    denoiser: Box<dyn Denoiser>,
    scheduler: DdimScheduler,
    codec: MockCodec,
}

impl Backend {
    pub fn new(spec: &BackendSpec, steps: usize) -> Result<Self> {
        let denoiser: Box<dyn Denoiser> = match spec {
            BackendSpec::Mock => Box::new(MockDenoiser::default()),
            BackendSpec::Adapter(ep) => Box::new(AdapterDenoiser::new(ep.clone())),
        };
        Ok(Self {
            denoiser,
            scheduler: DdimScheduler::with_steps(steps)?,
            codec: MockCodec::default(),
        })
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine {
            denoiser: self.denoiser.as_ref(),
            scheduler: &self.scheduler,
            codec: &self.codec,
        }
    }
}

/// Decoded images of one run: the panorama, plus 20 views for MPF.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub panorama: RgbImage,
    pub views: Vec<RgbImage>,
    pub poses: Vec<CameraPose>,
    pub stats: StepStats,
}

/// Runs the pipeline selected by `config.pipeline`.
pub fn run_pipeline(layout: &Layout, config: &PipelineConfig, engine: Engine<'_>, seed: u64) -> Result<RunOutput> {
    match config.pipeline {
        Pipeline::Mstd => {
            let out = mstd_sample(layout, config, engine, seed)?;
            Ok(RunOutput {
                panorama: out.image,
                views: Vec::new(),
                poses: Vec::new(),
                stats: out.stats,
            })
        }
        Pipeline::Mpf => {
            let out = mpf_sample(layout, config, engine, seed)?;
            Ok(RunOutput {
                panorama: out.pano_image,
                views: out.view_images,
                poses: out.poses,
                stats: out.stats,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub pipeline: Pipeline,
    pub backend: BackendSpec,
    pub seed: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Relative to the manifest's directory; the panorama comes first.
    pub images: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub poses: Vec<CameraPose>,
    pub stats: StepStats,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `panorama.png`, `view_XX.png` and `manifest.json` into `dir`.
pub fn write_run(
    out: &RunOutput,
    config: &PipelineConfig,
    backend: &BackendSpec,
    seed: u64,
    dir: &Path,
) -> Result<RunManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = vec![PathBuf::from("panorama.png")];
    images.extend((0..out.views.len()).map(|i| PathBuf::from(format!("view_{i:02}.png"))));
    for (name, img) in images.iter().zip(std::iter::once(&out.panorama).chain(&out.views)) {
        img.save(dir.join(name))?;
    }
    let manifest = RunManifest {
        pipeline: config.pipeline,
        backend: backend.clone(),
        seed,
        config_hash: config.hash(),
        config: config.clone(),
        images,
        poses: out.poses.clone(),
        stats: out.stats,
    };
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
