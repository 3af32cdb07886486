//! Region-controlled panorama generation on top of a pluggable diffusion
//! denoiser: sphere geometry, layouts, region fusion, the sliding-window
//! stitching pipeline (MSTD), the dual-branch pipeline (MPF), the benchmark
//! dataset and evaluation.

pub mod backend;
pub mod config;
pub mod dsynview;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod geom;
pub mod layout;
pub mod mpf;
pub mod mstd;
pub mod runner;
pub mod seed;
pub mod sweep;

pub use backend::{Codec, Denoiser, LatentTensor, MockCodec, MockDenoiser, Scheduler, Shape};
pub use config::{MdMode, Pipeline, PipelineConfig};
pub use error::{Error, Result};
pub use fusion::{Coupling, Engine, StepStats};
pub use geom::{BinaryMask, CameraPose, ErpGrid, PixelBox, SphericalCoord};
pub use layout::{Layout, LoraMode, RegionSpec};
pub use runner::{run_pipeline, Backend, BackendSpec, RunOutput};
