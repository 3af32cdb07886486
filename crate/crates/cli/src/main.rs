//! `panodense` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use panodense_core::dsynview::{MaskSize, MaskType};
use panodense_core::evalkit::IouMode;
use panodense_core::runner::BackendSpec;

const EXIT_BAD_INPUT: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "panodense", version, about = "Region-controlled 360° panorama generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// `mock` or `adapter:<host:port>`.
    #[arg(long, default_value = "mock")]
    backend: BackendSpec,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline on a layout and write the images with a manifest.
    Generate {
        #[arg(long)]
        layout: PathBuf,
        /// Pipeline config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run a hyperparameter sweep over the benchmark scenes.
    Sweep {
        /// Sweep spec JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue a sweep already present in `--out`.
        #[arg(long)]
        resume: bool,
        #[arg(long, value_enum, default_value = "panorama")]
        iou_mode: IouModeArg,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Write the benchmark's masks, layouts and manifests.
    MakeDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Panorama height in pixels.
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, value_enum, default_value = "m")]
        mask_size: MaskSizeArg,
        #[arg(long, value_enum, default_value = "erp-reproj")]
        mask_type: MaskTypeArg,
    },
    /// Project a layout's masks into views centered on each object.
    ProjectMasks {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120.0)]
        fov_deg: f64,
        #[arg(long, default_value_t = 512)]
        view_size: usize,
        /// Also write a layout whose masks are the view bounding boxes drawn back onto ERP.
        #[arg(long)]
        reproject: bool,
    },
    /// Score images against a layout.
    Evaluate {
        #[arg(long)]
        layout: PathBuf,
        /// Images to score; the first is the panorama used for IoU.
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        /// JSON list of detections for the panorama; otherwise the `detector` plugin is used.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Reference images for distribution metrics.
        #[arg(long, num_args = 1..)]
        refs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "panorama")]
        iou_mode: IouModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the mock denoiser over the adapter wire protocol.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:7450")]
        listen: String,
        /// Stop after this many connections.
        #[arg(long)]
        max_connections: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum IouModeArg {
    Panorama,
    View,
}

impl From<IouModeArg> for IouMode {
    fn from(m: IouModeArg) -> Self {
        match m {
            IouModeArg::Panorama => IouMode::Panorama,
            IouModeArg::View => IouMode::View,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MaskSizeArg {
    S,
    M,
    L,
}

impl From<MaskSizeArg> for MaskSize {
    fn from(m: MaskSizeArg) -> Self {
        match m {
            MaskSizeArg::S => MaskSize::S,
            MaskSizeArg::M => MaskSize::M,
            MaskSizeArg::L => MaskSize::L,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MaskTypeArg {
    Regular,
    ErpReproj,
}

impl From<MaskTypeArg> for MaskType {
    fn from(m: MaskTypeArg) -> Self {
        match m {
            MaskTypeArg::Regular => MaskType::Regular,
            MaskTypeArg::ErpReproj => MaskType::ErpReproj,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use panodense_core::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::Backend(_)) => EXIT_BACKEND,
        Some(_) => EXIT_BAD_INPUT,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
