use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use panodense_core::backend::wire::serve;
use panodense_core::backend::MockDenoiser;
use panodense_core::dsynview::{erp_reproject_masks, mask_camera, write_dataset, DatasetConfig};
use panodense_core::evalkit::{layout_iou, DetectionRecord, IouMode, Metric, MetricRow, ScorerRegistry};
use panodense_core::geom::{project_mask_erp_to_persp, CameraPose};
use panodense_core::runner::{run_pipeline, write_run, Backend};
use panodense_core::sweep::{run_sweep, SweepOptions, SweepSpec};
use panodense_core::{ErpGrid, Layout, PipelineConfig};
use serde::Serialize;

use crate::{BackendArgs, Command};

fn cache_dir(out: &Path) -> PathBuf {
    out.join(".score-cache")
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n.max(1));
    }
    Ok(b.build()?)
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            layout,
            config,
            seed,
            out,
            backend,
        } => generate(&layout, config.as_deref(), seed, &out, &backend),
        Command::Sweep {
            config,
            out,
            resume,
            iou_mode,
            backend,
        } => {
            let spec = SweepSpec::load(&config)?;
            let workers = backend.workers.unwrap_or_else(rayon::current_num_threads);
            let opts = SweepOptions {
                backend: backend.backend,
                workers,
                resume,
                scorers: ScorerRegistry::from_env(cache_dir(&out)),
                iou_mode: iou_mode.into(),
            };
            let report = run_sweep(&spec, &opts, &out)?;
            println!(
                "{} runs executed, {} already done, {} failed; tables in {}",
                report.executed,
                report.skipped,
                report.failed,
                out.join("tables").display()
            );
            Ok(())
        }
        Command::MakeDataset {
            out,
            seeds,
            seed,
            height,
            mask_size,
            mask_type,
        } => {
            let d = DatasetConfig::default();
            let cfg = DatasetConfig {
                grid: ErpGrid::with_height(height)?,
                n_seeds: seeds.unwrap_or(d.n_seeds),
                seed_base: seed,
                mask_size: mask_size.into(),
                mask_type: mask_type.into(),
                ..d
            };
            let m = write_dataset(&cfg, &out)?;
            println!(
                "{} panoramas, {} perspectives, {} reference jobs in {}",
                m.panoramas.len(),
                m.perspectives.len(),
                m.reference_jobs.len(),
                out.display()
            );
            Ok(())
        }
        Command::ProjectMasks {
            layout,
            out,
            fov_deg,
            view_size,
            reproject,
        } => project_masks(&layout, &out, fov_deg, view_size, reproject),
        Command::Evaluate {
            layout,
            images,
            detections,
            refs,
            iou_mode,
            out,
        } => evaluate(&layout, &images, detections.as_deref(), &refs, iou_mode.into(), &out),
        Command::ServeMock {
            listen,
            max_connections,
        } => {
            let listener = std::net::TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("serving the mock denoiser on {}", listener.local_addr()?);
            serve(listener, std::sync::Arc::new(MockDenoiser::default()), max_connections)?;
            Ok(())
        }
    }
}

fn generate(layout: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path, b: &BackendArgs) -> Result<()> {
    let layout = Layout::load(layout)?;
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    for w in layout.validate()? {
        eprintln!("warning: {w}");
    }
    let backend = Backend::new(&b.backend, cfg.steps)?;
    let output = pool(b.workers)?.install(|| run_pipeline(&layout, &cfg, backend.engine(), cfg.seed))?;
    let manifest = write_run(&output, &cfg, &b.backend, cfg.seed, out)?;
    println!(
        "wrote {} images to {} (config {})",
        manifest.images.len(),
        out.display(),
        &manifest.config_hash[..12]
    );
    Ok(())
}

#[derive(Serialize)]
struct ViewRecord {
    object_id: u32,
    mask: PathBuf,
    camera: CameraPose,
}

fn project_masks(layout: &Path, out: &Path, fov_deg: f64, view_size: usize, reproject: bool) -> Result<()> {
    let layout = Layout::load(layout)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut views = Vec::new();
    for r in &layout.regions {
        let cam = mask_camera(&r.mask, layout.grid, fov_deg, view_size)?;
        let view = project_mask_erp_to_persp(&r.mask, &cam)?;
        let name = PathBuf::from(format!("view_mask{}.png", r.object_id));
        view.save_png(out.join(&name))?;
        views.push(ViewRecord {
            object_id: r.object_id,
            mask: name,
            camera: cam,
        });
    }
    std::fs::write(out.join("views.json"), serde_json::to_string_pretty(&views)?)?;
    if reproject {
        let masks: Vec<_> = layout.regions.iter().map(|r| r.mask.clone()).collect();
        let mut l = layout.clone();
        for (r, m) in l.regions.iter_mut().zip(erp_reproject_masks(&masks, layout.grid)?) {
            r.mask = m;
        }
        let p = l.save(out, "reprojected")?;
        println!("wrote {}", p.display());
    }
    println!("projected {} masks into {}", views.len(), out.display());
    Ok(())
}

fn evaluate(
    layout: &Path,
    images: &[PathBuf],
    detections: Option<&Path>,
    refs: &[PathBuf],
    mode: IouMode,
    out: &Path,
) -> Result<()> {
    let layout = Layout::load(layout)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let scorers = ScorerRegistry::from_env(cache_dir(out));
    let dets: Option<Vec<DetectionRecord>> = match detections {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).map_err(panodense_core::Error::from)?)
        }
        None => {
            let objects: Vec<(u32, String)> = layout.regions.iter().map(|r| (r.object_id, r.prompt.clone())).collect();
            scorers.detect(&images[..1], &objects)?.map(|mut d| d.swap_remove(0))
        }
    };
    let mut row = MetricRow {
        config_id: "evaluate".into(),
        ..Default::default()
    };
    if let Some(d) = dets {
        row.iou = Some(layout_iou(&layout, &d, mode, 512)?);
    }
    scorers.score_row(&mut row, images, refs);
    for f in &row.failed {
        eprintln!("warning: scorer {f} failed");
    }
    let present: Vec<Metric> = Metric::ALL.into_iter().filter(|&m| row.get(m).is_some()).collect();
    let mut csv = present.iter().map(|m| m.id()).collect::<Vec<_>>().join(",");
    csv.push('\n');
    csv.push_str(
        &present
            .iter()
            .map(|&m| row.get(m).map(|v| v.to_string()).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(","),
    );
    csv.push('\n');
    std::fs::write(out.join("metrics.csv"), csv)?;
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&row)?)?;
    println!("scored {} of {} metrics", present.len(), Metric::ALL.len());
    Ok(())
}
