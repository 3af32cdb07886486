//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use panodense_core::backend::{
    gaussian, Branch, DdimScheduler, DenoiseContext, Denoiser, LatentTensor, MockCodec, MockDenoiser, Scheduler, Shape,
};
use panodense_core::config::{MdMode, PipelineConfig};
use panodense_core::dsynview::{build_manifest, scene_layout, scenes, DatasetConfig, MaskSize, MaskType};
use panodense_core::evalkit::{iou, BoxF, IouMode, Metric, ScorerRegistry};
use panodense_core::fusion::{
    assign_bootstrap_colors, downsample_mask, md_step, merge_paths, BootstrapPlan, Coupling, Engine, FusionPath,
    PathSet, StepStats,
};
use panodense_core::geom::{
    erp_to_spherical, extend_columns, fold_columns, gnomonic_project, gnomonic_unproject, roll_columns,
    spherical_to_erp, yaw_to_columns, BinaryMask, CameraPose, ErpGrid, PixelBox,
};
use panodense_core::layout::{Layout, PANORAMA_TRIGGER};
use panodense_core::mstd::{mstd_sample, mstd_step, prepare, WindowPlan};
use panodense_core::runner::{run_pipeline, BackendSpec, RunOutput};
use panodense_core::seed::rng;
use panodense_core::sweep::{run_sweep, SweepAxis, SweepOptions, SweepSpec};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

struct Parts {
    denoiser: MockDenoiser,
    scheduler: DdimScheduler,
    codec: MockCodec,
}

impl Parts {
    fn new(steps: usize) -> Self {
        Self {
            denoiser: MockDenoiser::default(),
            scheduler: DdimScheduler::with_steps(steps).unwrap(),
            codec: MockCodec::default(),
        }
    }

    fn engine(&self) -> Engine<'_> {
        Engine {
            denoiser: &self.denoiser,
            scheduler: &self.scheduler,
            codec: &self.codec,
        }
    }
}

fn geometry_suite() -> Outcome {
    let start = Instant::now();
    let n = 1000;
    let mut r = rng(1, &[]);

    let grid = ErpGrid::new(1024, 512).unwrap();
    let mut worst_erp = 0.0f64;
    for _ in 0..n {
        let u = r.random_range(1e-6..1024.0 - 1e-6);
        let v = r.random_range(1e-6..512.0 - 1e-6);
        let (u2, v2) = spherical_to_erp(erp_to_spherical(u, v, grid).unwrap(), grid);
        worst_erp = worst_erp.max((u2 - u).abs()).max((v2 - v).abs());
    }
    ensure!(worst_erp < 1e-9, "erp round trip error {worst_erp:e} px");

    let mut worst_gno = 0.0f64;
    for _ in 0..n {
        let size = 512;
        let cam = CameraPose::new(
            r.random_range(-PI..PI),
            r.random_range(-FRAC_PI_2..FRAC_PI_2),
            r.random_range(-PI..PI),
            r.random_range(20f64..150.0).to_radians(),
            size,
        )
        .unwrap();
        let x = r.random_range(0.5..size as f64 - 0.5);
        let y = r.random_range(0.5..size as f64 - 0.5);
        let (x2, y2) = gnomonic_project(gnomonic_unproject(x, y, &cam), &cam)
            .ok_or_else(|| "interior pixel projected behind the camera".to_string())?;
        worst_gno = worst_gno.max((x2 - x).abs()).max((y2 - y).abs());
    }
    ensure!(worst_gno < 1e-6, "gnomonic round trip error {worst_gno:e} px");

    for _ in 0..n {
        let width = r.random_range(1..64usize);
        let rows = r.random_range(1..5usize);
        let data: Vec<u32> = (0..width * rows).map(|_| r.random()).collect();
        let yaw = r.random_range(-10.0..10.0);
        let k = yaw_to_columns(yaw, width);
        let back = roll_columns(&roll_columns(&data, width, k), width, yaw_to_columns(-yaw, width));
        ensure!(back == data, "rotate/unrotate is not the identity (width {width}, yaw {yaw})");
    }

    for _ in 0..n {
        let width = r.random_range(2..64usize);
        let pad = r.random_range(0..width / 2);
        let rows = r.random_range(1..5usize);
        let data: Vec<f64> = (0..width * rows).map(|_| r.random_range(-1e3..1e3)).collect();
        let ext = extend_columns(&data, width, pad).unwrap();
        let back = fold_columns(&ext, width + 2 * pad, pad).unwrap();
        ensure!(back == data, "extend/fold is not the identity (width {width}, pad {pad})");
    }

    let took = start.elapsed();
    ensure!(took < Duration::from_secs(10), "took {took:?}");
    Ok(format!(
        "{n} samples each; erp {worst_erp:.1e} px, gnomonic {worst_gno:.1e} px, roll and fold exact, {took:.2?}"
    ))
}

fn fusion_algebra() -> Outcome {
    let s = Shape::new(4, 8, 16);
    let full = BinaryMask::ones(16, 8);
    let a = gaussian(s, 1);
    ensure!(merge_paths(std::slice::from_ref(&a), std::slice::from_ref(&full)).unwrap() == a, "identity merge");

    let left = BinaryMask::from_fn(16, 8, |x, _| x < 7);
    let right = BinaryMask::from_fn(16, 8, |x, _| x >= 7);
    let b = gaussian(s, 2);
    let m = merge_paths(&[a.clone(), b.clone()], &[left.clone(), right]).unwrap();
    for c in 0..4 {
        for y in 0..8 {
            for x in 0..16 {
                let want = if left.get(x, y) { a.get(c, y, x) } else { b.get(c, y, x) };
                ensure!(m.get(c, y, x) == want, "disjoint merge at ({c}, {y}, {x})");
            }
        }
    }

    let twos = LatentTensor::from_vec(s, vec![2.0; s.len()]).unwrap();
    let fours = LatentTensor::from_vec(s, vec![4.0; s.len()]).unwrap();
    let mean = merge_paths(&[twos, fours], &[full.clone(), full.clone()]).unwrap();
    ensure!(mean.data().iter().all(|&v| v == 3.0), "mean of 2 and 4 is not 3");

    let mut r = rng(2, &[]);
    for set in 0..100 {
        let k = r.random_range(2..6usize);
        let mut latents = vec![gaussian(s, 100 + set * 10)];
        let mut masks = vec![full.clone()];
        for j in 1..k {
            latents.push(gaussian(s, 100 + set * 10 + j as u64));
            let p: f64 = r.random_range(0.1..0.9);
            masks.push(BinaryMask::from_fn(16, 8, |_, _| r.random::<f64>() < p));
        }
        let fused = merge_paths(&latents, &masks).unwrap();
        for c in 0..4 {
            for y in 0..8 {
                for x in 0..16 {
                    let vals: Vec<f32> = latents
                        .iter()
                        .zip(&masks)
                        .filter(|(_, m)| m.get(x, y))
                        .map(|(z, _)| z.get(c, y, x))
                        .collect();
                    let lo = vals.iter().copied().fold(f32::INFINITY, f32::min);
                    let hi = vals.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let v = fused.get(c, y, x);
                    ensure!(lo <= v && v <= hi, "set {set}: {v} outside [{lo}, {hi}]");
                }
            }
        }
    }

    // every path draws the background prompt; with no bootstrapping MD must be plain sampling
    let steps = 10;
    let parts = Parts::new(steps);
    let e = parts.engine();
    let noise = gaussian(s, 7);
    let prompt = "a quiet harbor";
    let path = |mask: BinaryMask, object: Option<usize>| FusionPath {
        mask,
        prompt: prompt.into(),
        lora: true,
        object,
        noise: noise.clone(),
    };
    let paths = vec![
        path(full.clone(), None),
        path(BinaryMask::rect(16, 8, PixelBox { x0: 2, y0: 1, x1: 7, y1: 5 }), Some(0)),
        path(BinaryMask::rect(16, 8, PixelBox { x0: 5, y0: 3, x1: 14, y1: 8 }), Some(1)),
    ];
    let mut set = PathSet::new(paths, noise.clone(), steps - 1, 3).unwrap();
    let plan = BootstrapPlan {
        n_steps: 0,
        ..BootstrapPlan::disabled()
    };
    let mut stats = StepStats::default();
    let mut vanilla = noise.clone();
    let ctx = DenoiseContext {
        lora: true,
        circular: true,
        ..DenoiseContext::new(Branch::Canvas)
    };
    for t in (0..steps).rev() {
        set = md_step(&set, e, &plan, t, true, &mut stats).unwrap();
        let eps = parts.denoiser.predict(&vanilla, t, prompt, &ctx).unwrap();
        vanilla = parts.scheduler.step(&vanilla, &eps, t).unwrap();
        ensure!(set.canvas() == &vanilla, "MD diverges from vanilla sampling at t={t}");
    }
    Ok("merge identity/disjoint/mean exact, convex bound on 100 sets, MD equals vanilla over 10 steps".into())
}

fn union_mask(layout: &Layout, factor: usize) -> BinaryMask {
    let mut u = BinaryMask::zeros(layout.grid.width() / factor, layout.grid.height() / factor);
    for r in &layout.regions {
        u = u.union(&downsample_mask(&r.mask, factor).unwrap()).unwrap();
    }
    u
}

fn bootstrap_semantics() -> Outcome {
    let steps = 10;
    let parts = Parts::new(steps);
    let e = parts.engine();
    let grid = ErpGrid::new(512, 256).unwrap();
    let layout = scene_layout(&scenes(MaskSize::M, MaskType::ErpReproj)[0], grid, &Default::default()).unwrap();
    let bg_only = layout.select_regions(&[]).unwrap();
    let cfg = PipelineConfig {
        steps,
        bootstrap: steps,
        ..Default::default()
    };
    let union = union_mask(&layout, 8);
    let t = steps - 1;

    let (full_set, plan) = prepare(&layout, &cfg, e, 5).unwrap();
    let (bg_set, bg_plan) = prepare(&bg_only, &cfg, e, 5).unwrap();
    let windows = WindowPlan::new(full_set.canvas().height(), cfg.stride, cfg.stitch).unwrap();
    let mut st = StepStats::default();
    let a = mstd_step(&full_set, e, &plan, &windows, t, &mut st).unwrap();
    let b = mstd_step(&bg_set, e, &bg_plan, &windows, t, &mut StepStats::default()).unwrap();
    let (za, zb) = (a.canvas(), b.canvas());
    let mut outside = 0;
    for c in 0..za.channels() {
        for y in 0..za.height() {
            for x in 0..za.width() {
                if !union.get(x, y) {
                    outside += 1;
                    ensure!(
                        za.get(c, y, x).to_bits() == zb.get(c, y, x).to_bits(),
                        "MSTD step differs from background-only at ({c}, {y}, {x})"
                    );
                }
            }
        }
    }
    ensure!(outside > 0, "no outside-union cells");

    let md_a = md_step(&full_set, e, &plan, t, true, &mut StepStats::default()).unwrap();
    let md_b = md_step(&bg_set, e, &bg_plan, t, true, &mut StepStats::default()).unwrap();
    for (i, (va, vb)) in md_a.canvas().data().iter().zip(md_b.canvas().data()).enumerate() {
        let cell = i % union.values().len();
        if union.values()[cell] == 0 {
            ensure!(va.to_bits() == vb.to_bits(), "MD step differs from background-only at flat index {i}");
        }
    }

    let n_fg = layout.regions.len();
    let mut counts = Vec::new();
    for b in [steps, 4] {
        let cfg = PipelineConfig {
            steps,
            bootstrap: b,
            ..Default::default()
        };
        let out = mstd_sample(&layout, &cfg, e, 5).unwrap();
        ensure!(
            out.stats.bootstrap_composites == b * n_fg,
            "MSTD composites {} != {b} x {n_fg}",
            out.stats.bootstrap_composites
        );
        counts.push(out.stats.bootstrap_composites);
    }

    let mpf_steps = 6;
    let mparts = Parts::new(mpf_steps);
    let small = scene_layout(
        &scenes(MaskSize::M, MaskType::Regular)[0],
        ErpGrid::new(256, 128).unwrap(),
        &Default::default(),
    )
    .unwrap();
    for mode in [MdMode::MdPano, MdMode::MdPers, MdMode::MdBoth] {
        let cfg = PipelineConfig {
            steps: mpf_steps,
            bootstrap: mpf_steps,
            md_mode: mode,
            fg_eppa: false,
            view_size: Some(8),
            ..PipelineConfig::mpf()
        };
        let out = panodense_core::mpf::mpf_sample(&small, &cfg, mparts.engine(), 2).unwrap();
        let want = mpf_steps * small.regions.len() * mode.branches();
        ensure!(
            out.stats.gated_exchanges == want && out.stats.bootstrap_composites == want,
            "MPF {mode:?}: gated {} composites {} expected {want}",
            out.stats.gated_exchanges,
            out.stats.bootstrap_composites
        );
    }
    Ok(format!(
        "{outside} outside-union values bitwise equal (MSTD and MD); composites {counts:?} for B=10,4 with 3 objects; MPF gate counts match for all md modes"
    ))
}

fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let var = |x: &[f64], m: f64| x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (sa, sb) = (var(a, ma) / a.len() as f64, var(b, mb) / b.len() as f64);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()))
}

/// Wrap-around column differences vs interior differences at the same window phase.
fn seam_p(stitch: bool, e: Engine<'_>) -> (f64, f64, f64) {
    let layout = Layout::new(ErpGrid::new(1024, 512).unwrap(), "a mountain lake at dawn");
    let cfg = PipelineConfig {
        steps: 10,
        bootstrap: 5,
        stitch,
        ..Default::default()
    };
    let (mut seam, mut interior) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let z = mstd_sample(&layout, &cfg, e, seed).unwrap().latent;
        let w = z.width();
        for c in 0..z.channels() {
            for y in 0..z.height() {
                seam.push(f64::from((z.get(c, y, 0) - z.get(c, y, w - 1)).abs()));
                for x in (cfg.stride..w).step_by(cfg.stride) {
                    interior.push(f64::from((z.get(c, y, x) - z.get(c, y, x - 1)).abs()));
                }
            }
        }
    }
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (welch_p(&seam, &interior), m(&seam), m(&interior))
}

fn seam_continuity() -> Outcome {
    let start = Instant::now();
    let parts = Parts::new(10);
    let (p_on, s_on, i_on) = seam_p(true, parts.engine());
    let (p_off, s_off, i_off) = seam_p(false, parts.engine());
    let took = start.elapsed();
    let detail = format!(
        "stitched p={p_on:.3} (seam {s_on:.3} vs interior {i_on:.3}); unstitched p={p_off:.2e} (seam {s_off:.3} vs {i_off:.3}); {took:.1?}"
    );
    ensure!(p_on > 0.01, "stitched seam distinguishable: {detail}");
    ensure!(p_off < 0.01, "unstitched seam indistinguishable: {detail}");
    ensure!(took < Duration::from_secs(120), "too slow: {detail}");
    Ok(detail)
}

fn coupling_semantics() -> Outcome {
    let steps = 50;
    let (n_obj, n_br) = (3, 21);
    for (coupling, name) in [(Coupling::Branches, "branches"), (Coupling::Objects, "objects"), (Coupling::All, "all")] {
        let plan = BootstrapPlan {
            n_steps: 20,
            coupling,
            seed: 11,
        };
        let mut prev: Option<[f32; 3]> = None;
        for t in 0..steps {
            let tab = assign_bootstrap_colors(&plan, n_obj, n_br, t, plan.seed);
            for o in 0..n_obj {
                for b in 0..n_br {
                    let c = tab.get(o, b);
                    let eq = match coupling {
                        Coupling::Branches => c == tab.get(o, 0),
                        Coupling::Objects => c == tab.get(0, b),
                        _ => c == tab.get(0, 0),
                    };
                    ensure!(eq, "{name}: t={t} object {o} branch {b} breaks the pattern");
                }
            }
            match coupling {
                Coupling::Branches => ensure!(tab.get(0, 0) != tab.get(1, 0), "{name}: objects share a color at t={t}"),
                Coupling::Objects => ensure!(tab.get(0, 0) != tab.get(0, 1), "{name}: branches share a color at t={t}"),
                _ => {}
            }
            ensure!(prev != Some(tab.get(0, 0)), "{name}: color constant across t={t}");
            prev = Some(tab.get(0, 0));
        }
    }
    let seeds = 500u64;
    let differing = (0..seeds)
        .filter(|&s| {
            let plan = BootstrapPlan {
                n_steps: 20,
                coupling: Coupling::None,
                seed: s,
            };
            let tab = assign_bootstrap_colors(&plan, 1, 2, 7, s);
            tab.get(0, 0) != tab.get(0, 1)
        })
        .count();
    ensure!(differing as u64 == seeds, "none: branches agree for {} of {seeds} seeds", seeds - differing as u64);
    Ok(format!("patterns hold for all {steps} timesteps; none differs across branches for {differing}/{seeds} seeds"))
}

fn dataset_counts() -> Outcome {
    let m = build_manifest(&DatasetConfig::default()).map_err(|e| e.to_string())?;
    let got = (m.panoramas.len(), m.perspectives.len(), m.reference_jobs.len());
    ensure!(got == (1008, 3024, 18144), "counts {got:?}");
    Ok(format!("{} panoramas, {} perspectives, {} reference jobs", got.0, got.1, got.2))
}

#[cfg(unix)]
fn stub_plugins(dir: &Path) {
    use std::os::unix::fs::PermissionsExt;
    for (id, v) in [("clip_score", 30.5), ("image_reward", -0.25), ("fid", 60.0), ("cmmd", 1.5)] {
        let p = dir.join(id);
        std::fs::write(&p, format!("#!/bin/sh\necho '{{\"metric\": \"{id}\", \"value\": {v}}}' > \"$3\"\n")).unwrap();
        std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    }
}

#[cfg(not(unix))]
fn stub_plugins(_: &Path) {}

fn sweep_protocol() -> Outcome {
    let spec = SweepSpec {
        base_config: PipelineConfig::default(),
        axis: SweepAxis::Bootstrap,
        values: None,
        extra_axes: Vec::new(),
        one_at_a_time: true,
        scenes: Some(vec![0]),
        seeds: vec![0],
        height: 64,
    };
    let configs = spec.configs().map_err(|e| e.to_string())?;
    let bs: Vec<usize> = configs.iter().map(|c| c.config.bootstrap).collect();
    ensure!(bs == [1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50], "bootstrap values {bs:?}");

    let tmp = tempfile::tempdir().unwrap();
    let plugins = tmp.path().join("plugins");
    std::fs::create_dir_all(&plugins).unwrap();
    stub_plugins(&plugins);
    let opts = SweepOptions {
        backend: BackendSpec::Mock,
        workers: 4,
        resume: false,
        scorers: ScorerRegistry::new(Some(plugins), tmp.path().join("cache")),
        iou_mode: IouMode::Panorama,
    };
    let out = tmp.path().join("sweep");
    let report = run_sweep(&spec, &opts, &out).map_err(|e| e.to_string())?;
    ensure!(report.executed == 11 && report.failed == 0, "executed {} failed {}", report.executed, report.failed);
    let csv = std::fs::read_to_string(out.join("tables/bootstrap.csv")).unwrap();
    let header = csv.lines().next().unwrap_or_default();
    ensure!(header == "parameter,value,n,iou,clip_score,image_reward,fid,cmmd", "csv header {header}");
    ensure!(csv.lines().count() == 12, "csv has {} lines", csv.lines().count());
    let text = std::fs::read_to_string(out.join("tables/bootstrap.txt")).unwrap();
    let labels: Vec<&str> = Metric::ALL.iter().map(|m| m.label()).collect();
    ensure!(labels == ["IoU", "CS", "IR", "FID", "CMMD"], "labels {labels:?}");
    ensure!(text.lines().next().unwrap_or_default().contains("IoU & CS & IR & FID & CMMD"), "table header");
    Ok(format!("11 configs {bs:?}; tables carry IoU, CS, IR, FID, CMMD"))
}

fn iou_oracle() -> Outcome {
    let (w, h) = (96usize, 48usize);
    // quarter-pixel coordinates make the subcell count exact
    let q = 4i64;
    let mut r = rng(8, &[]);
    let mut crossing = 0;
    let mut worst = 0.0f64;
    for i in 0..50 {
        let gx0 = r.random_range(0..w);
        let gw = r.random_range(1..w / 2);
        let gy0 = r.random_range(0..h - 1);
        let gy1 = r.random_range(gy0 + 1..=h);
        let gt = BinaryMask::from_fn(w, h, |x, y| (x + w - gx0) % w < gw && (gy0..gy1).contains(&y));
        let pw = r.random_range(1..(w as i64 / 2) * q);
        let px0 = if i % 2 == 0 {
            // straddles the seam
            crossing += 1;
            w as i64 * q - r.random_range(1..pw.max(2))
        } else {
            r.random_range(0..w as i64 * q)
        };
        let py0 = r.random_range(0..(h as i64 - 1) * q);
        let py1 = r.random_range(py0 + 1..=h as i64 * q);
        let period = w as i64 * q;
        let (mut inter, mut uni) = (0u64, 0u64);
        for sy in 0..h as i64 * q {
            for sx in 0..period {
                let in_p = (sx - px0).rem_euclid(period) < pw && (py0..py1).contains(&sy);
                let (x, y) = ((sx / q) as usize, (sy / q) as usize);
                let in_g = gt.get(x, y);
                inter += u64::from(in_p && in_g);
                uni += u64::from(in_p || in_g);
            }
        }
        let oracle = inter as f64 / uni as f64;
        let qf = q as f64;
        let pred = BoxF::new(px0 as f64 / qf, py0 as f64 / qf, (px0 + pw) as f64 / qf, py1 as f64 / qf).unwrap();
        let got = iou(&pred, &gt).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle).abs());
        ensure!((got - oracle).abs() <= 1e-12, "pair {i}: iou {got} vs oracle {oracle}");
    }
    Ok(format!("50 pairs ({crossing} seam-crossing), max error {worst:.1e}"))
}

fn same_output(a: &RunOutput, b: &RunOutput) -> bool {
    a.panorama.as_raw() == b.panorama.as_raw()
        && a.views.len() == b.views.len()
        && a.views.iter().zip(&b.views).all(|(x, y)| x.as_raw() == y.as_raw())
        && a.stats == b.stats
}

fn determinism() -> Outcome {
    let layout = scene_layout(
        &scenes(MaskSize::M, MaskType::ErpReproj)[3],
        ErpGrid::new(512, 256).unwrap(),
        &Default::default(),
    )
    .unwrap();
    let mstd = PipelineConfig {
        steps: 10,
        bootstrap: 4,
        ..Default::default()
    };
    let mpf = PipelineConfig {
        steps: 6,
        bootstrap: 3,
        view_size: Some(8),
        ..PipelineConfig::mpf()
    };
    let mut checked = Vec::new();
    for cfg in [mstd, mpf] {
        let parts = Parts::new(cfg.steps);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_pipeline(&layout, &cfg, parts.engine(), 42).unwrap())
        };
        let a = run(1);
        let b = run(1);
        let c = run(4);
        let d = run(4);
        ensure!(same_output(&a, &b), "{:?}: two single-worker runs differ", cfg.pipeline);
        ensure!(same_output(&a, &c) && same_output(&c, &d), "{:?}: 1 vs 4 workers differ", cfg.pipeline);
        checked.push(format!("{:?} ({} images)", cfg.pipeline, 1 + a.views.len()));
    }
    Ok(format!("byte-identical across reruns and 1/4 workers: {}", checked.join(", ")))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Mean over objects of corr(in-mask latent, prompt signature) − corr(out-of-mask latent, signature).
fn alignment(bootstrap: usize, steps: usize) -> f64 {
    let parts = Parts::new(steps);
    let e = parts.engine();
    let grid = ErpGrid::new(512, 256).unwrap();
    let cfg = PipelineConfig {
        steps,
        bootstrap,
        ..Default::default()
    };
    let mut total = 0.0;
    let mut n = 0;
    for scene in scenes(MaskSize::M, MaskType::Regular) {
        let layout = scene_layout(&scene, grid, &Default::default()).unwrap();
        let specs = cfg.apply_to_layout(&layout).unwrap().paths(Some(PANORAMA_TRIGGER));
        for seed in 0..6 {
            let z = mstd_sample(&layout, &cfg, e, seed).unwrap().latent;
            for p in specs.iter().filter(|p| p.region.is_some()) {
                let m = downsample_mask(&p.mask, 8).unwrap();
                let sig = parts.denoiser.signature(&p.prompt, p.lora, z.shape());
                let (mut iz, mut is, mut oz, mut os) = (vec![], vec![], vec![], vec![]);
                for c in 0..z.channels() {
                    for y in 0..z.height() {
                        for x in 0..z.width() {
                            let (v, g) = (f64::from(z.get(c, y, x)), f64::from(sig.get(c, y, x)));
                            if m.get(x, y) {
                                iz.push(v);
                                is.push(g);
                            } else {
                                oz.push(v);
                                os.push(g);
                            }
                        }
                    }
                }
                total += pearson(&iz, &is) - pearson(&oz, &os);
                n += 1;
            }
        }
    }
    total / n as f64
}

fn monotone_trend() -> Outcome {
    let steps = 25;
    let vals: Vec<(usize, f64)> = [0, 5, 20].iter().map(|&b| (b, alignment(b, steps))).collect();
    let detail = vals
        .iter()
        .map(|(b, v)| format!("B={b}: {v:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(vals[0].1 < vals[1].1 && vals[1].1 < vals[2].1, "not increasing: {detail}");
    Ok(detail)
}

fn main() {
    let criteria: [Check; 10] = [
        ("geometry suite", geometry_suite),
        ("fusion algebra", fusion_algebra),
        ("bootstrapping semantics", bootstrap_semantics),
        ("seam continuity", seam_continuity),
        ("coupling semantics", coupling_semantics),
        ("dataset counts", dataset_counts),
        ("sweep protocol", sweep_protocol),
        ("iou oracle", iou_oracle),
        ("determinism", determinism),
        ("bootstrap trend", monotone_trend),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{took:.1?}]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{took:.1?}]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
