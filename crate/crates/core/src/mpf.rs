//! MultiPanFusion: a panorama branch and 20 perspective views denoised together,
//! with region paths in either or both branches, a gated projection exchange
//! between them and a per-step yaw rotation.

use image::RgbImage;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{init_noise, Branch, DenoiseContext, DiffusionState, LatentTensor, Shape};
use crate::config::{MdMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::fusion::{
    assign_bootstrap_colors, bootstrap_composite, downsample_mask, run_paths, steps_done, BootstrapPlan, ColorTable,
    Engine, PathRun, StepStats,
};
use crate::geom::{
    columns_to_yaw, erp_pixel_at, gnomonic_unproject, icosahedron_cameras, project_mask_erp_to_persp, BinaryMask,
    CameraPose, ColumnWrap, ErpGrid,
};
use crate::layout::{Layout, PANORAMA_TRIGGER};
use crate::mstd::{latent_shape, COLOR_TAG};
use crate::seed::{derive_seed, rng};

pub const N_VIEWS: usize = 20;
const VIEW_TAG: u64 = 0x71e5;
const ROTATION_TAG: u64 = 0x207a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpfConfig {
    pub md_mode: MdMode,
    pub fg_eppa: bool,
    /// Master switch of the exchange; off decouples the branches entirely.
    pub eppa: bool,
    pub eppa_sigma: f64,
    pub bootstrap: BootstrapPlan,
    /// Yaw applied before each step, in panorama latent columns.
    pub rotation_schedule: Vec<isize>,
    pub circular_padding: bool,
    pub view_fov_deg: f64,
    /// Perspective latent size in cells.
    pub view_size: usize,
}

impl MpfConfig {
    /// Resolves a pipeline config for a panorama latent of `pano` shape.
    pub fn from_pipeline(cfg: &PipelineConfig, pano: Shape, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let view_size = cfg.view_size.unwrap_or((pano.height / 2).max(1));
        let rotation_schedule = if cfg.rotate {
            let mut r = rng(cfg.rotation_seed.unwrap_or_else(|| derive_seed(seed, &[ROTATION_TAG])), &[]);
            (0..cfg.steps).map(|_| r.random_range(0..pano.width as i64) as isize).collect()
        } else {
            vec![0; cfg.steps]
        };
        Ok(Self {
            md_mode: cfg.md_mode,
            fg_eppa: cfg.fg_eppa,
            eppa: cfg.eppa,
            eppa_sigma: cfg.eppa_sigma,
            bootstrap: BootstrapPlan {
                n_steps: cfg.bootstrap,
                coupling: cfg.coupling(),
                seed: derive_seed(seed, &[COLOR_TAG]),
            },
            rotation_schedule,
            circular_padding: cfg.circular_padding,
            view_fov_deg: cfg.view_fov_deg,
            view_size,
        })
    }
}

/// Whether a path takes part in the exchange. Only foreground paths are ever
/// gated, and only while bootstrapping with the foreground exchange switched off.
pub fn eppa_gate(path_is_foreground: bool, in_bootstrap: bool, fg_eppa: bool) -> bool {
    !(path_is_foreground && in_bootstrap && !fg_eppa)
}

/// Per-view lookup of the panorama cell under each view cell and its weight.
#[derive(Debug, Clone)]
pub struct ExchangeMap {
    /// `[view][view cell] -> (panorama cell, weight)`.
    pub cells: Vec<Vec<(usize, f32)>>,
}

impl ExchangeMap {
    /// Weights fall off as a Gaussian of the distance to the view center,
    /// measured in units of the half view size.
    pub fn new(poses: &[CameraPose], pano_grid: ErpGrid, sigma: f64) -> Self {
        let cells = poses
            .iter()
            .map(|pose| {
                let n = pose.image_size();
                let half = n as f64 / 2.0;
                let mut out = Vec::with_capacity(n * n);
                for y in 0..n {
                    for x in 0..n {
                        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                        let s = gnomonic_unproject(px, py, pose);
                        let (col, row) = erp_pixel_at(s, pano_grid);
                        let r2 = ((px - half).powi(2) + (py - half).powi(2)) / (half * half);
                        let w = (-r2 / (2.0 * sigma * sigma)).exp();
                        out.push((row * pano_grid.width() + col, w as f32));
                    }
                }
                out
            })
            .collect();
        Self { cells }
    }
}

/// Projection-resampling consensus between the branches.
///
/// Views are splatted onto the panorama with footprint weights,
/// `pano' = (P + Σ w·V) / (1 + Σ w)`, then every view is pulled towards the
/// updated panorama, `V' = (V + w·pano') / (1 + w)`. A closed gate returns the
/// inputs unchanged.
pub fn eppa_exchange(
    pano: &LatentTensor,
    views: &[LatentTensor],
    map: &ExchangeMap,
    gate: bool,
) -> Result<(LatentTensor, Vec<LatentTensor>)> {
    if !gate {
        return Ok((pano.clone(), views.to_vec()));
    }
    if views.len() != map.cells.len() {
        return Err(Error::Shape(format!("{} views for {} mapped poses", views.len(), map.cells.len())));
    }
    let (ch, plane) = (pano.channels(), pano.height() * pano.width());
    let mut num: Vec<f64> = pano.data().iter().map(|&v| f64::from(v)).collect();
    let mut den = vec![1.0f64; plane];
    for (v, cells) in views.iter().zip(&map.cells) {
        let vp = v.height() * v.width();
        if v.channels() != ch || vp != cells.len() {
            return Err(Error::Shape(format!("view {:?} does not match its map", v.shape())));
        }
        for (i, &(idx, w)) in cells.iter().enumerate() {
            let w = f64::from(w);
            den[idx] += w;
            for c in 0..ch {
                num[c * plane + idx] += w * f64::from(v.data()[c * vp + i]);
            }
        }
    }
    let merged: Vec<f64> = num.iter().enumerate().map(|(i, &s)| s / den[i % plane]).collect();
    let new_pano = LatentTensor::from_vec(pano.shape(), merged.iter().map(|&v| v as f32).collect())?;
    let new_views = views
        .iter()
        .zip(&map.cells)
        .map(|(v, cells)| {
            let vp = cells.len();
            let data = v
                .data()
                .iter()
                .enumerate()
                .map(|(k, &x)| {
                    let (c, i) = (k / vp, k % vp);
                    let (idx, w) = cells[i];
                    let w = f64::from(w);
                    ((f64::from(x) + w * merged[c * plane + idx]) / (1.0 + w)) as f32
                })
                .collect();
            LatentTensor::from_vec(v.shape(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((new_pano, new_views))
}

/// A region path in both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPath {
    /// Pixel-resolution ERP mask in the current rotated frame.
    pub erp_mask: BinaryMask,
    pub pano_mask: BinaryMask,
    pub view_masks: Vec<BinaryMask>,
    pub pano_prompt: String,
    pub view_prompt: String,
    pub lora: bool,
    pub object: Option<usize>,
    pub pano_noise: LatentTensor,
    pub view_noises: Vec<LatentTensor>,
}

impl BranchPath {
    pub fn is_foreground(&self) -> bool {
        self.object.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchState {
    pub pano: DiffusionState,
    pub persp: Vec<DiffusionState>,
    /// View poses at latent size, in the current rotated frame.
    pub poses: Vec<CameraPose>,
    pub paths: Vec<BranchPath>,
    /// Total yaw applied so far, in panorama latent columns.
    pub yaw_columns: isize,
    pub factor: usize,
}

fn project_view_masks(erp: &BinaryMask, poses: &[CameraPose], factor: usize) -> Result<Vec<BinaryMask>> {
    poses
        .par_iter()
        .map(|p| {
            let px = project_mask_erp_to_persp(erp, &p.with_size(p.image_size() * factor)?)?;
            downsample_mask(&px, factor)
        })
        .collect()
}

impl BranchState {
    pub fn new(layout: &Layout, cfg: &MpfConfig, engine: Engine<'_>, seed: u64, noise_coupled: bool) -> Result<Self> {
        let factor = engine.codec.factor();
        let pano_shape = latent_shape(layout, engine)?;
        let view_shape = Shape::new(pano_shape.channels, cfg.view_size, cfg.view_size);
        let poses = icosahedron_cameras(cfg.view_fov_deg.to_radians(), cfg.view_size)?;
        let pano_specs = layout.paths(Some(PANORAMA_TRIGGER));
        let view_specs = layout.paths(None);
        let n = pano_specs.len();
        let pano_noise = init_noise(pano_shape, seed, noise_coupled, n);
        let view_noise: Vec<Vec<LatentTensor>> = (0..N_VIEWS)
            .map(|v| init_noise(view_shape, derive_seed(seed, &[VIEW_TAG, v as u64]), noise_coupled, n))
            .collect();
        let mut paths = Vec::with_capacity(n);
        for (i, (ps, vs)) in pano_specs.iter().zip(&view_specs).enumerate() {
            paths.push(BranchPath {
                erp_mask: ps.mask.clone(),
                pano_mask: downsample_mask(&ps.mask, factor)?,
                view_masks: project_view_masks(&ps.mask, &poses, factor)?,
                pano_prompt: ps.prompt.clone(),
                view_prompt: vs.prompt.clone(),
                lora: ps.lora,
                object: ps.region,
                pano_noise: pano_noise[i].clone(),
                view_noises: view_noise.iter().map(|vn| vn[i].clone()).collect(),
            });
        }
        let t_index = engine.scheduler.num_steps() - 1;
        Ok(Self {
            pano: DiffusionState {
                latent: pano_noise[0].clone(),
                t_index,
                path_id: 0,
                rng_seed: seed,
            },
            persp: view_noise
                .iter()
                .enumerate()
                .map(|(v, vn)| DiffusionState {
                    latent: vn[0].clone(),
                    t_index,
                    path_id: 0,
                    rng_seed: derive_seed(seed, &[VIEW_TAG, v as u64]),
                })
                .collect(),
            poses,
            paths,
            yaw_columns: 0,
            factor,
        })
    }

    pub fn pano_grid(&self) -> Result<ErpGrid> {
        ErpGrid::new(self.pano.latent.width(), self.pano.latent.height())
    }

    pub fn n_objects(&self) -> usize {
        self.paths.iter().filter_map(|p| p.object).map(|o| o + 1).max().unwrap_or(0)
    }
}

/// Rolls the panorama, its masks and noises by `cols` latent columns and yaws
/// the view poses to match; view masks are re-projected.
pub fn rotate_state(state: &BranchState, cols: isize) -> Result<BranchState> {
    if cols == 0 {
        return Ok(state.clone());
    }
    let width = state.pano.latent.width();
    let yaw = columns_to_yaw(cols, width);
    let mut next = state.clone();
    next.pano.latent = state.pano.latent.roll_columns(cols);
    next.poses = state.poses.iter().map(|p| p.yawed(yaw)).collect();
    let px_cols = cols * state.factor as isize;
    for p in &mut next.paths {
        p.erp_mask = p.erp_mask.roll_columns(px_cols);
        p.pano_mask = p.pano_mask.roll_columns(cols);
        p.pano_noise = p.pano_noise.roll_columns(cols);
        p.view_masks = project_view_masks(&p.erp_mask, &next.poses, state.factor)?;
    }
    next.yaw_columns = (state.yaw_columns + cols).rem_euclid(width as isize);
    Ok(next)
}

fn color_latent(engine: Engine<'_>, colors: &ColorTable, object: usize, branch: usize, like: &LatentTensor) -> LatentTensor {
    engine
        .codec
        .color_to_latent(colors.get(object, branch), like.height(), like.width())
}

/// One dual-branch step at `t_index`. `step` indexes the rotation schedule.
pub fn mpf_step(
    state: &BranchState,
    cfg: &MpfConfig,
    engine: Engine<'_>,
    t_index: usize,
    stats: &mut StepStats,
) -> Result<BranchState> {
    let total = engine.scheduler.num_steps();
    let done = steps_done(t_index, total);
    let yaw = cfg.rotation_schedule.get(done).copied().unwrap_or(0);
    let state = rotate_state(state, yaw)?;
    let plan = &cfg.bootstrap;
    let in_bootstrap = done < plan.n_steps;
    let colors = assign_bootstrap_colors(plan, state.n_objects(), 1 + N_VIEWS, t_index, plan.seed);
    let map = ExchangeMap::new(&state.poses, state.pano_grid()?, cfg.eppa_sigma);
    let pano = &state.pano.latent;
    let views: Vec<LatentTensor> = state.persp.iter().map(|s| s.latent.clone()).collect();

    let mut pano_inputs = Vec::with_capacity(state.paths.len());
    let mut view_inputs = Vec::with_capacity(state.paths.len());
    for p in &state.paths {
        let fg = p.is_foreground();
        let in_pano = !fg || cfg.md_mode.pano();
        let in_views = !fg || cfg.md_mode.pers();
        let mut pin = pano.clone();
        let mut vin = views.clone();
        if let (Some(o), true) = (p.object, in_bootstrap) {
            if in_pano {
                stats.bootstrap_composites += 1;
                let c = color_latent(engine, &colors, o, 0, pano);
                let fp = crate::fusion::FusionPath {
                    mask: p.pano_mask.clone(),
                    prompt: String::new(),
                    lora: p.lora,
                    object: Some(o),
                    noise: p.pano_noise.clone(),
                };
                pin = bootstrap_composite(pano, &fp, &c, done, plan, engine.scheduler, t_index)?;
            }
            if in_views {
                stats.bootstrap_composites += 1;
                vin = views
                    .iter()
                    .enumerate()
                    .map(|(v, x)| {
                        let c = color_latent(engine, &colors, o, 1 + v, x);
                        x.select(&p.view_masks[v], &engine.scheduler.add_noise(&c, &p.view_noises[v], t_index)?)
                    })
                    .collect::<Result<_>>()?;
            }
        }
        let open = cfg.eppa && eppa_gate(fg, in_bootstrap, cfg.fg_eppa);
        if cfg.eppa && !open {
            stats.gated_exchanges += usize::from(in_pano) + usize::from(in_views);
        }
        let (pin, vin) = eppa_exchange(&pin, &vin, &map, open)?;
        pano_inputs.push(in_pano.then_some(pin));
        view_inputs.push(in_views.then_some(vin));
    }

    let pano_runs: Vec<PathRun<'_>> = state
        .paths
        .iter()
        .zip(pano_inputs)
        .enumerate()
        .filter_map(|(i, (p, input))| {
            input.map(|input| PathRun {
                input,
                mask: p.pano_mask.clone(),
                prompt: &p.pano_prompt,
                ctx: DenoiseContext {
                    branch: Branch::Panorama,
                    path_id: i,
                    foreground: p.is_foreground(),
                    lora: p.lora,
                    circular: cfg.circular_padding,
                },
            })
        })
        .collect();
    let new_pano = run_paths(pano_runs, engine, t_index, stats)?;

    let view_results = (0..N_VIEWS)
        .into_par_iter()
        .map(|v| {
            let runs: Vec<PathRun<'_>> = state
                .paths
                .iter()
                .zip(&view_inputs)
                .enumerate()
                .filter_map(|(i, (p, inputs))| {
                    inputs.as_ref().map(|inp| PathRun {
                        input: inp[v].clone(),
                        mask: p.view_masks[v].clone(),
                        prompt: &p.view_prompt,
                        ctx: DenoiseContext {
                            branch: Branch::Perspective(v),
                            path_id: i,
                            foreground: p.is_foreground(),
                            lora: p.lora,
                            circular: false,
                        },
                    })
                })
                .collect();
            let mut local = StepStats::default();
            let z = run_paths(runs, engine, t_index, &mut local)?;
            Ok((z, local))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut next = state.clone();
    let t_next = t_index.saturating_sub(1);
    next.pano.latent = new_pano;
    next.pano.t_index = t_next;
    for (s, (z, local)) in next.persp.iter_mut().zip(view_results) {
        s.latent = z;
        s.t_index = t_next;
        *stats += local;
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct MpfOutput {
    pub pano_image: RgbImage,
    pub view_images: Vec<RgbImage>,
    pub pano_latent: LatentTensor,
    pub view_latents: Vec<LatentTensor>,
    pub poses: Vec<CameraPose>,
    pub stats: StepStats,
    /// Sum of all scheduled yaws, in latent columns.
    pub applied_yaw: isize,
    /// Yaw undone at the end.
    pub unwound_yaw: isize,
}

/// Runs every step from an initial state and returns it to the input frame.
pub fn mpf_run(
    mut state: BranchState,
    cfg: &MpfConfig,
    engine: Engine<'_>,
    stats: &mut StepStats,
) -> Result<(BranchState, isize, isize)> {
    let total = engine.scheduler.num_steps();
    if cfg.rotation_schedule.len() < total {
        return Err(Error::Config(format!(
            "rotation schedule has {} entries for {total} steps",
            cfg.rotation_schedule.len()
        )));
    }
    let start = state.yaw_columns;
    for t in (0..total).rev() {
        state = mpf_step(&state, cfg, engine, t, stats)?;
    }
    let applied: isize = cfg.rotation_schedule[..total].iter().sum();
    let unwind = -(state.yaw_columns - start);
    let state = rotate_state(&state, unwind)?;
    Ok((state, applied, unwind))
}

pub fn mpf_sample(layout: &Layout, config: &PipelineConfig, engine: Engine<'_>, seed: u64) -> Result<MpfOutput> {
    let layout = config.apply_to_layout(layout)?;
    layout.validate()?;
    if engine.scheduler.num_steps() != config.steps {
        return Err(Error::Config(format!(
            "scheduler has {} steps, config asks for {}",
            engine.scheduler.num_steps(),
            config.steps
        )));
    }
    let shape = latent_shape(&layout, engine)?;
    let cfg = MpfConfig::from_pipeline(config, shape, seed)?;
    let state = BranchState::new(&layout, &cfg, engine, seed, config.noise_coupling)?;
    let mut stats = StepStats::default();
    let (state, applied_yaw, unwound_yaw) = mpf_run(state, &cfg, engine, &mut stats)?;
    let view_latents: Vec<LatentTensor> = state.persp.iter().map(|s| s.latent.clone()).collect();
    Ok(MpfOutput {
        pano_image: engine.codec.decode(&state.pano.latent)?,
        view_images: view_latents.iter().map(|z| engine.codec.decode(z)).collect::<Result<_>>()?,
        pano_latent: state.pano.latent,
        view_latents,
        poses: state.poses,
        stats,
        applied_yaw,
        unwound_yaw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{gaussian, DdimScheduler, Denoiser, MockCodec, MockDenoiser, Scheduler};
    use crate::geom::PixelBox;

    fn parts(steps: usize) -> (MockDenoiser, DdimScheduler, MockCodec) {
        (MockDenoiser::default(), DdimScheduler::with_steps(steps).unwrap(), MockCodec::default())
    }

    fn layout() -> Layout {
        let g = ErpGrid::new(256, 128).unwrap();
        Layout::new(g, "an indoor room")
            .with_region(BinaryMask::rect(256, 128, PixelBox { x0: 24, y0: 48, x1: 72, y1: 80 }), "bed")
            .with_region(BinaryMask::rect(256, 128, PixelBox { x0: 150, y0: 40, x1: 180, y1: 90 }), "door")
    }

    fn cfg(steps: usize) -> PipelineConfig {
        PipelineConfig {
            steps,
            bootstrap: steps / 2,
            view_size: Some(8),
            ..PipelineConfig::mpf()
        }
    }

    #[test]
    fn gate_table() {
        assert!(eppa_gate(false, true, false));
        assert!(eppa_gate(false, false, false));
        assert!(!eppa_gate(true, true, false));
        assert!(eppa_gate(true, true, true));
        assert!(eppa_gate(true, false, false));
    }

    fn poses() -> Vec<CameraPose> {
        icosahedron_cameras(90f64.to_radians(), 6).unwrap()
    }

    #[test]
    fn exchange_fixed_point_and_identity() {
        let grid = ErpGrid::new(32, 16).unwrap();
        let map = ExchangeMap::new(&poses(), grid, 0.5);
        let pano = LatentTensor::filled(Shape::new(4, 16, 32), 0.75);
        let views = vec![LatentTensor::filled(Shape::new(4, 6, 6), 0.75); N_VIEWS];
        let (p, v) = eppa_exchange(&pano, &views, &map, true).unwrap();
        assert!(p.data().iter().all(|&x| (x - 0.75).abs() < 1e-6));
        assert!(v.iter().all(|t| t.data().iter().all(|&x| (x - 0.75).abs() < 1e-6)));
        let pano = gaussian(pano.shape(), 1);
        let views: Vec<_> = (0..N_VIEWS).map(|i| gaussian(Shape::new(4, 6, 6), 10 + i as u64)).collect();
        let (p, v) = eppa_exchange(&pano, &views, &map, false).unwrap();
        assert_eq!(p, pano);
        assert_eq!(v, views);
    }

    #[test]
    fn exchange_moves_towards_differing_view() {
        let grid = ErpGrid::new(32, 16).unwrap();
        let ps = poses();
        let map = ExchangeMap::new(&ps, grid, 0.5);
        let pano = LatentTensor::zeros(Shape::new(4, 16, 32));
        let mut views = vec![LatentTensor::zeros(Shape::new(4, 6, 6)); N_VIEWS];
        views[3] = LatentTensor::filled(Shape::new(4, 6, 6), 1.0);
        let (p, _) = eppa_exchange(&pano, &views, &map, true).unwrap();
        let touched: std::collections::BTreeSet<usize> = map.cells[3].iter().map(|&(i, _)| i).collect();
        for i in 0..16 * 32 {
            let moved = p.data()[i];
            if touched.contains(&i) {
                assert!(moved > 0.0 && moved < 1.0);
            } else {
                assert_eq!(moved, 0.0);
            }
        }
    }

    #[test]
    fn exchange_keeps_range() {
        let grid = ErpGrid::new(32, 16).unwrap();
        let map = ExchangeMap::new(&poses(), grid, 0.7);
        let pano = gaussian(Shape::new(4, 16, 32), 2);
        let views: Vec<_> = (0..N_VIEWS).map(|i| gaussian(Shape::new(4, 6, 6), 30 + i as u64)).collect();
        let lo = pano.data().iter().chain(views.iter().flat_map(|v| v.data())).copied().fold(f32::MAX, f32::min);
        let hi = pano.data().iter().chain(views.iter().flat_map(|v| v.data())).copied().fold(f32::MIN, f32::max);
        let (p, v) = eppa_exchange(&pano, &views, &map, true).unwrap();
        for x in p.data().iter().chain(v.iter().flat_map(|t| t.data())) {
            assert!(*x >= lo - 1e-6 && *x <= hi + 1e-6);
        }
    }

    #[test]
    fn rotation_round_trip_and_consistency() {
        let (d, s, c) = parts(2);
        let e = Engine { denoiser: &d, scheduler: &s, codec: &c };
        let l = layout();
        let mc = MpfConfig::from_pipeline(&cfg(2), latent_shape(&l, e).unwrap(), 1).unwrap();
        let st = BranchState::new(&l, &mc, e, 1, true).unwrap();
        assert_eq!(rotate_state(&st, 0).unwrap(), st);
        let r = rotate_state(&st, 5).unwrap();
        let back = rotate_state(&r, -5).unwrap();
        assert_eq!(back.pano, st.pano);
        assert_eq!(back.yaw_columns, 0);
        for (a, b) in back.paths.iter().zip(&st.paths) {
            assert_eq!(a.erp_mask, b.erp_mask);
            assert_eq!(a.pano_mask, b.pano_mask);
        }
        // view masks follow the rotation: re-projecting the rolled mask through
        // the yawed poses gives the masks of the unrotated frame
        let mut mismatched = 0;
        let mut total = 0;
        for (a, b) in r.paths.iter().zip(&st.paths) {
            for (ma, mb) in a.view_masks.iter().zip(&b.view_masks) {
                mismatched += ma.values().iter().zip(mb.values()).filter(|(x, y)| x != y).count();
                total += ma.values().len();
            }
        }
        assert_eq!(mismatched, 0, "of {total}");
    }

    #[test]
    fn deterministic_and_unwound() {
        let (d, s, c) = parts(3);
        let e = Engine { denoiser: &d, scheduler: &s, codec: &c };
        let a = mpf_sample(&layout(), &cfg(3), e, 4).unwrap();
        let b = mpf_sample(&layout(), &cfg(3), e, 4).unwrap();
        assert_eq!(a.pano_latent, b.pano_latent);
        assert_eq!(a.view_latents, b.view_latents);
        assert_eq!(a.view_images.len(), N_VIEWS);
        assert_eq!((a.applied_yaw + a.unwound_yaw).rem_euclid(32), 0);
        let ico = icosahedron_cameras(90f64.to_radians(), 8).unwrap();
        for (p, q) in a.poses.iter().zip(&ico) {
            assert!(p.axis().angular_distance(q.axis()) < 1e-9);
        }
    }

    #[test]
    fn md_pano_views_single_path() {
        let (d, s, c) = parts(2);
        let e = Engine { denoiser: &d, scheduler: &s, codec: &c };
        let out = mpf_sample(&layout(), &cfg(2), e, 4).unwrap();
        // 3 panorama paths + 20 background-only views per step
        assert_eq!(out.stats.predictions, 2 * (3 + N_VIEWS));
    }

    #[test]
    fn md_pers_differs_from_md_pano() {
        let (d, s, c) = parts(3);
        let e = Engine { denoiser: &d, scheduler: &s, codec: &c };
        let pano = mpf_sample(&layout(), &cfg(3), e, 4).unwrap();
        let pers = mpf_sample(&layout(), &PipelineConfig { md_mode: MdMode::MdPers, ..cfg(3) }, e, 4).unwrap();
        assert!(pano.pano_latent.l2_distance(&pers.pano_latent) > 0.0);
    }

    #[test]
    fn decoupled_single_step_is_two_vanilla_steps() {
        let (d, s, c) = parts(1);
        let e = Engine { denoiser: &d, scheduler: &s, codec: &c };
        let l = Layout::new(ErpGrid::new(256, 128).unwrap(), "a busy street");
        let pc = PipelineConfig {
            eppa: false,
            rotate: false,
            bootstrap: 0,
            ..cfg(1)
        };
        let mc = MpfConfig::from_pipeline(&pc, latent_shape(&l, e).unwrap(), 9).unwrap();
        let st = BranchState::new(&l, &mc, e, 9, true).unwrap();
        let mut stats = StepStats::default();
        let next = mpf_step(&st, &mc, e, 0, &mut stats).unwrap();
        let ctx = DenoiseContext {
            branch: Branch::Panorama,
            path_id: 0,
            foreground: false,
            lora: st.paths[0].lora,
            circular: true,
        };
        let x = &st.pano.latent;
        let want = s.step(x, &d.predict(x, 0, &st.paths[0].pano_prompt, &ctx).unwrap(), 0).unwrap();
        assert_eq!(next.pano.latent, want);
        let v = &st.persp[7].latent;
        let ctx = DenoiseContext {
            branch: Branch::Perspective(7),
            circular: false,
            ..ctx
        };
        let want = s.step(v, &d.predict(v, 0, &st.paths[0].view_prompt, &ctx).unwrap(), 0).unwrap();
        assert_eq!(next.persp[7].latent, want);
    }
}
