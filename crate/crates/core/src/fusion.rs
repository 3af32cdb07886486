//! MultiDiffusion core: per-region paths over a shared latent canvas,
//! bootstrap compositing and mask-weighted merging.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    init_noise, Branch, Codec, DenoiseContext, Denoiser, DiffusionState, LatentTensor, Scheduler, Shape,
};
use crate::error::{Error, Result};
use crate::geom::BinaryMask;
use crate::layout::PathSpec;
use crate::seed::{derive_seed, rng};

/// Which bootstrap colors are shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Independent color per (object, branch, step).
    #[default]
    None,
    /// Same color in every branch for a given object.
    Branches,
    /// Same color for every object within a branch.
    Objects,
    /// One color per step.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BootstrapPlan {
    /// Number of initial steps run with composited backgrounds.
    pub n_steps: usize,
    pub coupling: Coupling,
    /// Seed of the background color stream.
    pub seed: u64,
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        Self {
            n_steps: 20,
            coupling: Coupling::None,
            seed: 0,
        }
    }
}

impl BootstrapPlan {
    pub fn disabled() -> Self {
        Self {
            n_steps: 0,
            ..Self::default()
        }
    }

    /// Whether the step at `t_index` of a `total`-step run is a bootstrap step.
    pub fn active(&self, t_index: usize, total: usize) -> bool {
        steps_done(t_index, total) < self.n_steps
    }
}

/// Steps already completed when the step at `t_index` starts.
pub fn steps_done(t_index: usize, total: usize) -> usize {
    total - 1 - t_index
}

/// Background colors indexed `[object][branch]`, RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorTable {
    pub colors: Vec<Vec<[f32; 3]>>,
}

impl ColorTable {
    pub fn get(&self, object: usize, branch: usize) -> [f32; 3] {
        self.colors[object][branch]
    }
}

const SHARED: u64 = u64::MAX;

pub fn assign_bootstrap_colors(
    plan: &BootstrapPlan,
    n_objects: usize,
    n_branches: usize,
    t_index: usize,
    seed: u64,
) -> ColorTable {
    let colors = (0..n_objects as u64)
        .map(|o| {
            (0..n_branches as u64)
                .map(|b| {
                    let (ko, kb) = match plan.coupling {
                        Coupling::None => (o, b),
                        Coupling::Branches => (o, SHARED),
                        Coupling::Objects => (SHARED, b),
                        Coupling::All => (SHARED, SHARED),
                    };
                    let mut r = rng(seed, &[0xc010, ko, kb, t_index as u64]);
                    [r.random::<f32>(), r.random::<f32>(), r.random::<f32>()]
                })
                .collect()
        })
        .collect();
    ColorTable { colors }
}

/// Block-max pooling: a latent cell is set if any pixel of its block is.
pub fn downsample_mask(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    let (w, h) = mask.dims();
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::Shape(format!(
            "mask {w}x{h} not divisible by factor {factor}"
        )));
    }
    let (lw, lh) = (w / factor, h / factor);
    Ok(BinaryMask::from_fn(lw, lh, |lx, ly| {
        (ly * factor..(ly + 1) * factor)
            .any(|y| (lx * factor..(lx + 1) * factor).any(|x| mask.get(x, y)))
    }))
}

/// `(Σᵢ mᵢ⊙zᵢ) / (Σᵢ mᵢ)`, accumulated in f64 in index order.
pub fn merge_paths(latents: &[LatentTensor], masks: &[BinaryMask]) -> Result<LatentTensor> {
    if latents.is_empty() || latents.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} latents for {} masks",
            latents.len(),
            masks.len()
        )));
    }
    let shape = latents[0].shape();
    let plane = shape.height * shape.width;
    for (z, m) in latents.iter().zip(masks) {
        z.ensure_shape(shape, "merge_paths")?;
        if m.dims() != (shape.width, shape.height) {
            return Err(Error::Shape(format!(
                "mask {:?} does not match latent {}x{}",
                m.dims(),
                shape.width,
                shape.height
            )));
        }
    }
    let mut den = vec![0u32; plane];
    for m in masks {
        for (d, &v) in den.iter_mut().zip(m.values()) {
            *d += u32::from(v);
        }
    }
    if let Some(i) = den.iter().position(|&d| d == 0) {
        return Err(Error::ZeroCoverage {
            row: i / shape.width,
            col: i % shape.width,
        });
    }
    let mut num = vec![0.0f64; shape.len()];
    for (z, m) in latents.iter().zip(masks) {
        let mv = m.values();
        for (i, (acc, &v)) in num.iter_mut().zip(z.data()).enumerate() {
            if mv[i % plane] != 0 {
                *acc += f64::from(v);
            }
        }
    }
    let data = num
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / f64::from(den[i % plane])) as f32)
        .collect();
    LatentTensor::from_vec(shape, data)
}

/// One denoising path at latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionPath {
    pub mask: BinaryMask,
    pub prompt: String,
    pub lora: bool,
    /// Object slot of a foreground path; `None` for the background.
    pub object: Option<usize>,
    /// Noise used when forward-noising this path's bootstrap background.
    pub noise: LatentTensor,
}

impl FusionPath {
    pub fn is_foreground(&self) -> bool {
        self.object.is_some()
    }
}

/// Region paths sharing one canvas. After every step all states hold the fused latent.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub states: Vec<DiffusionState>,
    pub paths: Vec<FusionPath>,
}

impl PathSet {
    pub fn new(paths: Vec<FusionPath>, canvas: LatentTensor, t_index: usize, seed: u64) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Layout("a path set needs at least one path".into()));
        }
        let shape = canvas.shape();
        let mut coverage = vec![false; shape.width * shape.height];
        for p in &paths {
            if p.mask.dims() != (shape.width, shape.height) {
                return Err(Error::Shape(format!(
                    "path mask {:?} does not match canvas {}x{}",
                    p.mask.dims(),
                    shape.width,
                    shape.height
                )));
            }
            p.noise.ensure_shape(shape, "path noise")?;
            for (c, &v) in coverage.iter_mut().zip(p.mask.values()) {
                *c |= v != 0;
            }
        }
        if let Some(i) = coverage.iter().position(|c| !c) {
            return Err(Error::ZeroCoverage {
                row: i / shape.width,
                col: i % shape.width,
            });
        }
        let states = (0..paths.len())
            .map(|i| DiffusionState {
                latent: canvas.clone(),
                t_index,
                path_id: i,
                rng_seed: derive_seed(seed, &[i as u64]),
            })
            .collect();
        Ok(Self { states, paths })
    }

    /// Paths for a layout at latent resolution. The canvas starts from path 0's noise.
    pub fn from_specs(
        specs: &[PathSpec],
        factor: usize,
        shape: Shape,
        seed: u64,
        noise_coupled: bool,
        t_index: usize,
    ) -> Result<Self> {
        let noises = init_noise(shape, seed, noise_coupled, specs.len());
        let mut paths = Vec::with_capacity(specs.len());
        for (spec, noise) in specs.iter().zip(noises) {
            paths.push(FusionPath {
                mask: downsample_mask(&spec.mask, factor)?,
                prompt: spec.prompt.clone(),
                lora: spec.lora,
                object: spec.region,
                noise,
            });
        }
        let canvas = paths[0].noise.clone();
        Self::new(paths, canvas, t_index, seed)
    }

    pub fn canvas(&self) -> &LatentTensor {
        &self.states[0].latent
    }

    pub fn t_index(&self) -> usize {
        self.states[0].t_index
    }

    pub fn masks(&self) -> Vec<BinaryMask> {
        self.paths.iter().map(|p| p.mask.clone()).collect()
    }

    pub fn n_objects(&self) -> usize {
        self.paths.iter().filter_map(|p| p.object).map(|o| o + 1).max().unwrap_or(0)
    }

    /// Replaces every state's latent with `canvas` and advances the step index.
    pub fn advance(&mut self, canvas: LatentTensor, t_index: usize) {
        for s in &mut self.states {
            s.latent = canvas.clone();
            s.t_index = t_index;
        }
    }
}

/// The models a pipeline step needs.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub scheduler: &'a dyn Scheduler,
    pub codec: &'a dyn Codec,
}

/// Instrumentation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    /// Foreground path inputs composited with a bootstrap background.
    pub bootstrap_composites: usize,
    /// Calls to the denoiser.
    pub predictions: usize,
    /// Projection-exchange slots skipped by the foreground gate.
    pub gated_exchanges: usize,
}

impl std::ops::AddAssign for StepStats {
    fn add_assign(&mut self, o: Self) {
        self.bootstrap_composites += o.bootstrap_composites;
        self.predictions += o.predictions;
        self.gated_exchanges += o.gated_exchanges;
    }
}

/// Replaces the outside of a foreground path's mask with a noised constant color
/// during the first `plan.n_steps` steps. Background paths pass through.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_composite(
    latent: &LatentTensor,
    path: &FusionPath,
    color_latent: &LatentTensor,
    steps_done: usize,
    plan: &BootstrapPlan,
    scheduler: &dyn Scheduler,
    t_index: usize,
) -> Result<LatentTensor> {
    if !path.is_foreground() || steps_done >= plan.n_steps {
        return Ok(latent.clone());
    }
    let noised = scheduler.add_noise(color_latent, &path.noise, t_index)?;
    latent.select(&path.mask, &noised)
}

/// Inputs of every path for the step at `t_index`, composited where bootstrapping applies.
///
/// `branch` selects the column of the color table.
#[allow(clippy::too_many_arguments)]
pub fn composite_inputs(
    canvas: &LatentTensor,
    paths: &[FusionPath],
    engine: Engine<'_>,
    plan: &BootstrapPlan,
    colors: &ColorTable,
    branch: usize,
    t_index: usize,
    stats: &mut StepStats,
) -> Result<Vec<LatentTensor>> {
    let total = engine.scheduler.num_steps();
    let done = steps_done(t_index, total);
    paths
        .iter()
        .map(|p| match p.object {
            Some(o) if done < plan.n_steps => {
                stats.bootstrap_composites += 1;
                let rgb = colors.get(o, branch);
                let color = engine
                    .codec
                    .color_to_latent(rgb, canvas.height(), canvas.width());
                bootstrap_composite(canvas, p, &color, done, plan, engine.scheduler, t_index)
            }
            _ => Ok(canvas.clone()),
        })
        .collect()
}

/// A single path's work within one step.
pub struct PathRun<'a> {
    pub input: LatentTensor,
    pub mask: BinaryMask,
    pub prompt: &'a str,
    pub ctx: DenoiseContext,
}

/// Predicts and steps every run with a nonempty mask, concurrently, then merges
/// in run order.
pub fn run_paths(runs: Vec<PathRun<'_>>, engine: Engine<'_>, t_index: usize, stats: &mut StepStats) -> Result<LatentTensor> {
    let live: Vec<PathRun<'_>> = runs.into_iter().filter(|r| !r.mask.is_empty()).collect();
    stats.predictions += live.len();
    let stepped = live
        .par_iter()
        .map(|r| {
            let e = engine.denoiser.predict(&r.input, t_index, r.prompt, &r.ctx)?;
            r.input.ensure_shape(e.shape(), "denoiser output")?;
            engine.scheduler.step(&r.input, &e, t_index)
        })
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<BinaryMask> = live.into_iter().map(|r| r.mask).collect();
    merge_paths(&stepped, &masks)
}

/// One MultiDiffusion step on the whole canvas.
pub fn md_step(
    set: &PathSet,
    engine: Engine<'_>,
    plan: &BootstrapPlan,
    t_index: usize,
    circular: bool,
    stats: &mut StepStats,
) -> Result<PathSet> {
    let colors = assign_bootstrap_colors(plan, set.n_objects(), 1, t_index, plan.seed);
    let inputs = composite_inputs(set.canvas(), &set.paths, engine, plan, &colors, 0, t_index, stats)?;
    let runs = set
        .paths
        .iter()
        .zip(inputs)
        .enumerate()
        .map(|(i, (p, input))| PathRun {
            input,
            mask: p.mask.clone(),
            prompt: &p.prompt,
            ctx: DenoiseContext {
                branch: Branch::Canvas,
                path_id: i,
                foreground: p.is_foreground(),
                lora: p.lora,
                circular,
            },
        })
        .collect();
    let fused = run_paths(runs, engine, t_index, stats)?;
    let mut next = set.clone();
    next.advance(fused, t_index.saturating_sub(1));
    Ok(next)
}
