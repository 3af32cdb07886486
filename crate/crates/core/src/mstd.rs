//! MultiStitchDiffusion: region paths denoised in horizontal windows over a
//! cyclically extended ERP canvas.

use std::ops::Range;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Branch, DenoiseContext, LatentTensor, Shape};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fusion::{
    assign_bootstrap_colors, composite_inputs, run_paths, BootstrapPlan, Engine, PathRun, PathSet, StepStats,
};
use crate::geom::{BinaryMask, ColumnWrap};
use crate::layout::{Layout, PANORAMA_TRIGGER};
use crate::seed::derive_seed;

/// Seed tag of the bootstrap color stream.
pub(crate) const COLOR_TAG: u64 = 0xb007;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window: usize,
    pub stride: usize,
    pub stitch: bool,
    pub pad: usize,
}

impl WindowPlan {
    pub fn new(window: usize, stride: usize, stitch: bool) -> Result<Self> {
        if window == 0 || stride == 0 || stride > window {
            return Err(Error::Config(format!(
                "need 0 < stride <= window, got stride {stride} window {window}"
            )));
        }
        Ok(Self {
            window,
            stride,
            stitch,
            pad: if stitch { window / 2 } else { 0 },
        })
    }

    pub fn padded_width(&self, width: usize) -> usize {
        width + 2 * self.pad
    }
}

/// Column ranges of the sliding windows over a canvas of `canvas_width` columns.
pub fn make_windows(plan: &WindowPlan, canvas_width: usize) -> Vec<Range<usize>> {
    if canvas_width <= plan.window {
        #[allow(clippy::single_range_in_vec_init)]
        return vec![0..canvas_width];
    }
    let last = canvas_width - plan.window;
    let mut out: Vec<Range<usize>> = (0..=last)
        .step_by(plan.stride)
        .map(|o| o..o + plan.window)
        .collect();
    if out.last().map(|r| r.start) != Some(last) {
        out.push(last..canvas_width);
    }
    out
}

/// Sums of window outputs and per-column window counts in padded coordinates.
#[derive(Debug, Clone)]
pub struct WindowAccumulator {
    shape: Shape,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl WindowAccumulator {
    pub fn new(padded: Shape) -> Self {
        Self {
            shape: padded,
            sums: vec![0.0; padded.len()],
            counts: vec![0; padded.width],
        }
    }

    pub fn add(&mut self, start: usize, window: &LatentTensor) -> Result<()> {
        let s = self.shape;
        if window.channels() != s.channels || window.height() != s.height || start + window.width() > s.width {
            return Err(Error::Shape(format!(
                "window {:?} at column {start} does not fit {s:?}",
                window.shape()
            )));
        }
        let w = window.width();
        for (r, row) in window.data().chunks_exact(w).enumerate() {
            let base = r * s.width + start;
            for (acc, &v) in self.sums[base..base + w].iter_mut().zip(row) {
                *acc += f64::from(v);
            }
        }
        for c in &mut self.counts[start..start + w] {
            *c += 1;
        }
        Ok(())
    }

    /// Folds the padded accumulation back onto `width = padded − 2·pad` columns.
    pub fn fold(&self, pad: usize) -> Result<(LatentTensor, Vec<u32>)> {
        stitch_fold(&self.sums, &self.counts, self.shape, pad)
    }
}

/// Folds padded column sums and counts modulo the canvas width, then divides.
pub fn stitch_fold(sums: &[f64], counts: &[u32], padded: Shape, pad: usize) -> Result<(LatentTensor, Vec<u32>)> {
    if padded.width <= 2 * pad || sums.len() != padded.len() || counts.len() != padded.width {
        return Err(Error::Shape(format!("cannot fold {padded:?} with pad {pad}")));
    }
    let width = padded.width - 2 * pad;
    let col = |p: usize| (p + width - pad % width) % width;
    let mut weights = vec![0u32; width];
    for (p, &c) in counts.iter().enumerate() {
        weights[col(p)] += c;
    }
    if let Some(x) = weights.iter().position(|&c| c == 0) {
        return Err(Error::ZeroCoverage { row: 0, col: x });
    }
    let rows = padded.channels * padded.height;
    let mut data = Vec::with_capacity(rows * width);
    let mut acc = vec![0.0f64; width];
    for row in sums.chunks_exact(padded.width) {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (p, &v) in row.iter().enumerate() {
            acc[col(p)] += v;
        }
        data.extend(acc.iter().zip(&weights).map(|(&a, &w)| (a / f64::from(w)) as f32));
    }
    Ok((
        LatentTensor::from_vec(Shape::new(padded.channels, padded.height, width), data)?,
        weights,
    ))
}

/// One windowed step: composite, denoise every window, fold.
pub fn mstd_step(
    set: &PathSet,
    engine: Engine<'_>,
    plan: &BootstrapPlan,
    windows: &WindowPlan,
    t_index: usize,
    stats: &mut StepStats,
) -> Result<PathSet> {
    let canvas = set.canvas();
    let colors = assign_bootstrap_colors(plan, set.n_objects(), 1, t_index, plan.seed);
    let inputs = composite_inputs(canvas, &set.paths, engine, plan, &colors, 0, t_index, stats)?;
    let pad = windows.pad;
    let inputs: Vec<LatentTensor> = inputs.iter().map(|x| x.extend_cyclic(pad)).collect::<Result<_>>()?;
    let masks: Vec<BinaryMask> = set.paths.iter().map(|p| p.mask.extend_cyclic(pad)).collect::<Result<_>>()?;
    let padded = inputs[0].shape();
    let ranges = make_windows(windows, padded.width);
    let outputs = ranges
        .par_iter()
        .map(|r| {
            let mut local = StepStats::default();
            let runs = set
                .paths
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    Ok(PathRun {
                        input: inputs[i].crop_columns(r.start, r.len())?,
                        mask: masks[i].crop_columns(r.start, r.len())?,
                        prompt: &p.prompt,
                        ctx: DenoiseContext {
                            branch: Branch::Canvas,
                            path_id: i,
                            foreground: p.is_foreground(),
                            lora: p.lora,
                            circular: false,
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let fused = run_paths(runs, engine, t_index, &mut local)?;
            Ok((fused, local))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = WindowAccumulator::new(padded);
    for (r, (fused, local)) in ranges.iter().zip(outputs) {
        acc.add(r.start, &fused)?;
        *stats += local;
    }
    let (canvas, _) = acc.fold(pad)?;
    let mut next = set.clone();
    next.advance(canvas, t_index.saturating_sub(1));
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct MstdOutput {
    pub image: RgbImage,
    pub latent: LatentTensor,
    pub stats: StepStats,
}

/// Latent shape of a layout's canvas under `engine`'s codec.
pub fn latent_shape(layout: &Layout, engine: Engine<'_>) -> Result<Shape> {
    let f = engine.codec.factor();
    let g = layout.grid.downscaled(f)?;
    Ok(Shape::new(engine.codec.channels(), g.height(), g.width()))
}

/// Initial path set and bootstrap plan of a run.
pub fn prepare(layout: &Layout, config: &PipelineConfig, engine: Engine<'_>, seed: u64) -> Result<(PathSet, BootstrapPlan)> {
    config.validate()?;
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
    let specs = layout.paths(Some(PANORAMA_TRIGGER));
    let set = PathSet::from_specs(
        &specs,
        engine.codec.factor(),
        shape,
        seed,
        config.noise_coupling,
        config.steps - 1,
    )?;
    let plan = BootstrapPlan {
        n_steps: config.bootstrap,
        coupling: config.coupling(),
        seed: derive_seed(seed, &[COLOR_TAG]),
    };
    Ok((set, plan))
}

/// Full MSTD sampling run.
pub fn mstd_sample(
    layout: &Layout,
    config: &PipelineConfig,
    engine: Engine<'_>,
    seed: u64,
) -> Result<MstdOutput> {
    let (mut set, plan) = prepare(layout, config, engine, seed)?;
    let shape = set.canvas().shape();
    let windows = WindowPlan::new(config.window.unwrap_or(shape.height), config.stride, config.stitch)?;
    let mut stats = StepStats::default();
    for t in (0..config.steps).rev() {
        set = mstd_step(&set, engine, &plan, &windows, t, &mut stats)?;
    }
    let latent = set.canvas().clone();
    Ok(MstdOutput {
        image: engine.codec.decode(&latent)?,
        latent,
        stats,
    })
}
