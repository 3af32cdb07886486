//! Deterministic stand-in for a diffusion model.
//!
//! The residual is `α·blur(latent) − β·field(prompt, t)`, so the predicted
//! clean latent leans toward the prompt's field. The field is a sum of a few
//! plane waves seeded from the prompt, evaluated in the coordinates of the
//! tensor it is given, so the mock is translation equivariant and carries no
//! state between calls. The small box blur gives each cell a little spatial
//! context.
//!
//! With `focus > 0` the field's amplitude follows the local variance of the
//! input, normalized to mean one: content forms where the latent already has
//! structure and is weak over flat regions. This is the only channel through
//! which a flat bootstrap surround can pull a prompt into its mask.

use std::f32::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenoiseContext, Denoiser, LatentTensor, Shape};
use crate::error::{Error, Result};
use crate::seed::{hash_str, rng};

const WAVES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockDenoiser {
    pub alpha: f32,
    pub beta: f32,
    /// Box blur radius in cells; 0 makes the mock pointwise.
    pub blur_radius: usize,
    /// Amplitude of the timestep-dependent part of the field.
    pub detail: f32,
    /// Blend between a uniform field (0) and one weighted by local input variance (1).
    #[serde(default)]
    pub focus: f32,
    pub seed: u64,
}

impl Default for MockDenoiser {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            blur_radius: 1,
            detail: 0.25,
            focus: 1.0,
            seed: 0x5eed,
        }
    }
}

struct Wave {
    amp: f32,
    kx: f32,
    ky: f32,
    phase: f32,
}

fn waves(seed: u64, tags: &[u64]) -> Vec<Wave> {
    let mut r = rng(seed, tags);
    let amp = (2.0 / WAVES as f32).sqrt();
    (0..WAVES)
        .map(|_| {
            // wavelengths between 6 and 24 cells keep the field smooth
            let wavelength: f32 = r.random_range(6.0..24.0);
            let theta: f32 = r.random_range(0.0..TAU);
            let k = TAU / wavelength;
            Wave {
                amp,
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: r.random_range(0.0..TAU),
            }
        })
        .collect()
}

/// Adds `scale · Σ amp sin(kx x + ky y + φ)` to one plane, using separable tables.
fn add_waves(plane: &mut [f32], h: usize, w: usize, ws: &[Wave], scale: f32) {
    for wave in ws {
        let sx: Vec<(f32, f32)> = (0..w).map(|x| (wave.kx * x as f32).sin_cos()).collect();
        for y in 0..h {
            let (sy, cy) = (wave.ky * y as f32 + wave.phase).sin_cos();
            let row = &mut plane[y * w..(y + 1) * w];
            for (v, &(s, c)) in row.iter_mut().zip(&sx) {
                // sin(a + b) = sin a cos b + cos a sin b
                *v += scale * wave.amp * (s * cy + c * sy);
            }
        }
    }
}

fn box_blur(src: &LatentTensor, r: usize, wrap_x: bool) -> LatentTensor {
    if r == 0 {
        return src.clone();
    }
    let (h, w) = (src.height(), src.width());
    let mut out = Vec::with_capacity(src.data().len());
    let mut tmp = vec![0.0f32; h * w];
    let ri = r as isize;
    for c in 0..src.channels() {
        let p = src.plane(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for d in -ri..=ri {
                    let xx = x as isize + d;
                    let xx = if wrap_x {
                        xx.rem_euclid(w as isize)
                    } else {
                        xx.clamp(0, w as isize - 1)
                    };
                    acc += p[y * w + xx as usize];
                }
                tmp[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for d in -ri..=ri {
                    let yy = (y as isize + d).clamp(0, h as isize - 1) as usize;
                    acc += tmp[yy * w + x];
                }
                out.push(acc / ((2 * r + 1) * (2 * r + 1)) as f32);
            }
        }
    }
    LatentTensor::from_vec(src.shape(), out).expect("blur keeps shape")
}

const FOCUS_RADIUS: usize = 3;

/// Local variance summed over channels, scaled to mean one. One weight per cell.
fn focus_weights(latent: &LatentTensor, wrap_x: bool) -> Vec<f32> {
    let mean = box_blur(latent, FOCUS_RADIUS, wrap_x);
    let sq = box_blur(&latent.map(|v| v * v), FOCUS_RADIUS, wrap_x);
    let n = latent.height() * latent.width();
    let mut e = vec![0.0f32; n];
    for (i, (m, q)) in mean.data().iter().zip(sq.data()).enumerate() {
        e[i % n] += (q - m * m).max(0.0);
    }
    let total: f64 = e.iter().map(|&v| f64::from(v)).sum();
    if total <= 0.0 {
        return vec![1.0; n];
    }
    let scale = (n as f64 / total) as f32;
    e.iter_mut().for_each(|v| *v *= scale);
    e
}

impl MockDenoiser {
    fn tags(prompt: &str, lora: bool, channel: usize) -> [u64; 3] {
        [hash_str(prompt), u64::from(lora), channel as u64]
    }

    /// The timestep-independent part of the field: what "drawing `prompt`" looks like.
    pub fn signature(&self, prompt: &str, lora: bool, shape: Shape) -> LatentTensor {
        let mut t = LatentTensor::zeros(shape);
        let n = shape.height * shape.width;
        for c in 0..shape.channels {
            let ws = waves(self.seed, &Self::tags(prompt, lora, c));
            add_waves(&mut t.data_mut()[c * n..(c + 1) * n], shape.height, shape.width, &ws, 1.0);
        }
        t
    }

    pub fn field(&self, prompt: &str, lora: bool, t_index: usize, shape: Shape) -> LatentTensor {
        let mut t = self.signature(prompt, lora, shape);
        if self.detail != 0.0 {
            let n = shape.height * shape.width;
            for c in 0..shape.channels {
                let [a, b, cc] = Self::tags(prompt, lora, c);
                let ws = waves(self.seed, &[a, b, cc, 1_000 + t_index as u64]);
                add_waves(&mut t.data_mut()[c * n..(c + 1) * n], shape.height, shape.width, &ws, self.detail);
            }
        }
        t
    }
}

impl Denoiser for MockDenoiser {
    fn predict(
        &self,
        latent: &LatentTensor,
        t_index: usize,
        prompt: &str,
        ctx: &DenoiseContext,
    ) -> Result<LatentTensor> {
        if !latent.is_finite() {
            return Err(Error::Backend("non-finite latent passed to mock denoiser".into()));
        }
        let blurred = box_blur(latent, self.blur_radius, ctx.circular);
        if self.beta == 0.0 {
            return Ok(blurred.map(|v| self.alpha * v));
        }
        let mut field = self.field(prompt, ctx.lora, t_index, latent.shape());
        if self.focus > 0.0 {
            let w = focus_weights(latent, ctx.circular);
            let n = w.len();
            for (i, f) in field.data_mut().iter_mut().enumerate() {
                *f *= 1.0 - self.focus + self.focus * w[i % n];
            }
        }
        blurred.zip_map(&field, |x, f| self.alpha * x - self.beta * f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Branch;

    fn ctx() -> DenoiseContext {
        DenoiseContext::new(Branch::Canvas)
    }

    fn noise(shape: Shape) -> LatentTensor {
        crate::backend::gaussian(shape, 11)
    }

    #[test]
    fn deterministic() {
        let m = MockDenoiser::default();
        let x = noise(Shape::new(4, 8, 16));
        let a = m.predict(&x, 3, "cow", &ctx()).unwrap();
        let b = m.predict(&x, 3, "cow", &ctx()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prompt_sensitive() {
        let m = MockDenoiser::default();
        let x = noise(Shape::new(4, 8, 16));
        let a = m.predict(&x, 3, "cow", &ctx()).unwrap();
        let b = m.predict(&x, 3, "car", &ctx()).unwrap();
        assert!(a.l2_distance(&b) > 0.0);
    }

    #[test]
    fn zero_latent_zero_beta_is_zero() {
        let m = MockDenoiser {
            beta: 0.0,
            ..Default::default()
        };
        let x = LatentTensor::zeros(Shape::new(4, 8, 16));
        let r = m.predict(&x, 0, "cow", &ctx()).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn field_is_translation_equivariant() {
        let m = MockDenoiser::default();
        let wide = m.field("tree", false, 2, Shape::new(1, 6, 40));
        // a crop of the wide field is not the field of the crop: coordinates are local
        let narrow = m.field("tree", false, 2, Shape::new(1, 6, 20));
        assert_eq!(wide.crop_columns(0, 20).unwrap().max_abs_diff(&narrow), 0.0);
    }

    #[test]
    fn circular_blur_commutes_with_roll() {
        use crate::geom::ColumnWrap;
        let m = MockDenoiser::default();
        let x = noise(Shape::new(2, 6, 24));
        let c = DenoiseContext {
            circular: true,
            ..ctx()
        };
        let a = box_blur(&x.roll_columns(5), 1, true);
        let b = box_blur(&x, 1, true).roll_columns(5);
        assert_eq!(a, b);
        let _ = m.predict(&x, 0, "x", &c).unwrap();
    }

    #[test]
    fn focus_follows_structure() {
        let m = MockDenoiser {
            alpha: 0.0,
            focus: 1.0,
            ..Default::default()
        };
        let shape = Shape::new(1, 16, 32);
        // textured left half, flat right half
        let x = LatentTensor::from_vec(
            shape,
            (0..16 * 32).map(|i| if i % 32 < 16 { ((i * 7919) % 13) as f32 - 6.0 } else { 2.0 }).collect(),
        )
        .unwrap();
        let r = m.predict(&x, 0, "cow", &ctx()).unwrap();
        let f = m.field("cow", false, 0, shape);
        let energy = |t: &LatentTensor, lo: usize, hi: usize| -> f32 {
            (0..16).flat_map(|y| (lo..hi).map(move |c| (y, c))).map(|(y, c)| t.get(0, y, c).powi(2)).sum()
        };
        // flat cells far from the edge get no field at all
        assert!(energy(&r, 24, 32) < 1e-9);
        assert!(energy(&r, 0, 12) > energy(&f, 0, 12));
        let w = focus_weights(&x, false);
        let mean = w.iter().sum::<f32>() / w.len() as f32;
        assert!((mean - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_nan() {
        let m = MockDenoiser::default();
        let mut x = LatentTensor::zeros(Shape::new(1, 2, 2));
        x.data_mut()[0] = f32::NAN;
        assert!(m.predict(&x, 0, "p", &ctx()).is_err());
    }
}
