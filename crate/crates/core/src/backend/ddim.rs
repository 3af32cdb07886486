//! Deterministic DDIM sampling (η = 0).
//!
//! `t_index` counts inference steps: `T - 1` is the noisiest step and a step
//! at `t_index` produces the latent for `t_index - 1` (the clean sample once
//! `t_index == 0`).

use serde::{Deserialize, Serialize};

use super::{LatentTensor, Scheduler};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdimConfig {
    pub beta_start: f64,
    pub beta_end: f64,
    pub train_timesteps: usize,
    pub steps_offset: usize,
}

impl Default for DdimConfig {
    fn default() -> Self {
        Self {
            beta_start: 0.00085,
            beta_end: 0.012,
            train_timesteps: 1000,
            steps_offset: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DdimScheduler {
    /// ᾱ for each inference step, indexed by `t_index`.
    alpha_bars: Vec<f64>,
}

impl DdimScheduler {
    pub fn new(steps: usize, config: DdimConfig) -> Result<Self> {
        if steps == 0 || steps > config.train_timesteps {
            return Err(Error::Config(format!(
                "step count {steps} outside 1..={}",
                config.train_timesteps
            )));
        }
        // scaled-linear betas
        let n = config.train_timesteps;
        let (s, e) = (config.beta_start.sqrt(), config.beta_end.sqrt());
        let mut cum = 1.0;
        let alphas_cumprod: Vec<f64> = (0..n)
            .map(|i| {
                let b = s + (e - s) * i as f64 / (n - 1).max(1) as f64;
                cum *= 1.0 - b * b;
                cum
            })
            .collect();
        let ratio = n / steps;
        let alpha_bars = (0..steps)
            .map(|i| alphas_cumprod[(i * ratio + config.steps_offset).min(n - 1)])
            .collect();
        Ok(Self { alpha_bars })
    }

    pub fn with_steps(steps: usize) -> Result<Self> {
        Self::new(steps, DdimConfig::default())
    }

    fn check(&self, t_index: usize) -> Result<()> {
        if t_index >= self.alpha_bars.len() {
            return Err(Error::Domain(format!(
                "t_index {t_index} outside 0..{}",
                self.alpha_bars.len()
            )));
        }
        Ok(())
    }

    /// ᾱ after stepping from `t_index`; the final step lands on 1.
    pub fn alpha_bar_prev(&self, t_index: usize) -> f64 {
        if t_index == 0 {
            1.0
        } else {
            self.alpha_bars[t_index - 1]
        }
    }

    /// Coefficients `(a, b)` such that `step(x, e) = a·x + b·e` elementwise.
    pub fn step_coefficients(&self, t_index: usize) -> Result<(f64, f64)> {
        self.check(t_index)?;
        let ab = self.alpha_bars[t_index];
        let ap = self.alpha_bar_prev(t_index);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pn) = (ap.sqrt(), (1.0 - ap).sqrt());
        // x0 = (x - sn e) / sa;  x' = pa x0 + pn e
        Ok((pa / sa, pn - pa * sn / sa))
    }
}

impl Scheduler for DdimScheduler {
    fn num_steps(&self) -> usize {
        self.alpha_bars.len()
    }

    fn init_sigma(&self) -> f64 {
        1.0
    }

    fn alpha_bar(&self, t_index: usize) -> Result<f64> {
        self.check(t_index)?;
        Ok(self.alpha_bars[t_index])
    }

    fn step(&self, latent: &LatentTensor, residual: &LatentTensor, t_index: usize) -> Result<LatentTensor> {
        let (a, b) = self.step_coefficients(t_index)?;
        latent.zip_map(residual, |x, e| (a * f64::from(x) + b * f64::from(e)) as f32)
    }
}
