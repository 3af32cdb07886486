use rand_distr::{Distribution, StandardNormal};

use super::{LatentTensor, Shape};
use crate::seed::rng;

/// Standard normal tensor from a seed.
pub fn gaussian(shape: Shape, seed: u64) -> LatentTensor {
    let mut r = rng(seed, &[]);
    let data = (0..shape.len()).map(|_| StandardNormal.sample(&mut r)).collect();
    LatentTensor::from_vec(shape, data).expect("length matches shape")
}

/// Initial latents for `n_paths` denoising paths.
///
/// Coupled paths share a single draw; otherwise path `i` gets its own stream.
/// Path 0 draws the same values either way.
pub fn init_noise(shape: Shape, seed: u64, coupled: bool, n_paths: usize) -> Vec<LatentTensor> {
    assert!(n_paths >= 1, "at least one path");
    if coupled {
        let z = gaussian(shape, crate::seed::derive_seed(seed, &[0]));
        vec![z; n_paths]
    } else {
        (0..n_paths)
            .map(|i| gaussian(shape, crate::seed::derive_seed(seed, &[i as u64])))
            .collect()
    }
}
