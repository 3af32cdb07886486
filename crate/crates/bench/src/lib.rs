//! Shared fixtures for the criterion benches.

use panodense_core::dsynview::{scene_layout, scenes, MaskSize, MaskType};
use panodense_core::{BinaryMask, ErpGrid, LatentTensor, Layout, PixelBox, Shape};

/// First benchmark scene with reprojected M-size masks.
pub fn scene(width: usize, height: usize) -> Layout {
    let grid = ErpGrid::new(width, height).expect("valid grid");
    scene_layout(&scenes(MaskSize::M, MaskType::ErpReproj)[0], grid, &Default::default()).expect("scene fits the grid")
}

/// Deterministic non-constant latents, one per path.
pub fn latents(shape: Shape, n: usize) -> Vec<LatentTensor> {
    (0..n)
        .map(|k| {
            let data = (0..shape.len()).map(|i| ((i * 31 + k * 7) % 97) as f32 / 48.5 - 1.0).collect();
            LatentTensor::from_vec(shape, data).expect("length matches shape")
        })
        .collect()
}

/// Background plus `n` vertical stripes covering a `width`x`height` canvas.
pub fn stripe_masks(width: usize, height: usize, n: usize) -> Vec<BinaryMask> {
    let mut masks = vec![BinaryMask::ones(width, height)];
    let w = width / (n + 1);
    for k in 0..n {
        let x0 = k * w + w / 2;
        masks.push(BinaryMask::rect(width, height, PixelBox { x0, y0: 0, x1: x0 + w, y1: height }));
    }
    masks
}
