//! Mask transfer between ERP canvases and perspective views.

use super::{
    erp_to_spherical, gnomonic_project, gnomonic_unproject, spherical_to_erp, BinaryMask,
    CameraPose, ErpGrid, PixelBox, SphericalCoord,
};
use crate::error::{Error, Result};

/// Nearest ERP pixel for a sphere direction: columns wrap, rows clamp.
pub fn erp_pixel_at(c: SphericalCoord, grid: ErpGrid) -> (usize, usize) {
    let (u, v) = spherical_to_erp(c, grid);
    let col = (u.floor() as i64).rem_euclid(grid.width() as i64) as usize;
    let row = (v.floor().max(0.0) as usize).min(grid.height() - 1);
    (col, row)
}

fn erp_grid_of(mask: &BinaryMask) -> Result<ErpGrid> {
    ErpGrid::new(mask.width(), mask.height())
}

/// Samples an ERP mask into the perspective view of `cam` (nearest neighbor).
pub fn project_mask_erp_to_persp(mask: &BinaryMask, cam: &CameraPose) -> Result<BinaryMask> {
    let grid = erp_grid_of(mask)?;
    let n = cam.image_size();
    Ok(BinaryMask::from_fn(n, n, |x, y| {
        let s = gnomonic_unproject(x as f64 + 0.5, y as f64 + 0.5, cam);
        let (col, row) = erp_pixel_at(s, grid);
        mask.get(col, row)
    }))
}

/// Rasterizes a perspective-space box onto `grid`: an ERP pixel is set when
/// its center projects inside the box.
pub fn reproject_box_to_erp(b: PixelBox, cam: &CameraPose, grid: ErpGrid) -> BinaryMask {
    BinaryMask::from_fn(grid.width(), grid.height(), |col, row| {
        // pixel centers are always inside the grid
        let s = erp_to_spherical(col as f64 + 0.5, row as f64 + 0.5, grid)
            .expect("pixel center inside grid");
        match gnomonic_project(s, cam) {
            Some((x, y)) => b.contains(x, y),
            None => false,
        }
    })
}

/// Bounding box of a perspective mask, re-projected onto an empty ERP canvas.
pub fn reproject_bbox_to_erp(
    persp_mask: &BinaryMask,
    cam: &CameraPose,
    grid: ErpGrid,
) -> Result<BinaryMask> {
    let n = cam.image_size();
    if persp_mask.dims() != (n, n) {
        return Err(Error::Shape(format!(
            "perspective mask is {:?}, camera expects {n}x{n}",
            persp_mask.dims()
        )));
    }
    let b = persp_mask
        .bbox()
        .ok_or_else(|| Error::Domain("cannot reproject the bounding box of an empty mask".into()))?;
    Ok(reproject_box_to_erp(b, cam, grid))
}

/// Closed bounds `[x0, y0, x1, y1]`, in view pixels, of the mask's ERP pixel
/// centers projected into `cam`; `None` when no set pixel faces the camera.
pub fn projected_center_bounds(mask: &BinaryMask, cam: &CameraPose) -> Result<Option<[f64; 4]>> {
    let grid = erp_grid_of(mask)?;
    let mut b: Option<[f64; 4]> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            let s = erp_to_spherical(x as f64 + 0.5, y as f64 + 0.5, grid)?;
            if let Some((px, py)) = gnomonic_project(s, cam) {
                b = Some(match b {
                    None => [px, py, px, py],
                    Some([x0, y0, x1, y1]) => [x0.min(px), y0.min(py), x1.max(px), y1.max(py)],
                });
            }
        }
    }
    Ok(b)
}

/// ERP pixels whose centers project inside closed view-space bounds. Fed with
/// [`projected_center_bounds`] this is idempotent: every set pixel lands inside
/// the bounds and the extreme ones pin them, so a second pass finds the same box.
pub fn reproject_bounds_to_erp(b: [f64; 4], cam: &CameraPose, grid: ErpGrid) -> BinaryMask {
    let [x0, y0, x1, y1] = b;
    BinaryMask::from_fn(grid.width(), grid.height(), |col, row| {
        let s = erp_to_spherical(col as f64 + 0.5, row as f64 + 0.5, grid)
            .expect("pixel center inside grid");
        matches!(gnomonic_project(s, cam), Some((x, y)) if (x0..=x1).contains(&x) && (y0..=y1).contains(&y))
    })
}

/// ERP pixels whose centers are visible inside the full view of `cam`.
pub fn view_footprint(cam: &CameraPose, grid: ErpGrid) -> BinaryMask {
    let n = cam.image_size();
    reproject_box_to_erp(
        PixelBox {
            x0: 0,
            y0: 0,
            x1: n,
            y1: n,
        },
        cam,
        grid,
    )
}
