//! Sphere, equirectangular (ERP) and perspective coordinate math.
//!
//! Conventions used throughout the crate:
//!
//! * ERP pixel `u` runs left to right, `v` top to bottom. Longitude is `-π`
//!   at `u = 0` and latitude is `+π/2` at `v = 0`.
//! * Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`; its sample point is the
//!   center `(i + 0.5, j + 0.5)`.
//! * Unit vectors are `(cos lat cos lon, cos lat sin lon, sin lat)`.

mod camera;
mod cyclic;
mod icosahedron;
mod mask;
mod projection;

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use camera::{gnomonic_project, gnomonic_unproject, CameraPose, CameraRecord};
pub use cyclic::{
    columns_to_yaw, extend_columns, fold_columns, roll_columns, yaw_to_columns, ColumnWrap,
};
pub use icosahedron::{icosahedron_cameras, icosahedron_face_centers};
pub use mask::{BinaryMask, PixelBox};
pub use projection::{
    erp_pixel_at, project_mask_erp_to_persp, projected_center_bounds, reproject_bbox_to_erp,
    reproject_bounds_to_erp, reproject_box_to_erp, view_footprint,
};

/// Dimensions of an equirectangular canvas. Always 2:1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct ErpGrid {
    width: usize,
    height: usize,
}

impl ErpGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || width != 2 * height {
            return Err(Error::Shape(format!(
                "ERP grid must be 2:1 and non-empty, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    /// Grid with the given height and twice that width.
    pub fn with_height(height: usize) -> Result<Self> {
        Self::new(2 * height, height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// The grid shrunk by an integer factor, e.g. pixel grid to latent grid.
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.height.is_multiple_of(factor) {
            return Err(Error::Shape(format!(
                "factor {factor} does not divide ERP height {}",
                self.height
            )));
        }
        Self::with_height(self.height / factor)
    }
}

impl Default for ErpGrid {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 512,
        }
    }
}

impl TryFrom<(usize, usize)> for ErpGrid {
    type Error = Error;

    fn try_from((w, h): (usize, usize)) -> Result<Self> {
        Self::new(w, h)
    }
}

impl From<ErpGrid> for (usize, usize) {
    fn from(g: ErpGrid) -> Self {
        (g.width, g.height)
    }
}

/// A direction on the unit sphere, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub lon: f64,
    pub lat: f64,
}

impl SphericalCoord {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn to_unit_vector(self) -> [f64; 3] {
        let (sl, cl) = self.lat.sin_cos();
        let (so, co) = self.lon.sin_cos();
        [cl * co, cl * so, sl]
    }

    pub fn from_vector(v: [f64; 3]) -> Self {
        let [x, y, z] = v;
        let r = (x * x + y * y).sqrt();
        Self {
            lon: wrap_lon(y.atan2(x)),
            lat: z.atan2(r),
        }
    }

    /// Great-circle distance in radians.
    pub fn angular_distance(self, other: SphericalCoord) -> f64 {
        let a = self.to_unit_vector();
        let b = other.to_unit_vector();
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let cn = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        cn.atan2(dot)
    }
}

/// Wraps a longitude into `[-π, π)`.
pub fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Continuous ERP pixel position to sphere. `u == width` wraps to `-π`.
pub fn erp_to_spherical(u: f64, v: f64, grid: ErpGrid) -> Result<SphericalCoord> {
    let (w, h) = (grid.width as f64, grid.height as f64);
    if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
        return Err(Error::Domain(format!(
            "pixel ({u}, {v}) outside ERP grid {}x{}",
            grid.width, grid.height
        )));
    }
    let lon = if u == w { -PI } else { TAU * u / w - PI };
    let lat = FRAC_PI_2 - PI * v / h;
    Ok(SphericalCoord { lon, lat })
}

/// Sphere to continuous ERP pixel position.
pub fn spherical_to_erp(c: SphericalCoord, grid: ErpGrid) -> (f64, f64) {
    let u = (c.lon + PI) / TAU * grid.width as f64;
    let v = (FRAC_PI_2 - c.lat) / PI * grid.height as f64;
    (u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> ErpGrid {
        ErpGrid::default()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn erp_examples() {
        let c = erp_to_spherical(0.0, 0.0, grid()).unwrap();
        assert!(close(c.lon, -PI) && close(c.lat, FRAC_PI_2));
        let c = erp_to_spherical(512.0, 256.0, grid()).unwrap();
        assert!(close(c.lon, 0.0) && close(c.lat, 0.0));
        let c = erp_to_spherical(768.0, 128.0, grid()).unwrap();
        assert!(close(c.lon, FRAC_PI_2) && close(c.lat, PI / 4.0));
    }

    #[test]
    fn erp_inverse_examples() {
        let (u, v) = spherical_to_erp(SphericalCoord::new(0.0, 0.0), grid());
        assert!(close(u, 512.0) && close(v, 256.0));
        let (u, v) = spherical_to_erp(SphericalCoord::new(-PI, FRAC_PI_2), grid());
        assert!(close(u, 0.0) && close(v, 0.0));
    }

    #[test]
    fn erp_out_of_range() {
        assert!(erp_to_spherical(-0.5, 3.0, grid()).is_err());
        assert!(erp_to_spherical(3.0, 512.5, grid()).is_err());
        assert!(erp_to_spherical(f64::NAN, 3.0, grid()).is_err());
    }

    #[test]
    fn grid_must_be_two_to_one() {
        assert!(ErpGrid::new(100, 100).is_err());
        assert!(ErpGrid::new(0, 0).is_err());
        assert_eq!(ErpGrid::default().downscaled(8).unwrap(), ErpGrid::new(128, 64).unwrap());
        assert!(ErpGrid::default().downscaled(3).is_err());
    }

    #[test]
    fn wrap_lon_range() {
        for x in [-10.0, -PI, -1e-300, 0.0, PI, 3.0 * PI, 100.0] {
            let w = wrap_lon(x);
            assert!((-PI..PI).contains(&w), "{x} -> {w}");
        }
    }

    proptest! {
        #[test]
        fn erp_round_trip(u in 0.0f64..1024.0, v in 0.0f64..512.0) {
            let c = erp_to_spherical(u, v, grid()).unwrap();
            let (u2, v2) = spherical_to_erp(c, grid());
            prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        }

        #[test]
        fn vector_round_trip(lon in -PI..PI, lat in -1.5f64..1.5) {
            let c = SphericalCoord::from_vector(SphericalCoord::new(lon, lat).to_unit_vector());
            prop_assert!((c.lat - lat).abs() < 1e-12);
            prop_assert!(SphericalCoord::new(lon, lat).angular_distance(c) < 1e-12);
        }
    }
}
