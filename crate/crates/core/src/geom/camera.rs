use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{wrap_lon, SphericalCoord};
use crate::error::{Error, Result};

/// A square pinhole view of the sphere. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraPose {
    pub lon: f64,
    pub lat: f64,
    pub roll: f64,
    fov: f64,
    image_size: usize,
}

/// On-disk form of a [`CameraPose`], in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub lon_deg: f64,
    pub lat_deg: f64,
    pub roll_deg: f64,
    pub fov_deg: f64,
    pub size: usize,
}

impl CameraPose {
    pub fn new(lon: f64, lat: f64, roll: f64, fov: f64, image_size: usize) -> Result<Self> {
        if !(fov > 0.0 && fov < PI) {
            return Err(Error::Domain(format!("fov {fov} rad outside (0, π)")));
        }
        if image_size == 0 {
            return Err(Error::Domain("camera image size must be positive".into()));
        }
        if !(lon.is_finite() && lat.is_finite() && roll.is_finite()) {
            return Err(Error::Domain("camera angles must be finite".into()));
        }
        Ok(Self {
            lon,
            lat,
            roll,
            fov,
            image_size,
        })
    }

    pub fn fov(&self) -> f64 {
        self.fov
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn axis(&self) -> SphericalCoord {
        SphericalCoord::new(wrap_lon(self.lon), self.lat)
    }

    /// Pixels per unit of tangent-plane distance.
    pub fn focal(&self) -> f64 {
        (self.image_size as f64 / 2.0) / (self.fov / 2.0).tan()
    }

    /// Same camera turned about the polar axis.
    pub fn yawed(&self, yaw: f64) -> Self {
        Self {
            lon: wrap_lon(self.lon + yaw),
            ..*self
        }
    }

    pub fn with_size(&self, image_size: usize) -> Result<Self> {
        Self::new(self.lon, self.lat, self.roll, self.fov, image_size)
    }
}

impl TryFrom<CameraRecord> for CameraPose {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        CameraPose::new(
            r.lon_deg.to_radians(),
            r.lat_deg.to_radians(),
            r.roll_deg.to_radians(),
            r.fov_deg.to_radians(),
            r.size,
        )
    }
}

impl From<CameraPose> for CameraRecord {
    fn from(c: CameraPose) -> Self {
        CameraRecord {
            lon_deg: c.lon.to_degrees(),
            lat_deg: c.lat.to_degrees(),
            roll_deg: c.roll.to_degrees(),
            fov_deg: c.fov.to_degrees(),
            size: c.image_size,
        }
    }
}

/// Gnomonic projection of `c` into the view of `cam`.
///
/// Returns the continuous pixel position, `None` when `c` lies on or behind
/// the plane through the sphere center orthogonal to the camera axis. The
/// result may fall outside `[0, size)` when `c` is visible but outside the FoV.
pub fn gnomonic_project(c: SphericalCoord, cam: &CameraPose) -> Option<(f64, f64)> {
    let (sl0, cl0) = cam.lat.sin_cos();
    let (sl, cl) = c.lat.sin_cos();
    let (sd, cd) = (c.lon - cam.lon).sin_cos();
    let k = sl0 * sl + cl0 * cl * cd;
    if k <= 0.0 {
        return None;
    }
    let tx = cl * sd / k;
    let ty = (cl0 * sl - sl0 * cl * cd) / k;
    let (sr, cr) = cam.roll.sin_cos();
    let rx = tx * cr + ty * sr;
    let ry = -tx * sr + ty * cr;
    let f = cam.focal();
    let half = cam.image_size as f64 / 2.0;
    Some((half + f * rx, half - f * ry))
}

/// Inverse of [`gnomonic_project`] for any pixel position.
pub fn gnomonic_unproject(x: f64, y: f64, cam: &CameraPose) -> SphericalCoord {
    let f = cam.focal();
    let half = cam.image_size as f64 / 2.0;
    let rx = (x - half) / f;
    let ry = (half - y) / f;
    let (sr, cr) = cam.roll.sin_cos();
    let tx = rx * cr - ry * sr;
    let ty = rx * sr + ry * cr;
    let rho = (tx * tx + ty * ty).sqrt();
    if rho == 0.0 {
        return cam.axis();
    }
    let c = rho.atan();
    let (sc, cc) = c.sin_cos();
    let (sl0, cl0) = cam.lat.sin_cos();
    let lat = (cc * sl0 + ty * sc * cl0 / rho).clamp(-1.0, 1.0).asin();
    let lon = cam.lon + (tx * sc).atan2(rho * cl0 * cc - ty * sl0 * sc);
    SphericalCoord::new(wrap_lon(lon), lat)
}
