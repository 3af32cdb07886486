use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }
}

/// Row-major `{0, 1}` raster, on an ERP grid or a square perspective view.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a mask from raw values, rejecting anything other than 0 or 1.
    pub fn from_values(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "mask data has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|&v| v > 1) {
            return Err(Error::Layout(format!(
                "mask value {} at index {bad} is not binary",
                data[bad]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Filled rectangle, clipped to the raster.
    pub fn rect(width: usize, height: usize, b: PixelBox) -> Self {
        Self::from_fn(width, height, |x, y| {
            x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .data
                .iter()
                .zip(&other.data)
                .any(|(&a, &b)| a != 0 && b != 0)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "cannot union {:?} with {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Tight axis-aligned bounding box, ignoring wrap-around.
    pub fn bbox(&self) -> Option<PixelBox> {
        let mut b: Option<PixelBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let bb = b.get_or_insert(PixelBox {
                        x0: x,
                        y0: y,
                        x1: x + 1,
                        y1: y + 1,
                    });
                    bb.x0 = bb.x0.min(x);
                    bb.x1 = bb.x1.max(x + 1);
                    bb.y1 = y + 1;
                }
            }
        }
        b
    }

    /// Rows that contain at least one foreground pixel.
    pub fn occupied_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.height).filter(move |&y| {
            self.data[y * self.width..(y + 1) * self.width]
                .iter()
                .any(|&v| v != 0)
        })
    }

    /// Occupied columns as a boolean profile.
    pub fn column_profile(&self) -> Vec<bool> {
        let mut cols = vec![false; self.width];
        for y in 0..self.height {
            for (x, c) in cols.iter_mut().enumerate() {
                *c |= self.data[y * self.width + x] != 0;
            }
        }
        cols
    }

    /// Columns `[start, start + len)`, no wrap-around.
    pub fn crop_columns(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.width {
            return Err(Error::Shape(format!(
                "column crop {start}..{} outside width {}",
                start + len,
                self.width
            )));
        }
        let data = self
            .data
            .chunks_exact(self.width)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(Self::from_parts(len, self.height, data))
    }

    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    /// 8-bit grayscale, 0 for background and 255 for foreground.
    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    /// Accepts only 0 and 255 so a resampled or anti-aliased PNG is caught early.
    pub fn from_gray_image(img: &GrayImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Vec::with_capacity(w * h);
        for (x, y, p) in img.enumerate_pixels() {
            match p.0[0] {
                0 => data.push(0),
                255 => data.push(1),
                v => {
                    return Err(Error::Layout(format!(
                        "mask pixel ({x}, {y}) has value {v}; masks must be 0 or 255"
                    )))
                }
            }
        }
        Ok(Self::from_parts(w, h, data))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.to_gray_image().save(path)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Image(other),
            })?
            .to_luma8();
        Self::from_gray_image(&img)
    }
}
