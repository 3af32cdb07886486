use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{extend_columns, roll_columns, BinaryMask, ColumnWrap};

/// Channel-major `(c, h, w)` latent, f32 like the wire format.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl LatentTensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, v: f32) -> Self {
        Self {
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            data: vec![v; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} values do not fill {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            data,
        })
    }

    /// Constant value per channel.
    pub fn constant(values: &[f32], height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(values.len() * height * width);
        for &v in values {
            data.extend(std::iter::repeat_n(v, height * width));
        }
        Self {
            channels: values.len(),
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_shape(&self, other: Shape, what: &str) -> Result<()> {
        if self.shape() != other {
            return Err(Error::Shape(format!(
                "{what}: expected {other:?}, got {:?}",
                self.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    fn with_data(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        other.ensure_shape(self.shape(), "zip_map")?;
        Ok(self.with_data(self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f64::from(a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
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
        let mut data = Vec::with_capacity(self.channels * self.height * len);
        for row in self.data.chunks_exact(self.width) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: len,
            data,
        })
    }

    /// `mask ⊙ self + (1 − mask) ⊙ other`, mask broadcast over channels.
    pub fn select(&self, mask: &BinaryMask, other: &Self) -> Result<Self> {
        other.ensure_shape(self.shape(), "select")?;
        if mask.dims() != (self.width, self.height) {
            return Err(Error::Shape(format!(
                "mask {:?} does not match latent {}x{}",
                mask.dims(),
                self.width,
                self.height
            )));
        }
        let m = mask.values();
        let n = self.width * self.height;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .enumerate()
            .map(|(i, (&a, &b))| if m[i % n] != 0 { a } else { b })
            .collect();
        Ok(self.with_data(data))
    }

    /// Little-endian f32, C order. This is the adapter wire layout.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != shape.len() * 4 {
            return Err(Error::Shape(format!(
                "{} bytes do not hold {shape:?} as f32",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::from_vec(shape, data)
    }
}

impl ColumnWrap for LatentTensor {
    fn roll_columns(&self, shift: isize) -> Self {
        self.with_data(roll_columns(&self.data, self.width, shift))
    }

    fn extend_cyclic(&self, pad: usize) -> Result<Self> {
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width + 2 * pad,
            data: extend_columns(&self.data, self.width, pad)?,
        })
    }

    fn column_count(&self) -> usize {
        self.width
    }
}
