//! Horizontal wrap-around helpers for ERP-aligned rasters.
//!
//! All functions treat `data` as rows of `width` columns stacked back to back,
//! so a multi-channel tensor is just more rows.

use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Quantizes a yaw angle to a whole number of ERP columns.
pub fn yaw_to_columns(yaw: f64, width: usize) -> isize {
    (yaw / TAU * width as f64).round() as isize
}

pub fn columns_to_yaw(cols: isize, width: usize) -> f64 {
    TAU * cols as f64 / width as f64
}

/// Circular shift to the right by `shift` columns (negative shifts left).
pub fn roll_columns<T: Copy>(data: &[T], width: usize, shift: isize) -> Vec<T> {
    assert!(width > 0 && data.len().is_multiple_of(width), "data is not a whole number of rows");
    let k = shift.rem_euclid(width as isize) as usize;
    if k == 0 {
        return data.to_vec();
    }
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(width) {
        out.extend_from_slice(&row[width - k..]);
        out.extend_from_slice(&row[..width - k]);
    }
    out
}

/// Widens each row by `pad` columns on both sides, copying from the opposite edge.
pub fn extend_columns<T: Copy>(data: &[T], width: usize, pad: usize) -> Result<Vec<T>> {
    if pad > width {
        return Err(Error::Shape(format!(
            "cyclic pad {pad} exceeds width {width}"
        )));
    }
    assert!(width > 0 && data.len().is_multiple_of(width), "data is not a whole number of rows");
    let mut out = Vec::with_capacity(data.len() / width * (width + 2 * pad));
    for row in data.chunks_exact(width) {
        out.extend_from_slice(&row[width - pad..]);
        out.extend_from_slice(row);
        out.extend_from_slice(&row[..pad]);
    }
    Ok(out)
}

/// Averages every padded column back onto its cyclic source column.
pub fn fold_columns(data: &[f64], padded_width: usize, pad: usize) -> Result<Vec<f64>> {
    if padded_width <= 2 * pad {
        return Err(Error::Shape(format!(
            "padded width {padded_width} too small for pad {pad}"
        )));
    }
    let width = padded_width - 2 * pad;
    let mut out = Vec::with_capacity(data.len() / padded_width * width);
    let mut sum = vec![0.0; width];
    let mut n = vec![0u32; width];
    for row in data.chunks_exact(padded_width) {
        sum.iter_mut().for_each(|s| *s = 0.0);
        n.iter_mut().for_each(|c| *c = 0);
        for (p, &v) in row.iter().enumerate() {
            let c = (p + width - pad % width) % width;
            sum[c] += v;
            n[c] += 1;
        }
        out.extend(sum.iter().zip(&n).map(|(s, &c)| s / f64::from(c)));
    }
    Ok(out)
}

/// Types laid out on ERP columns that can be rotated about the polar axis.
pub trait ColumnWrap: Sized {
    /// Circular shift right by `shift` columns.
    fn roll_columns(&self, shift: isize) -> Self;

    fn extend_cyclic(&self, pad: usize) -> Result<Self>;

    /// Rotation by a yaw angle, quantized to whole columns.
    fn roll_erp(&self, yaw: f64) -> Self {
        self.roll_columns(yaw_to_columns(yaw, self.column_count()))
    }

    fn column_count(&self) -> usize;
}

impl ColumnWrap for super::BinaryMask {
    fn roll_columns(&self, shift: isize) -> Self {
        let (w, h) = self.dims();
        Self::from_parts(w, h, roll_columns(self.values(), w, shift))
    }

    fn extend_cyclic(&self, pad: usize) -> Result<Self> {
        let (w, h) = self.dims();
        Ok(Self::from_parts(w + 2 * pad, h, extend_columns(self.values(), w, pad)?))
    }

    fn column_count(&self) -> usize {
        self.width()
    }
}
