use image::{Rgb, RgbImage};

use super::{Codec, LatentTensor};
use crate::error::{Error, Result};

/// Block-average encoder / nearest-neighbor decoder on a 4-channel grid.
///
/// Channels 0..3 hold RGB mapped to `[-1, 1]`; channel 3 is their mean.
/// Decoding a latent and encoding the result gives back channels 0..3 up to
/// 8-bit quantization, and images made of constant `factor x factor` blocks
/// survive `decode(encode(x))` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockCodec {
    pub factor: usize,
}

impl Default for MockCodec {
    fn default() -> Self {
        Self { factor: 8 }
    }
}

fn to_latent(v: f32) -> f32 {
    2.0 * v - 1.0
}

fn to_u8(z: f32) -> u8 {
    (((z + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Codec for MockCodec {
    fn factor(&self) -> usize {
        self.factor
    }

    fn channels(&self) -> usize {
        4
    }

    fn encode(&self, img: &RgbImage) -> Result<LatentTensor> {
        let f = self.factor;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w % f != 0 || h % f != 0 {
            return Err(Error::Shape(format!(
                "image {w}x{h} not divisible by codec factor {f}"
            )));
        }
        let (lw, lh) = (w / f, h / f);
        let mut t = LatentTensor::zeros(super::Shape::new(4, lh, lw));
        let n = (f * f) as f32;
        for ly in 0..lh {
            for lx in 0..lw {
                let mut sum = [0.0f32; 3];
                for y in ly * f..(ly + 1) * f {
                    for x in lx * f..(lx + 1) * f {
                        let p = img.get_pixel(x as u32, y as u32).0;
                        for k in 0..3 {
                            sum[k] += f32::from(p[k]) / 255.0;
                        }
                    }
                }
                let rgb = sum.map(|s| to_latent(s / n));
                for (k, v) in rgb.iter().enumerate() {
                    let i = t.index(k, ly, lx);
                    t.data_mut()[i] = *v;
                }
                let i = t.index(3, ly, lx);
                t.data_mut()[i] = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
            }
        }
        Ok(t)
    }

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage> {
        if latent.channels() < 3 {
            return Err(Error::Shape(format!(
                "decoder needs at least 3 channels, got {}",
                latent.channels()
            )));
        }
        let f = self.factor;
        Ok(RgbImage::from_fn(
            (latent.width() * f) as u32,
            (latent.height() * f) as u32,
            |x, y| {
                let (lx, ly) = (x as usize / f, y as usize / f);
                Rgb([0, 1, 2].map(|k| to_u8(latent.get(k, ly, lx))))
            },
        ))
    }

    fn color_to_latent(&self, rgb: [f32; 3], height: usize, width: usize) -> LatentTensor {
        let z = rgb.map(to_latent);
        LatentTensor::constant(&[z[0], z[1], z[2], (z[0] + z[1] + z[2]) / 3.0], height, width)
    }
}
