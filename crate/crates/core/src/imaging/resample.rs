use crabwatch_nn::Scalar;
use serde::{Deserialize, Serialize};

use super::buffer::clamp01;
use super::ImageBuffer;
use crate::error::{Error, Result};

/// Catmull-Rom member of the Keys cubic family.
pub const CATMULL_ROM: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub target_width: usize,
    pub target_height: usize,
    /// Keys kernel parameter `a`.
    pub a: f64,
}

impl ResampleSpec {
    pub fn new(target_width: usize, target_height: usize) -> Self {
        Self { target_width, target_height, a: CATMULL_ROM }
    }

    fn validate(&self) -> Result<()> {
        if self.target_width == 0 || self.target_height == 0 {
            return Err(Error::ZeroDimension);
        }
        if !self.a.is_finite() {
            return Err(Error::InvalidConfig(format!("bicubic parameter a = {}", self.a)));
        }
        Ok(())
    }
}

/// Keys cubic convolution kernel.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

struct Taps<T> {
    index: Vec<[usize; 4]>,
    weight: Vec<[T; 4]>,
}

/// Four-tap weights per output sample with half-pixel-centre alignment and
/// edge replication.
fn taps<T: Scalar>(n_in: usize, n_out: usize, a: f64) -> Taps<T> {
    let scale = n_in as f64 / n_out as f64;
    let mut index = Vec::with_capacity(n_out);
    let mut weight = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let base = src.floor() as isize;
        let mut idx = [0usize; 4];
        let mut w = [0.0f64; 4];
        for j in 0..4 {
            let p = base + j as isize - 1;
            idx[j] = p.clamp(0, n_in as isize - 1) as usize;
            w[j] = cubic_kernel(src - p as f64, a);
        }
        let s: f64 = w.iter().sum();
        index.push(idx);
        weight.push(w.map(|v| T::of(v / s)));
    }
    Taps { index, weight }
}

/// Separable bicubic resampling; the result is clamped into `[0, 1]`.
pub fn resample_bicubic<T: Scalar>(img: &ImageBuffer<T>, spec: &ResampleSpec) -> Result<ImageBuffer<T>> {
    spec.validate()?;
    let (w, h, c) = img.dims();
    let (wo, ho) = (spec.target_width, spec.target_height);
    let tx = taps::<T>(w, wo, spec.a);
    let ty = taps::<T>(h, ho, spec.a);
    let mut out = Vec::with_capacity(wo * ho * c);
    let mut tmp = vec![T::zero(); wo * h];
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for x in 0..wo {
                let (ix, wx) = (&tx.index[x], &tx.weight[x]);
                tmp[y * wo + x] = (0..4).map(|j| wx[j] * row[ix[j]]).sum();
            }
        }
        for y in 0..ho {
            let (iy, wy) = (&ty.index[y], &ty.weight[y]);
            for x in 0..wo {
                let v: T = (0..4).map(|j| wy[j] * tmp[iy[j] * wo + x]).sum();
                out.push(clamp01(v));
            }
        }
    }
    ImageBuffer::new(wo, ho, c, out)
}

/// Bicubic upscaling by an integer factor.
pub fn upscale_bicubic<T: Scalar>(img: &ImageBuffer<T>, factor: usize) -> Result<ImageBuffer<T>> {
    resample_bicubic(img, &ResampleSpec::new(img.width() * factor, img.height() * factor))
}

/// HR → LR degradation: centre-crop to a multiple of `factor`, then bicubic
/// downsampling by `factor`.
pub fn degrade<T: Scalar>(hr: &ImageBuffer<T>, factor: usize) -> Result<ImageBuffer<T>> {
    if factor < 2 {
        return Err(Error::InvalidConfig(format!("degradation factor {factor} < 2")));
    }
    let (w, h, _) = hr.dims();
    if w < factor || h < factor {
        return Err(Error::ImageTooSmall { width: w, height: h, required: factor });
    }
    let cropped = crop_to_multiple(hr, factor)?;
    resample_bicubic(&cropped, &ResampleSpec::new(cropped.width() / factor, cropped.height() / factor))
}

/// Centre crop to the largest size divisible by `factor`: the HR image
/// that [`degrade`] actually downsamples.
pub fn crop_to_multiple<T: Scalar>(img: &ImageBuffer<T>, factor: usize) -> Result<ImageBuffer<T>> {
    let (w, h, _) = img.dims();
    let (cw, ch) = (w - w % factor.max(1), h - h % factor.max(1));
    if (cw, ch) == (w, h) {
        Ok(img.clone())
    } else {
        img.crop((w - cw) / 2, (h - ch) / 2, cw, ch)
    }
}
