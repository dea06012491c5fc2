//! PSNR and SSIM on the 8-bit scale, plus per-run aggregation.

mod report;

pub use report::{IqRecord, IqReport, MethodSummary};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageBuffer;
use crate::Scalar;

/// Peak value of the 8-bit view.
pub const MAX_VALUE: f64 = 255.0;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IqOptions {
    /// Score BT.601 luma instead of every channel.
    pub luma_only: bool,
    pub window: usize,
    pub sigma: f64,
}

impl Default for IqOptions {
    fn default() -> Self {
        Self { luma_only: false, window: 11, sigma: 1.5 }
    }
}

fn prepare<T: Scalar>(a: &ImageBuffer<T>, b: &ImageBuffer<T>, opts: &IqOptions) -> Result<(ImageBuffer<T>, ImageBuffer<T>)> {
    a.same_shape(b)?;
    if opts.luma_only {
        Ok((a.to_luma(), b.to_luma()))
    } else {
        Ok((a.clone(), b.clone()))
    }
}

/// PSNR in dB over all elements; `f64::INFINITY` when the images are equal.
pub fn psnr<T: Scalar>(reference: &ImageBuffer<T>, candidate: &ImageBuffer<T>) -> Result<f64> {
    psnr_with(reference, candidate, &IqOptions::default())
}

pub fn psnr_with<T: Scalar>(reference: &ImageBuffer<T>, candidate: &ImageBuffer<T>, opts: &IqOptions) -> Result<f64> {
    let (a, b) = prepare(reference, candidate, opts)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (x.as_f64() - y.as_f64()) * MAX_VALUE;
            d * d
        })
        .sum();
    let mse = sse / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..window).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * MAX_VALUE).powi(2);
    let c2 = (SSIM_K2 * MAX_VALUE).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(a, w, h, taps);
    let mu_b = filter_valid(b, w, h, taps);
    let e_aa = filter_valid(&prod(|x, _| x * x), w, h, taps);
    let e_bb = filter_valid(&prod(|_, y| y * y), w, h, taps);
    let e_ab = filter_valid(&prod(|x, y| x * y), w, h, taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM over every fully contained Gaussian window, averaged over channels.
pub fn ssim<T: Scalar>(reference: &ImageBuffer<T>, candidate: &ImageBuffer<T>) -> Result<f64> {
    ssim_with(reference, candidate, &IqOptions::default())
}

pub fn ssim_with<T: Scalar>(reference: &ImageBuffer<T>, candidate: &ImageBuffer<T>, opts: &IqOptions) -> Result<f64> {
    let (a, b) = prepare(reference, candidate, opts)?;
    let (w, h, c) = a.dims();
    if opts.window == 0 || !(opts.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("ssim window {} sigma {}", opts.window, opts.sigma)));
    }
    if w < opts.window || h < opts.window {
        return Err(Error::ImageTooSmall { width: w, height: h, required: opts.window });
    }
    let taps = gaussian_taps(opts.window, opts.sigma);
    let scaled = |img: &ImageBuffer<T>, ch: usize| -> Vec<f64> { img.plane(ch).iter().map(|v| v.as_f64() * MAX_VALUE).collect() };
    let sum: f64 = (0..c).map(|ch| ssim_plane(&scaled(&a, ch), &scaled(&b, ch), w, h, &taps)).sum();
    Ok(sum / c as f64)
}
