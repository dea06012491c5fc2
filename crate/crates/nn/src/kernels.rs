//! Raw convolution and matrix kernels on flat slices.
//!
//! Batch items are processed in parallel; every reduction across the batch is
//! done sequentially in batch order so results do not depend on thread timing.

use rayon::prelude::*;

use crate::{Scalar, Tensor};

/// Geometry of a 2-D convolution, seen from the dense (non-transposed) side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_size(&self, input: usize) -> usize {
        assert!(
            input + 2 * self.pad >= self.kernel,
            "input {input} too small for kernel {} with pad {}",
            self.kernel,
            self.pad
        );
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Spatial size produced by the transposed convolution with this geometry.
    pub fn transposed_out_size(&self, input: usize) -> usize {
        ((input - 1) * self.stride + self.kernel)
            .checked_sub(2 * self.pad)
            .expect("transposed conv output would be negative")
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c += a · b` with `a: m×k`, `b: k×n`.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == T::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for kk in 0..k {
        let brow = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let av = a[kk * m + i];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a · bᵀ` with `a: m×k`, `b: n×k`.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with split accumulators so the loop vectorizes.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    acc.iter().fold(s, |s, &v| s + v)
}

fn im2col<T: Scalar>(
    x: &[T],
    channels: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    g: &ConvGeom,
    col: &mut [T],
) {
    let k = g.kernel;
    let p = ho * wo;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * p..((c * k + ky) * k + kx + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    g: &ConvGeom,
    x: &mut [T],
) {
    let k = g.kernel;
    let p = ho * wo;
    for c in 0..channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * p..((c * k + ky) * k + kx + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Dense convolution without bias. `w` is `(c_out, c_in/groups, k, k)`.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let (n, c_in, h, wd) = x.dims4();
    let (c_out, cig, k, k2) = w.dims4();
    assert_eq!(k, g.kernel);
    assert_eq!(k2, g.kernel);
    assert_eq!(c_in % g.groups, 0);
    assert_eq!(c_out % g.groups, 0);
    assert_eq!(cig * g.groups, c_in, "weight expects {} input channels, got {c_in}", cig * g.groups);
    let (ho, wo) = (g.out_size(h), g.out_size(wd));
    let cog = c_out / g.groups;
    let kdim = cig * k * k;
    let p = ho * wo;
    let mut out = vec![T::zero(); n * c_out * p];
    let xin = x.data();
    let wd_ = w.data();
    out.par_chunks_mut(c_out * p).enumerate().for_each(|(b, ob)| {
        let xb = &xin[b * c_in * h * wd..(b + 1) * c_in * h * wd];
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kdim * p] };
        for gi in 0..g.groups {
            let xg = &xb[gi * cig * h * wd..(gi + 1) * cig * h * wd];
            let colref: &[T] = if g.is_pointwise() {
                xg
            } else {
                im2col(xg, cig, (h, wd), (ho, wo), g, &mut col);
                &col
            };
            let wg = &wd_[gi * cog * kdim..(gi + 1) * cog * kdim];
            gemm_nn(cog, kdim, p, wg, colref, &mut ob[gi * cog * p..(gi + 1) * cog * p]);
        }
    });
    Tensor::new(&[n, c_out, ho, wo], out)
}

/// Gradient of [`conv_forward`] with respect to its input.
pub fn conv_data_grad<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    in_hw: (usize, usize),
    g: &ConvGeom,
) -> Tensor<T> {
    let (n, c_out, ho, wo) = gy.dims4();
    let (wc_out, cig, k, _) = w.dims4();
    assert_eq!(wc_out, c_out);
    let (h, wd) = in_hw;
    assert_eq!((g.out_size(h), g.out_size(wd)), (ho, wo));
    let c_in = cig * g.groups;
    let cog = c_out / g.groups;
    let kdim = cig * k * k;
    let p = ho * wo;
    let mut dx = vec![T::zero(); n * c_in * h * wd];
    let gyd = gy.data();
    let wdat = w.data();
    dx.par_chunks_mut(c_in * h * wd).enumerate().for_each(|(b, dxb)| {
        let gyb = &gyd[b * c_out * p..(b + 1) * c_out * p];
        let mut col = vec![T::zero(); kdim * p];
        for gi in 0..g.groups {
            col.fill(T::zero());
            let wg = &wdat[gi * cog * kdim..(gi + 1) * cog * kdim];
            gemm_tn(kdim, cog, p, wg, &gyb[gi * cog * p..(gi + 1) * cog * p], &mut col);
            let dxg = &mut dxb[gi * cig * h * wd..(gi + 1) * cig * h * wd];
            if g.is_pointwise() {
                for (d, &c) in dxg.iter_mut().zip(&col) {
                    *d += c;
                }
            } else {
                col2im(&col, cig, (h, wd), (ho, wo), g, dxg);
            }
        }
    });
    Tensor::new(&[n, c_in, h, wd], dx)
}

/// Gradient of [`conv_forward`] with respect to its weight.
pub fn conv_weight_grad<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    w_shape: &[usize],
    g: &ConvGeom,
) -> Tensor<T> {
    let (n, c_in, h, wd) = x.dims4();
    let (_, c_out, ho, wo) = gy.dims4();
    let cig = c_in / g.groups;
    let cog = c_out / g.groups;
    let k = g.kernel;
    let kdim = cig * k * k;
    let p = ho * wo;
    let xin = x.data();
    let gyd = gy.data();
    let partials: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|b| {
            let xb = &xin[b * c_in * h * wd..(b + 1) * c_in * h * wd];
            let gyb = &gyd[b * c_out * p..(b + 1) * c_out * p];
            let mut dw = vec![T::zero(); c_out * kdim];
            let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kdim * p] };
            for gi in 0..g.groups {
                let xg = &xb[gi * cig * h * wd..(gi + 1) * cig * h * wd];
                let colref: &[T] = if g.is_pointwise() {
                    xg
                } else {
                    im2col(xg, cig, (h, wd), (ho, wo), g, &mut col);
                    &col
                };
                gemm_nt(
                    cog,
                    p,
                    kdim,
                    &gyb[gi * cog * p..(gi + 1) * cog * p],
                    colref,
                    &mut dw[gi * cog * kdim..(gi + 1) * cog * kdim],
                );
            }
            dw
        })
        .collect();
    let mut dw = vec![T::zero(); c_out * kdim];
    for part in partials {
        for (d, v) in dw.iter_mut().zip(part) {
            *d += v;
        }
    }
    Tensor::new(w_shape, dw)
}

/// Adds a per-channel bias to an NCHW tensor in place.
pub fn add_channel_bias<T: Scalar>(y: &mut Tensor<T>, bias: &[T]) {
    let (_, c, h, w) = y.dims4();
    assert_eq!(bias.len(), c);
    let hw = h * w;
    for (i, chunk) in y.data_mut().chunks_mut(hw).enumerate() {
        let b = bias[i % c];
        for v in chunk {
            *v += b;
        }
    }
}

/// Sum of an NCHW gradient over everything except the channel axis.
pub fn channel_sums<T: Scalar>(gy: &Tensor<T>) -> Vec<T> {
    let (_, c, h, w) = gy.dims4();
    let mut out = vec![T::zero(); c];
    for (i, chunk) in gy.data().chunks(h * w).enumerate() {
        out[i % c] += chunk.iter().copied().sum::<T>();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, g: &ConvGeom) -> Tensor<f64> {
        let (n, c_in, h, wd) = x.dims4();
        let (c_out, cig, k, _) = w.dims4();
        let cog = c_out / g.groups;
        let (ho, wo) = (g.out_size(h), g.out_size(wd));
        let mut out = vec![0.0; n * c_out * ho * wo];
        for b in 0..n {
            for co in 0..c_out {
                let gi = co / cog;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cig {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((b * c_in + gi * cig + ci) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((co * cig + ci) * k + ky) * k + kx;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out[((b * c_out + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, c_out, ho, wo], out)
    }

    #[test]
    fn matches_direct_convolution() {
        let mut s = 0.37_f64;
        let mut next = || {
            s = (s * 9301.0 + 49297.0) % 233280.0;
            s / 233280.0 - 0.5
        };
        for (k, stride, pad, groups) in [(3, 1, 1, 1), (3, 2, 1, 2), (1, 1, 0, 1), (5, 2, 0, 3), (3, 1, 1, 6)] {
            let x = Tensor::new(&[2, 6, 7, 9], (0..2 * 6 * 63).map(|_| next()).collect());
            let w = Tensor::new(&[6, 6 / groups, k, k], (0..6 * (6 / groups) * k * k).map(|_| next()).collect());
            let g = ConvGeom { kernel: k, stride, pad, groups };
            let fast = conv_forward(&x, &w, &g);
            let slow = naive(&x, &w, &g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..19).map(|i| i as f64).collect();
        assert_eq!(dot(&a, &a), (0..19).map(|i| (i * i) as f64).sum::<f64>());
    }
}
