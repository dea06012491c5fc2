//! Network building blocks: conv units, C2f, SPPF, GSConv and ECA.

use crabwatch_nn::{Conv2d, ConvSpec, ConvTranspose2d, CustomOp, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

const GN_EPS: f64 = 1e-5;

/// Largest divisor of `c` not above 8, so every group holds whole channels.
fn norm_groups(c: usize) -> usize {
    (1..=8.min(c)).rev().find(|g| c % g == 0).unwrap_or(1)
}

/// Group norm followed by a learned per-channel scale and shift.
#[derive(Debug, Clone)]
pub struct Norm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add_const(format!("{name}.gamma"), &[1, channels, 1, 1], 1.0);
        let beta = store.add_const(format!("{name}.beta"), &[1, channels, 1, 1], 0.0);
        Self { channels, gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = g.group_norm(x, norm_groups(self.channels), GN_EPS);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let h = g.mul(h, gamma);
        g.add(h, beta)
    }
}

/// Convolution (no bias), normalization, SiLU.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub norm: Norm,
}

impl ConvUnit {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, k: usize, s: usize) -> Self {
        Self::from_spec(store, name, ConvSpec::new(c_in, c_out, k).stride(s))
    }

    pub fn from_spec<T: Scalar>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec) -> Self {
        let conv = spec.bias(false).build(store, &format!("{name}.conv"));
        let norm = Norm::build(store, &format!("{name}.norm"), spec.out_channels);
        Self { conv, norm }
    }

    /// Pre-activation output (after normalization).
    pub fn linear<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.conv.forward(g, x);
        self.norm.forward(g, h)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.linear(g, x);
        g.silu(h)
    }
}

#[derive(Debug, Clone)]
pub struct Bottleneck {
    cv1: ConvUnit,
    cv2: ConvUnit,
    shortcut: bool,
}

impl Bottleneck {
    fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, shortcut: bool) -> Self {
        Self {
            cv1: ConvUnit::build(store, &format!("{name}.cv1"), c, c, 3, 1),
            cv2: ConvUnit::build(store, &format!("{name}.cv2"), c, c, 3, 1),
            shortcut,
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.cv1.forward(g, x);
        let h = self.cv2.forward(g, h);
        if self.shortcut {
            g.add(x, h)
        } else {
            h
        }
    }
}

/// Split-transform-concat stage: a 1×1 expansion split in two halves, `n`
/// bottlenecks chained off the second half, every intermediate concatenated
/// and fused by a final 1×1.
#[derive(Debug, Clone)]
pub struct C2f {
    hidden: usize,
    cv1: ConvUnit,
    blocks: Vec<Bottleneck>,
    cv2: ConvUnit,
}

impl C2f {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        n: usize,
        shortcut: bool,
    ) -> Self {
        let hidden = (c_out / 2).max(1);
        let cv1 = ConvUnit::build(store, &format!("{name}.cv1"), c_in, 2 * hidden, 1, 1);
        let blocks = (0..n).map(|i| Bottleneck::build(store, &format!("{name}.m{i}"), hidden, shortcut)).collect();
        let cv2 = ConvUnit::build(store, &format!("{name}.cv2"), (2 + n) * hidden, c_out, 1, 1);
        Self { hidden, cv1, blocks, cv2 }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let y = self.cv1.forward(g, x);
        let mut parts = vec![g.channel_slice(y, 0, self.hidden), g.channel_slice(y, self.hidden, self.hidden)];
        for b in &self.blocks {
            let last = *parts.last().expect("non-empty");
            parts.push(b.forward(g, last));
        }
        let cat = g.concat(&parts);
        self.cv2.forward(g, cat)
    }
}

/// Spatial pyramid pooling: three chained 5×5 max pools concatenated with the input.
#[derive(Debug, Clone)]
pub struct Sppf {
    cv1: ConvUnit,
    cv2: ConvUnit,
}

impl Sppf {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize) -> Self {
        let hidden = (c_in / 2).max(1);
        Self {
            cv1: ConvUnit::build(store, &format!("{name}.cv1"), c_in, hidden, 1, 1),
            cv2: ConvUnit::build(store, &format!("{name}.cv2"), 4 * hidden, c_out, 1, 1),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.cv1.forward(g, x);
        let p1 = g.max_pool2d(h, 5, 1, 2);
        let p2 = g.max_pool2d(p1, 5, 1, 2);
        let p3 = g.max_pool2d(p2, 5, 1, 2);
        let cat = g.concat(&[h, p1, p2, p3]);
        self.cv2.forward(g, cat)
    }
}

/// Interleaves `groups` equal channel blocks: `[a0 a1 .. b0 b1 ..]` → `[a0 b0 a1 b1 ..]`.
pub fn shuffle_perm(channels: usize, groups: usize) -> Vec<usize> {
    let per = channels / groups;
    (0..channels).map(|i| (i % groups) * per + i / groups).collect()
}

/// Lightweight replacement for a dense k×k convolution.
///
/// Half of the output comes from a depthwise-separable convolution (depthwise
/// k×k carrying the stride, then pointwise to `c_out/2`). The other half is a
/// depthwise 5×5 transposed convolution of that first half. The halves are
/// concatenated and, optionally, interleaved by a two-group channel shuffle.
#[derive(Debug, Clone)]
pub struct GsConv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    depthwise: ConvUnit,
    pointwise: ConvUnit,
    transposed: ConvTranspose2d,
    transposed_norm: Norm,
    shuffle: bool,
}

impl GsConv {
    /// `c_out` must be even.
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        shuffle: bool,
    ) -> Self {
        assert!(c_in > 0 && c_out >= 2 && c_out % 2 == 0, "GSConv needs positive input and even output channels");
        let half = c_out / 2;
        let depthwise = ConvUnit::from_spec(store, &format!("{name}.dw"), ConvSpec::new(c_in, c_in, k).stride(stride).groups(c_in));
        let pointwise = ConvUnit::build(store, &format!("{name}.pw"), c_in, half, 1, 1);
        let transposed =
            ConvSpec::new(half, half, 5).pad(2).groups(half).bias(false).build_transposed(store, &format!("{name}.tconv"));
        let transposed_norm = Norm::build(store, &format!("{name}.tnorm"), half);
        Self { in_channels: c_in, out_channels: c_out, stride, depthwise, pointwise, transposed, transposed_norm, shuffle }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.depthwise.forward(g, x);
        let a = self.pointwise.forward(g, h);
        let b = self.transposed.forward(g, a);
        let b = self.transposed_norm.forward(g, b);
        let b = g.silu(b);
        let cat = g.concat(&[a, b]);
        if self.shuffle {
            g.channel_permute(cat, &shuffle_perm(self.out_channels, 2))
        } else {
            cat
        }
    }

    pub fn param_count(&self) -> usize {
        let half = self.out_channels / 2;
        let k = self.depthwise.conv.spec.kernel;
        self.in_channels * k * k + 2 * self.in_channels + self.in_channels * half + 2 * half + half * 25 + 2 * half
    }
}

/// Odd 1-D kernel size adapted to the channel count:
/// `t = floor(|log2(C) + 1| / 2)`, bumped to the next odd number.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = (((channels.max(1) as f64).log2() + 1.0).abs() / 2.0).floor() as usize;
    if t % 2 == 1 {
        t
    } else {
        t + 1
    }
}

/// Softmax over the channel axis of an `(N, C, 1, 1)` tensor.
struct ChannelSoftmax;

impl<T: Scalar> CustomOp<T> for ChannelSoftmax {
    fn name(&self) -> &str {
        "channel_softmax"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let c = output.shape()[1];
        let mut gi = vec![T::zero(); output.len()];
        for ((s, go), dst) in output.data().chunks(c).zip(grad_out.data().chunks(c)).zip(gi.chunks_mut(c)) {
            let dot = s.iter().zip(go).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            for j in 0..c {
                dst[j] = s[j] * (go[j] - dot);
            }
        }
        vec![Some(Tensor::new(output.shape(), gi))]
    }
}

fn channel_softmax<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Var {
    let t = g.value(x);
    let c = t.shape()[1];
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let out = Tensor::new(t.shape(), out);
    g.custom(&[x], out, Box::new(ChannelSoftmax))
}

/// Efficient channel attention.
///
/// Channel branch: global average pool, a local 1-D convolution across
/// channels, sigmoid, rescale. With `spatial` set the input is split in two
/// halves: one is gated by softmax-normalised channel weights, the other by a
/// group-norm based spatial gate; the halves are rejoined and shuffled.
#[derive(Debug, Clone)]
pub struct Eca {
    pub channels: usize,
    pub kernel: usize,
    taps: ParamId,
    spatial: Option<Norm>,
}

impl Eca {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, spatial: bool) -> Self {
        let spatial = spatial && channels >= 2 && channels % 2 == 0;
        let branch = if spatial { channels / 2 } else { channels };
        let kernel = eca_kernel_size(branch);
        // Positive, centre-weighted taps summing to one: each channel starts
        // out gated mostly by its own descriptor.
        let c = (kernel / 2) as f64;
        let raw: Vec<f64> = (0..kernel).map(|j| c + 1.0 - (j as f64 - c).abs()).collect();
        let total: f64 = raw.iter().sum();
        let taps = store.add(format!("{name}.taps"), Tensor::new(&[kernel], raw.iter().map(|v| T::of(v / total)).collect()));
        let spatial = spatial.then(|| Norm::build(store, &format!("{name}.spatial"), branch));
        Self { channels, kernel, taps, spatial }
    }

    /// Attention weights of the channel branch for `x`, shape `(N, C', 1, 1)`.
    pub fn channel_weights<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let pooled = g.global_avg_pool(x);
        let w = g.param(self.taps);
        let logits = g.channel_conv1d(pooled, w);
        if self.spatial.is_some() {
            channel_softmax(g, logits)
        } else {
            g.sigmoid(logits)
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        match &self.spatial {
            None => {
                let w = self.channel_weights(g, x);
                g.mul(x, w)
            }
            Some(norm) => {
                let half = self.channels / 2;
                let xc = g.channel_slice(x, 0, half);
                let xs = g.channel_slice(x, half, half);
                let wc = self.channel_weights(g, xc);
                let yc = g.mul(xc, wc);
                let s = norm.forward(g, xs);
                let ws = g.sigmoid(s);
                let ys = g.mul(xs, ws);
                let cat = g.concat(&[yc, ys]);
                g.channel_permute(cat, &shuffle_perm(self.channels, 2))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eca_kernel_sizes() {
        assert_eq!(eca_kernel_size(4), 1);
        assert_eq!(eca_kernel_size(16), 3);
        assert_eq!(eca_kernel_size(64), 3);
        assert_eq!(eca_kernel_size(256), 5);
        assert_eq!(eca_kernel_size(512), 5);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let p = shuffle_perm(8, 2);
        assert_eq!(p, vec![0, 4, 1, 5, 2, 6, 3, 7]);
    }

    #[test]
    fn norm_groups_divide() {
        for c in 1..70 {
            assert_eq!(c % norm_groups(c), 0);
        }
        assert_eq!(norm_groups(12), 6);
    }

    #[test]
    fn gsconv_count_matches_store() {
        let mut store = ParamStore::<f64>::new(0);
        let b = GsConv::build(&mut store, "g", 24, 16, 3, 2, true);
        assert_eq!(store.num_elements(), b.param_count());
    }
}
