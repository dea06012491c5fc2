//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass and
//! borrows the [`ParamStore`] it reads weights from. Calling
//! [`Graph::backward`] walks the tape in reverse and returns [`Grads`], which
//! can then be accumulated into the store.

use std::collections::HashMap;

use crate::kernels::{self, ConvGeom};
use crate::{ParamId, ParamStore, Scalar, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A differentiable operation defined outside this crate.
///
/// The forward value is computed by the caller and handed to
/// [`Graph::custom`]; only the backward rule lives here.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    /// Gradients with respect to each input, given the gradient of the output.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Param,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Concat(Vec<Var>),
    PixelShuffle(Var, usize),
    Upsample(Var, usize),
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool(Var),
    ChannelConv1d { x: Var, w: Var, pad: usize },
    ChannelPermute(Var, Vec<usize>),
    ChannelSlice { x: Var, start: usize },
    GroupNorm { x: Var, groups: usize, xhat: Vec<T>, inv_std: Vec<T> },
    L1 { a: Var, target: Tensor<T> },
    Mean(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients produced by one backward pass.
pub struct Grads<T> {
    node_grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Grads<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.node_grads[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|(_, v)| self.of(*v))
    }

    /// Adds parameter gradients into `store`'s grad buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, v) in &self.params {
            if let Some(g) = &self.node_grads[v.0] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}

fn shape4(s: &[usize]) -> [usize; 4] {
    assert!(s.len() <= 4, "broadcast supports rank <= 4, got {s:?}");
    let mut out = [1; 4];
    out[4 - s.len()..].copy_from_slice(s);
    out
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast needs equal rank: {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(x == y || x == 1 || y == 1, "cannot broadcast {a:?} with {b:?}");
            x.max(y)
        })
        .collect()
}

fn strides_for(src: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    let mut st = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        st[d] = if src[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= src[d];
    }
    st
}

fn for_each_broadcast(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let (a4, b4, o4) = (shape4(a), shape4(b), shape4(out));
    let (sa, sb) = (strides_for(a4, o4), strides_for(b4, o4));
    let mut oi = 0;
    for i0 in 0..o4[0] {
        for i1 in 0..o4[1] {
            for i2 in 0..o4[2] {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..o4[3] {
                    f(oi, ba + i3 * sa[3], bb + i3 * sb[3]);
                    oi += 1;
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (used to differentiate w.r.t. inputs).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls share one node, so
    /// weights reused across steps accumulate a single gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.store.value(id).clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, mul: bool) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(av.shape(), bv.shape());
        let n: usize = shape.iter().product();
        let mut out = vec![T::zero(); n];
        let (ad, bd) = (av.data(), bv.data());
        for_each_broadcast(av.shape(), bv.shape(), &shape, |o, i, j| {
            out[o] = if mul { ad[i] * bd[j] } else { ad[i] + bd[j] };
        });
        let rg = self.rg(a) || self.rg(b);
        let op = if mul { Op::Mul(a, b) } else { Op::Add(a, b) };
        self.push(Tensor::new(&shape, out), op, rg)
    }

    /// Elementwise sum with size-1 broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.broadcast_binary(a, b, false)
    }

    /// Elementwise product with size-1 broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.broadcast_binary(a, b, true)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(v, Op::Silu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let mut y = kernels::conv_forward(self.value(x), self.value(w), &geom);
        if let Some(b) = b {
            kernels::add_channel_bias(&mut y, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(y, Op::Conv { x, w, b, geom }, rg)
    }

    /// Transposed convolution. `w` has shape `(c_in, c_out/groups, k, k)`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let (_, _, h, wd) = self.value(x).dims4();
        let hw = (geom.transposed_out_size(h), geom.transposed_out_size(wd));
        let mut y = kernels::conv_data_grad(self.value(x), self.value(w), hw, &geom);
        if let Some(b) = b {
            kernels::add_channel_bias(&mut y, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(y, Op::ConvTranspose { x, w, b, geom }, rg)
    }

    /// Concatenation along the channel axis of NCHW tensors.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let (n, _, h, w) = self.value(xs[0]).dims4();
        let mut ctot = 0;
        for &x in xs {
            let (n2, c, h2, w2) = self.value(x).dims4();
            assert_eq!((n, h, w), (n2, h2, w2), "concat spatial/batch mismatch");
            ctot += c;
        }
        let mut out = Vec::with_capacity(n * ctot * h * w);
        for b in 0..n {
            for &x in xs {
                let (_, c, _, _) = self.value(x).dims4();
                let sz = c * h * w;
                out.extend_from_slice(&self.value(x).data()[b * sz..(b + 1) * sz]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push(Tensor::new(&[n, ctot, h, w], out), Op::Concat(xs.to_vec()), rg)
    }

    /// Depth-to-space: `(n, c·r², h, w) → (n, c, h·r, w·r)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(c % (r * r), 0, "channels {c} not divisible by {r}²");
        let co = c / (r * r);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for ch in 0..co {
                for i in 0..r {
                    for j in 0..r {
                        let ci = ch * r * r + i * r + j;
                        for y in 0..h {
                            for xx in 0..w {
                                let s = ((b * c + ci) * h + y) * w + xx;
                                let d = ((b * co + ch) * h * r + y * r + i) * w * r + xx * r + j;
                                out[d] = src[s];
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, co, h * r, w * r], out), Op::PixelShuffle(x, r), rg)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, r: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let src = self.value(x).data();
        let (ho, wo) = (h * r, w * r);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            for y in 0..ho {
                for xx in 0..wo {
                    out[(p * ho + y) * wo + xx] = src[(p * h + y / r) * w + xx / r];
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, c, ho, wo], out), Op::Upsample(x, r), rg)
    }

    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let g = ConvGeom { kernel, stride, pad, groups: 1 };
        let (ho, wo) = (g.out_size(h), g.out_size(w));
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for p in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut bi = 0;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = (p * h + iy as usize) * w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                bi = idx;
                            }
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    out[o] = best;
                    argmax[o] = bi;
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, c, ho, wo], out), Op::MaxPool { x, argmax }, rg)
    }

    /// Spatial mean per channel: `(n, c, h, w) → (n, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let inv = T::one() / T::of_usize(h * w);
        let out: Vec<T> =
            self.value(x).data().chunks(h * w).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, c, 1, 1], out), Op::GlobalAvgPool(x), rg)
    }

    /// 1-D convolution across the channel axis of an `(n, c, 1, 1)` descriptor,
    /// zero padded so the channel count is preserved. `w` holds `k` taps.
    pub fn channel_conv1d(&mut self, x: Var, w: Var) -> Var {
        let (n, c, h, wd) = self.value(x).dims4();
        assert_eq!((h, wd), (1, 1), "channel_conv1d expects pooled descriptors");
        let taps = self.value(w).data().to_vec();
        let k = taps.len();
        assert_eq!(k % 2, 1, "kernel size must be odd");
        let pad = k / 2;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            for ch in 0..c {
                let mut acc = T::zero();
                for (j, &t) in taps.iter().enumerate() {
                    let src_c = ch as isize + j as isize - pad as isize;
                    if src_c >= 0 && (src_c as usize) < c {
                        acc += t * src[b * c + src_c as usize];
                    }
                }
                out[b * c + ch] = acc;
            }
        }
        let rg = self.rg(x) || self.rg(w);
        self.push(Tensor::new(&[n, c, 1, 1], out), Op::ChannelConv1d { x, w, pad }, rg)
    }

    /// Reorders channels: output channel `i` is input channel `perm[i]`.
    pub fn channel_permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(perm.len(), c);
        let src = self.value(x).data();
        let hw = h * w;
        let mut out = Vec::with_capacity(src.len());
        for b in 0..n {
            for &p in perm {
                out.extend_from_slice(&src[(b * c + p) * hw..(b * c + p + 1) * hw]);
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, c, h, w], out), Op::ChannelPermute(x, perm.to_vec()), rg)
    }

    /// Channels `start..start + len` of an NCHW tensor.
    pub fn channel_slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert!(start + len <= c, "slice {start}+{len} exceeds {c} channels");
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            out.extend_from_slice(&src[(b * c + start) * hw..(b * c + start + len) * hw]);
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, len, h, w], out), Op::ChannelSlice { x, start }, rg)
    }

    /// Group normalization without affine terms.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(c % groups, 0);
        let m = c / groups * h * w;
        let src = self.value(x).data();
        let mut xhat = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); n * groups];
        let mf = T::of_usize(m);
        for gi in 0..n * groups {
            let seg = &src[gi * m..(gi + 1) * m];
            let mean = seg.iter().copied().sum::<T>() / mf;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let is = T::one() / (var + T::of(eps)).sqrt();
            inv_std[gi] = is;
            for (o, &v) in xhat[gi * m..(gi + 1) * m].iter_mut().zip(seg) {
                *o = (v - mean) * is;
            }
        }
        let rg = self.rg(x);
        let out = Tensor::new(&[n, c, h, w], xhat.clone());
        self.push(out, Op::GroupNorm { x, groups, xhat, inv_std }, rg)
    }

    /// Mean absolute difference against a constant target, as a 1-element tensor.
    pub fn l1_loss(&mut self, a: Var, target: Tensor<T>) -> Var {
        let av = self.value(a);
        assert_eq!(av.shape(), target.shape(), "l1 shape mismatch");
        let s: T = av.data().iter().zip(target.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let v = s / T::of_usize(av.len());
        let rg = self.rg(a);
        self.push(Tensor::scalar(v), Op::L1 { a, target }, rg)
    }

    /// Mean over all elements, as a 1-element tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = av.sum() / T::of_usize(av.len());
        let rg = self.rg(a);
        self.push(Tensor::scalar(v), Op::Mean(a), rg)
    }

    /// Records an externally computed operation.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let rg = inputs.iter().any(|&x| self.rg(x));
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    /// Reverse pass from a 1-element `loss` node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(gy);
                continue;
            }
            self.backward_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        let params = self.param_vars.iter().map(|(&p, &v)| (p, v)).collect();
        Grads { node_grads: grads, params }
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.value(v).shape());
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn reduce_broadcast(&self, g: &Tensor<T>, target: Var, other: Var, mul: bool) -> Tensor<T> {
        let ts = self.value(target).shape();
        let os = self.value(other).shape();
        let mut out = vec![T::zero(); self.value(target).len()];
        let od = self.value(other).data();
        let gd = g.data();
        for_each_broadcast(ts, os, g.shape(), |o, i, j| {
            out[i] += if mul { gd[o] * od[j] } else { gd[o] };
        });
        Tensor::new(ts, out)
    }

    fn backward_node(&self, i: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    let g = self.reduce_broadcast(gy, *a, *b, false);
                    self.accum(grads, *a, g);
                }
                if self.rg(*b) {
                    let g = self.reduce_broadcast(gy, *b, *a, false);
                    self.accum(grads, *b, g);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let g = self.reduce_broadcast(gy, *a, *b, true);
                    self.accum(grads, *a, g);
                }
                if self.rg(*b) {
                    let g = self.reduce_broadcast(gy, *b, *a, true);
                    self.accum(grads, *b, g);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accum(grads, *a, gy.map(|g| g * s));
            }
            Op::Relu(a) => {
                let g = gy.zip_map(self.value(*a), |g, x| if x > T::zero() { g } else { T::zero() });
                self.accum(grads, *a, g);
            }
            Op::Silu(a) => {
                let g = gy.zip_map(self.value(*a), |g, x| {
                    let s = sigmoid(x);
                    g * (s + x * s * (T::one() - s))
                });
                self.accum(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let g = gy.zip_map(&node.value, |g, y| g * y * (T::one() - y));
                self.accum(grads, *a, g);
            }
            Op::Conv { x, w, b, geom } => {
                let xv = self.value(*x);
                if self.rg(*x) {
                    let (_, _, h, wd) = xv.dims4();
                    let dx = kernels::conv_data_grad(gy, self.value(*w), (h, wd), geom);
                    self.accum(grads, *x, dx);
                }
                if self.rg(*w) {
                    let dw = kernels::conv_weight_grad(xv, gy, self.value(*w).shape(), geom);
                    self.accum(grads, *w, dw);
                }
                if let Some(b) = b {
                    let db = kernels::channel_sums(gy);
                    self.accum(grads, *b, Tensor::new(self.value(*b).shape(), db));
                }
            }
            Op::ConvTranspose { x, w, b, geom } => {
                let xv = self.value(*x);
                if self.rg(*x) {
                    self.accum(grads, *x, kernels::conv_forward(gy, self.value(*w), geom));
                }
                if self.rg(*w) {
                    let dw = kernels::conv_weight_grad(gy, xv, self.value(*w).shape(), geom);
                    self.accum(grads, *w, dw);
                }
                if let Some(b) = b {
                    let db = kernels::channel_sums(gy);
                    self.accum(grads, *b, Tensor::new(self.value(*b).shape(), db));
                }
            }
            Op::Concat(xs) => {
                let (n, ctot, h, w) = gy.dims4();
                let mut offset = 0;
                for &x in xs {
                    let (_, c, _, _) = self.value(x).dims4();
                    if self.rg(x) {
                        let mut g = Vec::with_capacity(n * c * h * w);
                        for b in 0..n {
                            let start = (b * ctot + offset) * h * w;
                            g.extend_from_slice(&gy.data()[start..start + c * h * w]);
                        }
                        self.accum(grads, x, Tensor::new(&[n, c, h, w], g));
                    }
                    offset += c;
                }
            }
            Op::PixelShuffle(x, r) => {
                let r = *r;
                let (n, c, h, w) = self.value(*x).dims4();
                let co = c / (r * r);
                let mut g = vec![T::zero(); gy.len()];
                let gd = gy.data();
                for b in 0..n {
                    for ch in 0..co {
                        for ii in 0..r {
                            for j in 0..r {
                                let ci = ch * r * r + ii * r + j;
                                for y in 0..h {
                                    for xx in 0..w {
                                        let s = ((b * c + ci) * h + y) * w + xx;
                                        let d = ((b * co + ch) * h * r + y * r + ii) * w * r + xx * r + j;
                                        g[s] = gd[d];
                                    }
                                }
                            }
                        }
                    }
                }
                self.accum(grads, *x, Tensor::new(&[n, c, h, w], g));
            }
            Op::Upsample(x, r) => {
                let r = *r;
                let (n, c, h, w) = self.value(*x).dims4();
                let (ho, wo) = (h * r, w * r);
                let mut g = vec![T::zero(); n * c * h * w];
                let gd = gy.data();
                for p in 0..n * c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            g[(p * h + y / r) * w + xx / r] += gd[(p * ho + y) * wo + xx];
                        }
                    }
                }
                self.accum(grads, *x, Tensor::new(&[n, c, h, w], g));
            }
            Op::MaxPool { x, argmax } => {
                let mut g = vec![T::zero(); self.value(*x).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    g[src] += gy.data()[o];
                }
                self.accum(grads, *x, Tensor::new(self.value(*x).shape(), g));
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = self.value(*x).dims4();
                let inv = T::one() / T::of_usize(h * w);
                let mut g = Vec::with_capacity(n * c * h * w);
                for &v in gy.data() {
                    g.extend(std::iter::repeat_n(v * inv, h * w));
                }
                self.accum(grads, *x, Tensor::new(&[n, c, h, w], g));
            }
            Op::ChannelConv1d { x, w, pad } => {
                let (n, c, _, _) = self.value(*x).dims4();
                let taps = self.value(*w).data();
                let xs = self.value(*x).data();
                let mut dx = vec![T::zero(); n * c];
                let mut dw = vec![T::zero(); taps.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let g = gy.data()[b * c + ch];
                        for (j, &t) in taps.iter().enumerate() {
                            let sc = ch as isize + j as isize - *pad as isize;
                            if sc >= 0 && (sc as usize) < c {
                                dx[b * c + sc as usize] += t * g;
                                dw[j] += g * xs[b * c + sc as usize];
                            }
                        }
                    }
                }
                self.accum(grads, *x, Tensor::new(&[n, c, 1, 1], dx));
                self.accum(grads, *w, Tensor::new(self.value(*w).shape(), dw));
            }
            Op::ChannelPermute(x, perm) => {
                let (n, c, h, w) = gy.dims4();
                let hw = h * w;
                let mut g = vec![T::zero(); gy.len()];
                for b in 0..n {
                    for (i, &p) in perm.iter().enumerate() {
                        g[(b * c + p) * hw..(b * c + p + 1) * hw]
                            .copy_from_slice(&gy.data()[(b * c + i) * hw..(b * c + i + 1) * hw]);
                    }
                }
                self.accum(grads, *x, Tensor::new(&[n, c, h, w], g));
            }
            Op::ChannelSlice { x, start } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (_, len, _, _) = gy.dims4();
                let hw = h * w;
                let mut g = vec![T::zero(); n * c * hw];
                for b in 0..n {
                    g[(b * c + start) * hw..(b * c + start + len) * hw]
                        .copy_from_slice(&gy.data()[b * len * hw..(b + 1) * len * hw]);
                }
                self.accum(grads, *x, Tensor::new(&[n, c, h, w], g));
            }
            Op::GroupNorm { x, groups, xhat, inv_std } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let m = c / groups * h * w;
                let mf = T::of_usize(m);
                let mut g = vec![T::zero(); gy.len()];
                for gi in 0..n * groups {
                    let gs = &gy.data()[gi * m..(gi + 1) * m];
                    let xh = &xhat[gi * m..(gi + 1) * m];
                    let sum_g: T = gs.iter().copied().sum();
                    let sum_gx: T = gs.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                    let is = inv_std[gi];
                    for k in 0..m {
                        g[gi * m + k] = is / mf * (mf * gs[k] - sum_g - xh[k] * sum_gx);
                    }
                }
                self.accum(grads, *x, Tensor::new(&[n, c, h, w], g));
            }
            Op::L1 { a, target } => {
                let scale = gy.data()[0] / T::of_usize(target.len());
                let g = self.value(*a).zip_map(target, |x, t| {
                    let d = x - t;
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                });
                self.accum(grads, *a, g);
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let g = gy.data()[0] / T::of_usize(av.len());
                self.accum(grads, *a, Tensor::full(av.shape(), g));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&vals, &node.value, gy);
                assert_eq!(gs.len(), inputs.len(), "custom op `{}` returned wrong arity", op.name());
                for (&v, g) in inputs.iter().zip(gs) {
                    if let Some(g) = g {
                        self.accum(grads, v, g);
                    }
                }
            }
        }
    }
}
