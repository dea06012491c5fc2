//! Parameterized layers built on [`Graph`] ops.

use crate::kernels::ConvGeom;
use crate::{Graph, ParamId, ParamStore, Scalar, Var};

/// Shape and hyper-parameters of a (possibly grouped or transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, "same" padding, one group, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride: 1, pad: kernel / 2, groups: 1, bias: true }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn pad(mut self, p: usize) -> Self {
        self.pad = p;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, b: bool) -> Self {
        self.bias = b;
        self
    }

    fn geom(&self) -> ConvGeom {
        ConvGeom { kernel: self.kernel, stride: self.stride, pad: self.pad, groups: self.groups }
    }

    /// Number of scalar parameters the layer owns.
    pub fn param_count(&self) -> usize {
        let w = self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel;
        w + if self.bias { self.out_channels } else { 0 }
    }

    fn check(&self) {
        assert!(self.in_channels > 0 && self.out_channels > 0 && self.kernel > 0 && self.stride > 0);
        assert!(self.groups > 0, "groups must be positive");
        assert_eq!(self.in_channels % self.groups, 0, "in_channels not divisible by groups");
        assert_eq!(self.out_channels % self.groups, 0, "out_channels not divisible by groups");
    }

    pub fn build<T: Scalar>(self, store: &mut ParamStore<T>, name: &str) -> Conv2d {
        self.check();
        let fan_in = self.in_channels / self.groups * self.kernel * self.kernel;
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[self.out_channels, self.in_channels / self.groups, self.kernel, self.kernel],
            fan_in,
        );
        let bias = self.bias.then(|| store.add_uniform(format!("{name}.bias"), &[self.out_channels], fan_in));
        Conv2d { spec: self, weight, bias }
    }

    pub fn build_transposed<T: Scalar>(self, store: &mut ParamStore<T>, name: &str) -> ConvTranspose2d {
        self.check();
        let fan_in = self.out_channels / self.groups * self.kernel * self.kernel;
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[self.in_channels, self.out_channels / self.groups, self.kernel, self.kernel],
            fan_in,
        );
        let bias = self.bias.then(|| store.add_uniform(format!("{name}.bias"), &[self.out_channels], fan_in));
        ConvTranspose2d { spec: self, weight, bias }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.spec.geom())
    }

    /// Zeroes the weight and bias; used to start a residual branch as identity.
    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.weight).value.data_mut().fill(T::zero());
        if let Some(b) = self.bias {
            store.get_mut(b).value.data_mut().fill(T::zero());
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvTranspose2d {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv_transpose2d(x, w, b, self.spec.geom())
    }
}
