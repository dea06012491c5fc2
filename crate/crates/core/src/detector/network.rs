use crabwatch_nn::{Conv2d, ConvSpec, Graph, ParamStore, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::blocks::{ConvUnit, Eca, GsConv, Sppf, C2f};
use super::config::DetectorConfig;
use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};

pub const CHECKPOINT_KIND: &str = "crab-yolo";

/// One entry of the layer table. Attention blocks and heads carry no index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetLayer {
    pub index: Option<usize>,
    pub name: String,
    pub kind: String,
    pub params: usize,
}

/// A plain convolution slot, or its GSConv replacement.
#[derive(Debug, Clone)]
enum ConvSlot {
    Dense(ConvUnit),
    Gs(GsConv),
}

impl ConvSlot {
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        match self {
            ConvSlot::Dense(c) => c.forward(g, x),
            ConvSlot::Gs(c) => c.forward(g, x),
        }
    }
}

#[derive(Debug, Clone)]
struct Head {
    box_convs: [ConvUnit; 2],
    box_out: Conv2d,
    cls_convs: [ConvUnit; 2],
    cls_out: Conv2d,
}

impl Head {
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let b = self.box_convs[0].forward(g, x);
        let b = self.box_convs[1].forward(g, b);
        let b = self.box_out.forward(g, b);
        let c = self.cls_convs[0].forward(g, x);
        let c = self.cls_convs[1].forward(g, c);
        let c = self.cls_out.forward(g, c);
        g.concat(&[b, c])
    }
}

/// Feature-pyramid stage with optional attention on its output.
#[derive(Debug, Clone)]
struct Fuse<B> {
    block: B,
    eca: Option<Eca>,
}

#[derive(Debug, Clone)]
struct FourHeadPath {
    lat3: ConvSlot,
    p2_fuse: Fuse<C2f>,
    down2: ConvSlot,
    p3_fuse: Fuse<C2f>,
}

#[derive(Debug, Clone)]
struct Net {
    stem: [ConvSlot; 2],
    c2: C2f,
    down3: ConvSlot,
    c3: C2f,
    down4: ConvSlot,
    c4: C2f,
    down5: ConvSlot,
    c5: C2f,
    sppf: Sppf,
    lat5: ConvSlot,
    fuse4: Fuse<ConvSlot>,
    lat4: ConvSlot,
    fuse3: Fuse<C2f>,
    four: Option<FourHeadPath>,
    pan_down3: ConvSlot,
    pan4: Fuse<C2f>,
    pan_down4: ConvSlot,
    pan5: Fuse<C2f>,
    heads: Vec<Head>,
}

struct Builder<'a, T: Scalar> {
    cfg: &'a DetectorConfig,
    store: &'a mut ParamStore<T>,
    layers: Vec<DetLayer>,
    next: usize,
    conv_slots: Vec<usize>,
}

impl<T: Scalar> Builder<'_, T> {
    fn record(&mut self, index: Option<usize>, name: &str, kind: &str, before: usize) {
        let params = self.store.num_elements() - before;
        self.layers.push(DetLayer { index, name: name.to_string(), kind: kind.to_string(), params });
    }

    fn take_index(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, s: usize) -> ConvSlot {
        let idx = self.take_index();
        self.conv_slots.push(idx);
        let before = self.store.num_elements();
        let name = format!("{idx}.{name}");
        if self.cfg.gsconv && self.cfg.gsconv_layers.contains(&idx) {
            let b = GsConv::build(self.store, &name, c_in, c_out, k, s, self.cfg.gsconv_shuffle);
            self.record(Some(idx), &name, "gsconv", before);
            ConvSlot::Gs(b)
        } else {
            let b = ConvUnit::build(self.store, &name, c_in, c_out, k, s);
            self.record(Some(idx), &name, "conv", before);
            ConvSlot::Dense(b)
        }
    }

    fn c2f(&mut self, name: &str, c_in: usize, c_out: usize, n: usize, shortcut: bool) -> C2f {
        let idx = self.take_index();
        let before = self.store.num_elements();
        let name = format!("{idx}.{name}");
        let b = C2f::build(self.store, &name, c_in, c_out, n, shortcut);
        self.record(Some(idx), &name, "c2f", before);
        b
    }

    fn eca(&mut self, after: &str, channels: usize) -> Option<Eca> {
        if !self.cfg.eca {
            return None;
        }
        let before = self.store.num_elements();
        let name = format!("eca.{after}");
        let b = Eca::build(self.store, &name, channels, self.cfg.eca_spatial);
        self.record(None, &name, "eca", before);
        Some(b)
    }

    fn fuse_c2f(&mut self, name: &str, c_in: usize, c_out: usize, n: usize) -> Fuse<C2f> {
        let block = self.c2f(name, c_in, c_out, n, false);
        let eca = self.eca(name, c_out);
        Fuse { block, eca }
    }

    fn head(&mut self, stride: usize, c_in: usize, c_box: usize, c_cls: usize) -> Head {
        let before = self.store.num_elements();
        let name = format!("head.p{stride}");
        let reg = self.cfg.reg_max;
        let nc = self.cfg.num_classes;
        let store = &mut *self.store;
        let box_convs = [
            ConvUnit::build(store, &format!("{name}.box0"), c_in, c_box, 3, 1),
            ConvUnit::build(store, &format!("{name}.box1"), c_box, c_box, 3, 1),
        ];
        let box_out = ConvSpec::new(c_box, 4 * reg, 1).build(store, &format!("{name}.box_out"));
        let cls_convs = [
            ConvUnit::build(store, &format!("{name}.cls0"), c_in, c_cls, 3, 1),
            ConvUnit::build(store, &format!("{name}.cls1"), c_cls, c_cls, 3, 1),
        ];
        let cls_out = ConvSpec::new(c_cls, nc, 1).build(store, &format!("{name}.cls_out"));
        // Equal distance logits, and class logits for a prior of about five
        // objects per image spread over the level.
        let cells = (self.cfg.input_side as f64 / stride as f64).powi(2);
        let cls_prior = (5.0 / nc as f64 / cells).ln();
        store.get_mut(box_out.bias.expect("bias")).value.data_mut().fill(T::one());
        store.get_mut(cls_out.bias.expect("bias")).value.data_mut().fill(T::of(cls_prior));
        self.record(None, &name, "head", before);
        Head { box_convs, box_out, cls_convs, cls_out }
    }
}

fn build_net<T: Scalar>(b: &mut Builder<'_, T>) -> Net {
    let cfg = b.cfg;
    let [c1, c2, c3, c4, c5] = cfg.channels();
    let [r2, r3, r4, r5] = cfg.repeats();
    let rn = cfg.repeat(3);

    let stem = [b.conv("stem", 3, c1, 3, 2), b.conv("down2", c1, c2, 3, 2)];
    let c2f2 = b.c2f("c2f_p2", c2, c2, r2, true);
    let down3 = b.conv("down3", c2, c3, 3, 2);
    let c2f3 = b.c2f("c2f_p3", c3, c3, r3, true);
    let down4 = b.conv("down4", c3, c4, 3, 2);
    let c2f4 = b.c2f("c2f_p4", c4, c4, r4, true);
    let down5 = b.conv("down5", c4, c5, 3, 2);
    let c2f5 = b.c2f("c2f_p5", c5, c5, r5, true);
    let sppf = {
        let idx = b.take_index();
        let before = b.store.num_elements();
        let name = format!("{idx}.sppf");
        let s = Sppf::build(b.store, &name, c5, c5);
        b.record(Some(idx), &name, "sppf", before);
        s
    };

    // Top-down: 10 and 12 are laterals kept for the bottom-up path, 11 and 13 fuse.
    let lat5 = b.conv("lat5", c5, c4, 1, 1);
    let fuse4_block = b.conv("fuse_p4", 2 * c4, c4, 3, 1);
    let fuse4 = Fuse { block: fuse4_block, eca: b.eca("fuse_p4", c4) };
    let lat4 = b.conv("lat4", c4, c3, 3, 1);
    let fuse3 = b.fuse_c2f("fuse_p3", 2 * c3, c3, rn);

    let four = cfg.four_heads.then(|| {
        let lat3 = b.conv("lat3", c3, c2, 1, 1);
        let p2_fuse = b.fuse_c2f("fuse_p2", 2 * c2, c2, rn);
        let down2 = b.conv("pan_down2", c2, c2, 3, 2);
        let p3_fuse = b.fuse_c2f("pan_p3", 2 * c2, c3, rn);
        FourHeadPath { lat3, p2_fuse, down2, p3_fuse }
    });

    let pan_down3 = b.conv("pan_down3", c3, c3, 3, 2);
    let pan4 = b.fuse_c2f("pan_p4", 2 * c3, c4, rn);
    let pan_down4 = b.conv("pan_down4", c4, c4, 3, 2);
    let pan5 = b.fuse_c2f("pan_p5", 2 * c4, c5, rn);

    let level_channels: Vec<(usize, usize)> = cfg
        .strides()
        .into_iter()
        .map(|s| (s, match s { 4 => c2, 8 => c3, 16 => c4, _ => c5 }))
        .collect();
    // Widths come from the stride-8 level so that adding the stride-4 head
    // only adds parameters.
    let c_box = (c3 / 4).max(16).max(4 * cfg.reg_max);
    let c_cls = c3.max(cfg.num_classes.min(100));
    let heads = level_channels.into_iter().map(|(s, c)| b.head(s, c, c_box, c_cls)).collect();

    Net {
        stem,
        c2: c2f2,
        down3,
        c3: c2f3,
        down4,
        c4: c2f4,
        down5,
        c5: c2f5,
        sppf,
        lat5,
        fuse4,
        lat4,
        fuse3,
        four,
        pan_down3,
        pan4,
        pan_down4,
        pan5,
        heads,
    }
}

fn run_fuse<T: Scalar>(g: &mut Graph<'_, T>, f: &Fuse<C2f>, x: Var) -> Var {
    let y = f.block.forward(g, x);
    match &f.eca {
        Some(e) => e.forward(g, y),
        None => y,
    }
}

/// The anchor-free multi-scale detector.
///
/// Every level's raw output has `4 · reg_max + num_classes` channels: four
/// blocks of distance-bin logits (left, top, right, bottom) followed by one
/// logit per class.
#[derive(Debug, Clone)]
pub struct Detector<T: Scalar> {
    config: DetectorConfig,
    store: ParamStore<T>,
    net: Net,
    layers: Vec<DetLayer>,
}

impl<T: Scalar> Detector<T> {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed);
        let mut b = Builder { cfg: &config, store: &mut store, layers: Vec::new(), next: 0, conv_slots: Vec::new() };
        let net = build_net(&mut b);
        let (layers, conv_slots) = (b.layers, b.conv_slots);
        if config.gsconv {
            if let Some(bad) = config.gsconv_layers.iter().find(|i| !conv_slots.contains(i)) {
                return Err(Error::InvalidConfig(format!("layer {bad} is not a convolution slot")));
            }
        }
        Ok(Self { config, store, net, layers })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.num_elements()
    }

    pub fn layers(&self) -> &[DetLayer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&DetLayer> {
        self.layers.iter().find(|l| l.index == Some(index))
    }

    pub fn strides(&self) -> Vec<usize> {
        self.config.strides()
    }

    /// Channels of each raw output map.
    pub fn output_channels(&self) -> usize {
        4 * self.config.reg_max + self.config.num_classes
    }

    /// Records the forward pass of an `(N, 3, S, S)` batch, `S` a multiple
    /// of 32. Returns one raw map per stride, finest first.
    pub fn forward(&self, g: &mut Graph<'_, T>, images: &Tensor<T>) -> Result<Vec<Var>> {
        let (_, c, h, w) = images.dims4();
        if c != 3 || h != w || h == 0 || h % 32 != 0 {
            return Err(shape_err("(N, 3, S, S) with S a multiple of 32", format!("{:?}", images.shape())));
        }
        let n = &self.net;
        let x = g.input(images.clone());
        let x = n.stem[0].forward(g, x);
        let x = n.stem[1].forward(g, x);
        let p2 = n.c2.forward(g, x);
        let x = n.down3.forward(g, p2);
        let p3 = n.c3.forward(g, x);
        let x = n.down4.forward(g, p3);
        let p4 = n.c4.forward(g, x);
        let x = n.down5.forward(g, p4);
        let x = n.c5.forward(g, x);
        let p5 = n.sppf.forward(g, x);

        let l10 = n.lat5.forward(g, p5);
        let up = g.upsample_nearest(l10, 2);
        let cat = g.concat(&[up, p4]);
        let mut f11 = n.fuse4.block.forward(g, cat);
        if let Some(e) = &n.fuse4.eca {
            f11 = e.forward(g, f11);
        }
        let l12 = n.lat4.forward(g, f11);
        let up = g.upsample_nearest(l12, 2);
        let cat = g.concat(&[up, p3]);
        let n3 = run_fuse(g, &n.fuse3, cat);

        let mut outs = Vec::with_capacity(4);
        let s8 = match &n.four {
            Some(fp) => {
                let l14 = fp.lat3.forward(g, n3);
                let up = g.upsample_nearest(l14, 2);
                let cat = g.concat(&[up, p2]);
                let o4 = run_fuse(g, &fp.p2_fuse, cat);
                outs.push(o4);
                let d = fp.down2.forward(g, o4);
                let cat = g.concat(&[d, l14]);
                run_fuse(g, &fp.p3_fuse, cat)
            }
            None => n3,
        };
        outs.push(s8);
        let d = n.pan_down3.forward(g, s8);
        let cat = g.concat(&[d, l12]);
        let o16 = run_fuse(g, &n.pan4, cat);
        outs.push(o16);
        let d = n.pan_down4.forward(g, o16);
        let cat = g.concat(&[d, l10]);
        let o32 = run_fuse(g, &n.pan5, cat);
        outs.push(o32);

        Ok(outs.into_iter().zip(&n.heads).map(|(o, h)| h.forward(g, o)).collect())
    }

    /// Forward pass without recording gradients; returns the raw maps.
    pub fn raw_outputs(&self, images: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new(&self.store);
        let outs = self.forward(&mut g, images)?;
        Ok(outs.into_iter().map(|v| g.value(v).clone()).collect())
    }

    pub fn checkpoint(&self, epoch: usize, loss_history: Vec<f64>) -> Result<Checkpoint> {
        Checkpoint::capture(CHECKPOINT_KIND, &self.config, &self.store, epoch, loss_history)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::InvalidConfig(format!("checkpoint kind '{}' is not '{CHECKPOINT_KIND}'", ckpt.kind)));
        }
        let mut model = Self::new(ckpt.config()?)?;
        ckpt.restore(&mut model.store)?;
        Ok(model)
    }
}
