use crabwatch_nn::{Conv2d, ConvSpec, ConvTranspose2d, Graph, ParamStore, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::config::{SrArchitecture, SrModelConfig};
use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};
use crate::imaging::{upscale_bicubic, ImageBuffer};

pub const CHECKPOINT_KIND: &str = "srr";

/// Name and kind of one parameterized layer, for structural inspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: String,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    layers: Vec<LayerInfo>,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, spec: ConvSpec) -> Conv2d {
        self.layers.push(LayerInfo { name: name.to_string(), kind: format!("conv{}x{}", spec.kernel, spec.kernel) });
        spec.build(self.store, name)
    }

    fn deconv(&mut self, name: &str, spec: ConvSpec) -> ConvTranspose2d {
        self.layers.push(LayerInfo { name: name.to_string(), kind: format!("deconv{}x{}", spec.kernel, spec.kernel) });
        spec.build_transposed(self.store, name)
    }
}

/// Sub-pixel upsampler: ×4 and ×8 as repeated ×2 stages, other factors in one stage.
struct Upsampler {
    stages: Vec<(Conv2d, usize)>,
}

impl Upsampler {
    fn build<T: Scalar>(b: &mut Builder<'_, T>, prefix: &str, feats: usize, m: usize) -> Self {
        let factors = if m.is_power_of_two() { vec![2; m.trailing_zeros() as usize] } else { vec![m] };
        let stages = factors
            .into_iter()
            .enumerate()
            .map(|(i, r)| (b.conv(&format!("{prefix}.{i}"), ConvSpec::new(feats, feats * r * r, 3)), r))
            .collect();
        Self { stages }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Var {
        for (conv, r) in &self.stages {
            let y = conv.forward(g, x);
            x = g.pixel_shuffle(y, *r);
        }
        x
    }
}

struct Rdb {
    convs: Vec<Conv2d>,
    fuse: Conv2d,
}

struct Rcab {
    c1: Conv2d,
    c2: Conv2d,
    squeeze: Conv2d,
    excite: Conv2d,
}

struct ResidualGroup {
    blocks: Vec<Rcab>,
    tail: Conv2d,
}

struct Feedback {
    compress_in: Conv2d,
    ups: Vec<ConvTranspose2d>,
    downs: Vec<Conv2d>,
    up_fuse: Vec<Conv2d>,
    down_fuse: Vec<Conv2d>,
    out: Conv2d,
}

enum Net {
    Srcnn { extract: Conv2d, map: Conv2d, recon: Conv2d },
    Edsr { head: Conv2d, blocks: Vec<(Conv2d, Conv2d)>, body_tail: Conv2d, up: Upsampler, tail: Conv2d },
    Rdn { sfe1: Conv2d, sfe2: Conv2d, blocks: Vec<Rdb>, gff1: Conv2d, gff2: Conv2d, up: Upsampler, tail: Conv2d },
    Rcan { head: Conv2d, groups: Vec<ResidualGroup>, body_tail: Conv2d, up: Upsampler, tail: Conv2d },
    Srfbn { fe1: Conv2d, fe2: Conv2d, block: Feedback, rec_up: ConvTranspose2d, tail: Conv2d },
}

/// A super-resolution network with its parameters. Every variant predicts
/// a residual over the bicubic upsample of its input.
pub struct SrModel<T: Scalar> {
    config: SrModelConfig,
    store: ParamStore<T>,
    net: Net,
    layers: Vec<LayerInfo>,
}

fn build_net<T: Scalar>(cfg: &SrModelConfig, b: &mut Builder<'_, T>) -> (Net, Vec<Conv2d>) {
    let (c, f, m) = (cfg.channels, cfg.width, cfg.magnification);
    match cfg.architecture {
        SrArchitecture::Srcnn => {
            let n2 = (f / 2).max(1);
            let extract = b.conv("srcnn.extract", ConvSpec::new(c, f, 9));
            let map = b.conv("srcnn.map", ConvSpec::new(f, n2, 1));
            let recon = b.conv("srcnn.recon", ConvSpec::new(n2, c, 5));
            let tails = vec![recon.clone()];
            (Net::Srcnn { extract, map, recon }, tails)
        }
        SrArchitecture::Edsr => {
            let head = b.conv("edsr.head", ConvSpec::new(c, f, 3));
            let blocks = (0..cfg.depth)
                .map(|i| {
                    (
                        b.conv(&format!("edsr.block{i}.conv1"), ConvSpec::new(f, f, 3)),
                        b.conv(&format!("edsr.block{i}.conv2"), ConvSpec::new(f, f, 3)),
                    )
                })
                .collect();
            let body_tail = b.conv("edsr.body_tail", ConvSpec::new(f, f, 3));
            let up = Upsampler::build(b, "edsr.up", f, m);
            let tail = b.conv("edsr.tail", ConvSpec::new(f, c, 3));
            let tails = vec![tail.clone()];
            (Net::Edsr { head, blocks, body_tail, up, tail }, tails)
        }
        SrArchitecture::Rdn => {
            let (gr, layers) = (cfg.growth, cfg.block_layers);
            let sfe1 = b.conv("rdn.sfe1", ConvSpec::new(c, f, 3));
            let sfe2 = b.conv("rdn.sfe2", ConvSpec::new(f, f, 3));
            let blocks = (0..cfg.depth)
                .map(|i| Rdb {
                    convs: (0..layers)
                        .map(|l| b.conv(&format!("rdn.rdb{i}.conv{l}"), ConvSpec::new(f + l * gr, gr, 3)))
                        .collect(),
                    fuse: b.conv(&format!("rdn.rdb{i}.fuse"), ConvSpec::new(f + layers * gr, f, 1)),
                })
                .collect();
            let gff1 = b.conv("rdn.gff1", ConvSpec::new(cfg.depth * f, f, 1));
            let gff2 = b.conv("rdn.gff2", ConvSpec::new(f, f, 3));
            let up = Upsampler::build(b, "rdn.up", f, m);
            let tail = b.conv("rdn.tail", ConvSpec::new(f, c, 3));
            let tails = vec![tail.clone()];
            (Net::Rdn { sfe1, sfe2, blocks, gff1, gff2, up, tail }, tails)
        }
        SrArchitecture::Rcan => {
            let squeezed = (f / cfg.reduction).max(1);
            let head = b.conv("rcan.head", ConvSpec::new(c, f, 3));
            let groups = (0..cfg.depth)
                .map(|gi| ResidualGroup {
                    blocks: (0..cfg.block_layers)
                        .map(|bi| {
                            let p = format!("rcan.group{gi}.block{bi}");
                            Rcab {
                                c1: b.conv(&format!("{p}.conv1"), ConvSpec::new(f, f, 3)),
                                c2: b.conv(&format!("{p}.conv2"), ConvSpec::new(f, f, 3)),
                                squeeze: b.conv(&format!("{p}.ca_squeeze"), ConvSpec::new(f, squeezed, 1)),
                                excite: b.conv(&format!("{p}.ca_excite"), ConvSpec::new(squeezed, f, 1)),
                            }
                        })
                        .collect(),
                    tail: b.conv(&format!("rcan.group{gi}.tail"), ConvSpec::new(f, f, 3)),
                })
                .collect();
            let body_tail = b.conv("rcan.body_tail", ConvSpec::new(f, f, 3));
            let up = Upsampler::build(b, "rcan.up", f, m);
            let tail = b.conv("rcan.tail", ConvSpec::new(f, c, 3));
            let tails = vec![tail.clone()];
            (Net::Rcan { head, groups, body_tail, up, tail }, tails)
        }
        SrArchitecture::Srfbn => {
            // Projection kernels that scale by exactly m: k = m + 4, stride m, pad 2.
            let proj = |i: usize, o: usize| ConvSpec::new(i, o, m + 4).stride(m).pad(2);
            let gcount = cfg.depth;
            let fe1 = b.conv("srfbn.fe1", ConvSpec::new(c, 4 * f, 3));
            let fe2 = b.conv("srfbn.fe2", ConvSpec::new(4 * f, f, 1));
            let compress_in = b.conv("srfbn.fb.compress_in", ConvSpec::new(2 * f, f, 1));
            let ups = (0..gcount).map(|i| b.deconv(&format!("srfbn.fb.up{i}"), proj(f, f))).collect();
            let downs = (0..gcount).map(|i| b.conv(&format!("srfbn.fb.down{i}"), proj(f, f))).collect();
            let up_fuse =
                (1..gcount).map(|i| b.conv(&format!("srfbn.fb.up_fuse{i}"), ConvSpec::new((i + 1) * f, f, 1))).collect();
            let down_fuse = (1..gcount)
                .map(|i| b.conv(&format!("srfbn.fb.down_fuse{i}"), ConvSpec::new((i + 1) * f, f, 1)))
                .collect();
            let out = b.conv("srfbn.fb.out", ConvSpec::new(gcount * f, f, 1));
            let rec_up = b.deconv("srfbn.rec_up", proj(f, f));
            let tail = b.conv("srfbn.tail", ConvSpec::new(f, c, 3));
            let tails = vec![tail.clone()];
            let block = Feedback { compress_in, ups, downs, up_fuse, down_fuse, out };
            (Net::Srfbn { fe1, fe2, block, rec_up, tail }, tails)
        }
    }
}

impl Feedback {
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, input: Var, hidden: Var) -> Var {
        let cat = g.concat(&[input, hidden]);
        let l0 = self.compress_in.forward(g, cat);
        let l0 = g.relu(l0);
        let mut lows = vec![l0];
        let mut highs: Vec<Var> = Vec::new();
        for i in 0..self.ups.len() {
            let lo = if i == 0 {
                lows[0]
            } else {
                let cat = g.concat(&lows);
                let y = self.up_fuse[i - 1].forward(g, cat);
                g.relu(y)
            };
            let h = self.ups[i].forward(g, lo);
            highs.push(g.relu(h));
            let hi = if i == 0 {
                highs[0]
            } else {
                let cat = g.concat(&highs);
                let y = self.down_fuse[i - 1].forward(g, cat);
                g.relu(y)
            };
            let l = self.downs[i].forward(g, hi);
            lows.push(g.relu(l));
        }
        let cat = g.concat(&lows[1..]);
        let y = self.out.forward(g, cat);
        g.relu(y)
    }
}

/// Bicubic ×m upsample of every item of an NCHW batch.
pub fn bicubic_batch<T: Scalar>(lr: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (n, _, _, _) = lr.dims4();
    let items = (0..n)
        .map(|i| {
            let img = ImageBuffer::from_tensor(lr, i)?;
            Ok(upscale_bicubic(&img, m)?.to_tensor())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&items))
}

impl<T: Scalar> SrModel<T> {
    pub fn new(config: SrModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed);
        let mut b = Builder { store: &mut store, layers: Vec::new() };
        let (net, tails) = build_net(&config, &mut b);
        let layers = b.layers;
        if config.zero_init_tail {
            for t in &tails {
                t.zero(&mut store);
            }
        }
        Ok(Self { config, store, net, layers })
    }

    pub fn config(&self) -> &SrModelConfig {
        &self.config
    }

    pub fn magnification(&self) -> usize {
        self.config.magnification
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

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    /// Number of normalization layers (every variant here has none).
    pub fn normalization_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.contains("norm")).count()
    }

    /// Records the forward pass of an NCHW LR batch. Returns one output per
    /// feedback step for SRFBN and a single output otherwise.
    pub fn forward(&self, g: &mut Graph<'_, T>, lr: &Tensor<T>) -> Result<Vec<Var>> {
        let (_, c, _, _) = lr.dims4();
        if c != self.config.channels {
            return Err(shape_err(format!("{} channels", self.config.channels), format!("{c} channels")));
        }
        let m = self.config.magnification;
        let up = g.input(bicubic_batch(lr, m)?);
        let x = g.input(lr.clone());
        let outs = match &self.net {
            Net::Srcnn { extract, map, recon } => {
                let h = extract.forward(g, up);
                let h = g.relu(h);
                let h = map.forward(g, h);
                let h = g.relu(h);
                let r = recon.forward(g, h);
                vec![g.add(r, up)]
            }
            Net::Edsr { head, blocks, body_tail, up: ups, tail } => {
                let h0 = head.forward(g, x);
                let mut h = h0;
                for (c1, c2) in blocks {
                    let y = c1.forward(g, h);
                    let y = g.relu(y);
                    let y = c2.forward(g, y);
                    let y = g.scale(y, T::of(self.config.res_scale));
                    h = g.add(h, y);
                }
                let y = body_tail.forward(g, h);
                let y = g.add(y, h0);
                let y = ups.forward(g, y);
                let r = tail.forward(g, y);
                vec![g.add(r, up)]
            }
            Net::Rdn { sfe1, sfe2, blocks, gff1, gff2, up: ups, tail } => {
                let f1 = sfe1.forward(g, x);
                let mut h = sfe2.forward(g, f1);
                let mut block_outs = Vec::with_capacity(blocks.len());
                for rdb in blocks {
                    let mut feats = vec![h];
                    for conv in &rdb.convs {
                        let cat = g.concat(&feats);
                        let y = conv.forward(g, cat);
                        feats.push(g.relu(y));
                    }
                    let cat = g.concat(&feats);
                    let y = rdb.fuse.forward(g, cat);
                    h = g.add(y, h);
                    block_outs.push(h);
                }
                let cat = g.concat(&block_outs);
                let y = gff1.forward(g, cat);
                let y = gff2.forward(g, y);
                let y = g.add(y, f1);
                let y = ups.forward(g, y);
                let r = tail.forward(g, y);
                vec![g.add(r, up)]
            }
            Net::Rcan { head, groups, body_tail, up: ups, tail } => {
                let h0 = head.forward(g, x);
                let mut h = h0;
                for grp in groups {
                    let gin = h;
                    for blk in &grp.blocks {
                        let y = blk.c1.forward(g, h);
                        let y = g.relu(y);
                        let y = blk.c2.forward(g, y);
                        let s = g.global_avg_pool(y);
                        let s = blk.squeeze.forward(g, s);
                        let s = g.relu(s);
                        let s = blk.excite.forward(g, s);
                        let s = g.sigmoid(s);
                        let y = g.mul(y, s);
                        h = g.add(h, y);
                    }
                    let y = grp.tail.forward(g, h);
                    h = g.add(y, gin);
                }
                let y = body_tail.forward(g, h);
                let y = g.add(y, h0);
                let y = ups.forward(g, y);
                let r = tail.forward(g, y);
                vec![g.add(r, up)]
            }
            Net::Srfbn { fe1, fe2, block, rec_up, tail } => {
                let y = fe1.forward(g, x);
                let y = g.relu(y);
                let y = fe2.forward(g, y);
                let input = g.relu(y);
                let mut hidden = input;
                let mut outs = Vec::with_capacity(self.config.steps);
                for _ in 0..self.config.steps {
                    hidden = block.forward(g, input, hidden);
                    let y = rec_up.forward(g, hidden);
                    let y = g.relu(y);
                    let r = tail.forward(g, y);
                    outs.push(g.add(r, up));
                }
                outs
            }
        };
        Ok(outs)
    }

    /// Final (unclamped) output for an NCHW LR batch.
    pub fn predict(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.store);
        let outs = self.forward(&mut g, lr)?;
        Ok(g.value(*outs.last().expect("at least one output")).clone())
    }

    /// Super-resolves one image; output is `m×` larger and clamped to `[0, 1]`.
    pub fn reconstruct(&self, lr: &ImageBuffer<T>) -> Result<ImageBuffer<T>> {
        if lr.channels() != self.config.channels {
            return Err(shape_err(
                format!("{} channels", self.config.channels),
                format!("{} channels", lr.channels()),
            ));
        }
        let out = self.predict(&lr.to_tensor())?;
        ImageBuffer::from_tensor(&out, 0)
    }

    pub fn checkpoint(&self, epoch: usize, loss_history: Vec<f64>) -> Result<Checkpoint> {
        Checkpoint::capture(CHECKPOINT_KIND, &self.config, &self.store, epoch, loss_history)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::InvalidConfig(format!("checkpoint kind '{}' is not '{CHECKPOINT_KIND}'", ckpt.kind)));
        }
        let config: SrModelConfig = ckpt.config()?;
        let mut model = Self::new(config)?;
        ckpt.restore(&mut model.store)?;
        Ok(model)
    }
}

/// Mean absolute difference over every element of two equally shaped images.
pub fn l1_loss<T: Scalar>(output: &ImageBuffer<T>, reference: &ImageBuffer<T>) -> Result<f64> {
    output.same_shape(reference)?;
    let s: f64 = output.data().iter().zip(reference.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
    Ok(s / output.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_hand_values() {
        let z = ImageBuffer::<f64>::constant(3, 2, 3, 0.0).unwrap();
        let o = ImageBuffer::<f64>::constant(3, 2, 3, 1.0).unwrap();
        assert_eq!(l1_loss(&z, &o).unwrap(), 1.0);
        assert_eq!(l1_loss(&z, &z).unwrap(), 0.0);
        let a = ImageBuffer::<f64>::new(2, 1, 1, vec![0.0, 0.5]).unwrap();
        let b = ImageBuffer::<f64>::new(2, 1, 1, vec![0.5, 0.5]).unwrap();
        assert_eq!(l1_loss(&a, &b).unwrap(), 0.25);
        assert!(l1_loss(&a, &z).is_err());
    }

    #[test]
    fn srfbn_projection_params_scale_with_m() {
        let c2 = SrModelConfig::tiny(SrArchitecture::Srfbn, 2);
        let c4 = SrModelConfig::tiny(SrArchitecture::Srfbn, 4);
        let p2 = SrModel::<f32>::new(c2).unwrap().param_count();
        let p4 = SrModel::<f32>::new(c4).unwrap().param_count();
        assert!(p4 > p2);
    }

    #[test]
    fn zero_tail_returns_bicubic() {
        let cfg = SrModelConfig::tiny(SrArchitecture::Rcan, 3).with_zero_tail(true).with_channels(1);
        let model = SrModel::<f64>::new(cfg).unwrap();
        let lr = ImageBuffer::<f64>::from_fn(5, 4, 1, |x, y, _| (x * 3 + y) as f64 / 20.0).unwrap();
        let out = model.reconstruct(&lr).unwrap();
        assert_eq!(out, upscale_bicubic(&lr, 3).unwrap());
    }
}
