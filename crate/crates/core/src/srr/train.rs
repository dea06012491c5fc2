use crabwatch_nn::{Adam, Graph, Scalar, StepDecay, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SrTrainConfig;
use super::model::SrModel;
use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};
use crate::imaging::ImageBuffer;

/// Aligned low/high resolution images.
#[derive(Debug, Clone, PartialEq)]
pub struct SrPair<T> {
    pub lr: ImageBuffer<T>,
    pub hr: ImageBuffer<T>,
}

fn check_pairs<T: Scalar>(model: &SrModel<T>, pairs: &[SrPair<T>]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = model.magnification();
    let c = model.config().channels;
    for (i, p) in pairs.iter().enumerate() {
        let (lw, lh, lc) = p.lr.dims();
        let (hw, hh, hc) = p.hr.dims();
        if (hw, hh) != (lw * m, lh * m) || lc != hc || lc != c {
            return Err(shape_err(
                format!("pair {i}: HR {}x{}x{c}", lw * m, lh * m),
                format!("HR {hw}x{hh}x{hc}, LR channels {lc}"),
            ));
        }
    }
    Ok(())
}

/// Random aligned crop of `p × p` LR pixels and the matching HR window.
fn crop_pair<T: Scalar>(pair: &SrPair<T>, p: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor<T>, Tensor<T>)> {
    let x = rng.gen_range(0..=pair.lr.width() - p);
    let y = rng.gen_range(0..=pair.lr.height() - p);
    let lr = pair.lr.crop(x, y, p, p)?;
    let hr = pair.hr.crop(x * m, y * m, p * m, p * m)?;
    Ok((lr.to_tensor(), hr.to_tensor()))
}

/// Per-item mean absolute error of two NCHW batches.
fn per_item_l1<T: Scalar>(out: &Tensor<T>, target: &Tensor<T>) -> Vec<f64> {
    let n = out.dims4().0;
    let sz = out.len() / n;
    (0..n)
        .map(|i| {
            let a = &out.data()[i * sz..(i + 1) * sz];
            let b = &target.data()[i * sz..(i + 1) * sz];
            a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum::<f64>() / sz as f64
        })
        .collect()
}

/// Trains with L1 loss and Adam under a step-decay schedule.
///
/// Each epoch visits every pair once in a seeded random order, cropping a
/// random aligned patch (the LR side is `patch_size`, capped at the smallest
/// LR image). SRFBN's loss is averaged over its feedback outputs. The
/// recorded epoch loss is the mean over pairs of the pre-update L1, summed
/// in dataset order, so it does not depend on batch composition.
pub fn train_sr<T: Scalar>(model: &mut SrModel<T>, pairs: &[SrPair<T>], cfg: &SrTrainConfig) -> Result<Checkpoint> {
    train_sr_with(model, pairs, cfg, |_, _| {})
}

/// [`train_sr`] with a per-epoch callback receiving `(epoch, mean_l1)`.
pub fn train_sr_with<T: Scalar>(
    model: &mut SrModel<T>,
    pairs: &[SrPair<T>],
    cfg: &SrTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Checkpoint> {
    cfg.validate()?;
    check_pairs(model, pairs)?;
    let m = model.magnification();
    let patch = pairs
        .iter()
        .map(|p| p.lr.width().min(p.lr.height()))
        .min()
        .unwrap_or(0)
        .min(cfg.patch_size);
    let schedule = StepDecay { initial: cfg.learning_rate, factor: cfg.lr_decay_factor, every: cfg.lr_decay_every };
    let mut opt = Adam::<T>::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..cfg.max_epochs {
        opt.lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sample_loss = vec![0.0; pairs.len()];
        for batch in order.chunks(cfg.batch_size) {
            let crops = batch.iter().map(|&i| crop_pair(&pairs[i], patch, m, &mut rng)).collect::<Result<Vec<_>>>()?;
            let lr = Tensor::stack(&crops.iter().map(|c| c.0.clone()).collect::<Vec<_>>());
            let hr = Tensor::stack(&crops.iter().map(|c| c.1.clone()).collect::<Vec<_>>());
            let grads = {
                let mut g = Graph::new(model.store());
                let outs = model.forward(&mut g, &lr)?;
                let steps = outs.len();
                let mut per_item = vec![0.0; batch.len()];
                let mut losses = Vec::with_capacity(steps);
                for &o in &outs {
                    for (acc, v) in per_item.iter_mut().zip(per_item_l1(g.value(o), &hr)) {
                        *acc += v / steps as f64;
                    }
                    losses.push(g.l1_loss(o, hr.clone()));
                }
                let mut total = losses[0];
                for &l in &losses[1..] {
                    total = g.add(total, l);
                }
                let loss = g.scale(total, T::one() / T::of_usize(steps));
                for (&i, v) in batch.iter().zip(per_item) {
                    sample_loss[i] = v;
                }
                g.backward(loss)
            };
            model.store_mut().zero_grad();
            grads.accumulate_into(model.store_mut());
            opt.step(model.store_mut());
        }
        let mean = sample_loss.iter().sum::<f64>() / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: mean });
        }
        history.push(mean);
        on_epoch(epoch, mean);
    }
    model.checkpoint(cfg.max_epochs, history)
}
