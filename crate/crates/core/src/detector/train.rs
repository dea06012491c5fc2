use crabwatch_nn::{Adam, Graph, Scalar, StepDecay, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DecodeConfig, DetTrainConfig};
use super::decode::{decode, Detection};
use super::loss::{detection_loss, LossParts, PrecomputedGrad};
use super::network::Detector;
use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport, ImageEval};
use crate::imaging::ImageBuffer;
use crate::tiling::BoundingBox;

/// A square RGB tile and its normalized labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DetSample<T> {
    pub image: ImageBuffer<T>,
    pub labels: Vec<BoundingBox>,
}

fn check_samples<T: Scalar>(model: &Detector<T>, samples: &[DetSample<T>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let side = model.config().input_side;
    for (i, s) in samples.iter().enumerate() {
        if s.image.dims() != (side, side, 3) {
            return Err(shape_err(format!("sample {i}: {side}x{side}x3"), format!("{:?}", s.image.dims())));
        }
        for b in &s.labels {
            b.validate()?;
        }
    }
    Ok(())
}

impl<T: Scalar> Detector<T> {
    /// Loss of a batch and the resulting gradients, without touching the store.
    pub fn batch_loss(&self, images: &Tensor<T>, labels: &[Vec<BoundingBox>], cfg: &DetTrainConfig) -> Result<(Vec<LossParts>, crabwatch_nn::Grads<T>)> {
        let mut g = Graph::new(self.store());
        let outs = self.forward(&mut g, images)?;
        let side = images.dims4().2;
        let (parts, grads) = {
            let raw: Vec<&Tensor<T>> = outs.iter().map(|&v| g.value(v)).collect();
            detection_loss(&raw, &self.strides(), self.config().reg_max, side, labels, &cfg.loss)
        };
        let mean = parts.iter().map(|p| p.total).sum::<f64>() / parts.len() as f64;
        let loss = g.custom(&outs, Tensor::scalar(T::of(mean)), Box::new(PrecomputedGrad { grads }));
        Ok((parts, g.backward(loss)))
    }

    /// Detections for each image, normalized to the image side.
    pub fn predict(&self, images: &[ImageBuffer<T>], cfg: &DecodeConfig) -> Result<Vec<Vec<Detection>>> {
        cfg.validate()?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(8) {
            let batch = Tensor::stack(&chunk.iter().map(|im| im.to_tensor()).collect::<Vec<_>>());
            let raw = self.raw_outputs(&batch)?;
            out.extend(decode(&raw, &self.strides(), self.config().reg_max, batch.dims4().2, cfg));
        }
        Ok(out)
    }

    /// Predicts every sample and scores the result against its labels.
    pub fn evaluate(&self, samples: &[DetSample<T>], decode_cfg: &DecodeConfig, opts: &EvalOptions) -> Result<EvalReport> {
        let images: Vec<ImageBuffer<T>> = samples.iter().map(|s| s.image.clone()).collect();
        let dets = self.predict(&images, decode_cfg)?;
        let evals: Vec<ImageEval> = dets
            .into_iter()
            .zip(samples)
            .map(|(d, s)| ImageEval { detections: d, ground_truth: s.labels.clone() })
            .collect();
        evaluate(&evals, opts)
    }
}

/// Trains with Adam. Each epoch visits every sample once in a seeded
/// order; the recorded epoch loss is the mean pre-update per-image loss.
pub fn train_detector<T: Scalar>(model: &mut Detector<T>, samples: &[DetSample<T>], cfg: &DetTrainConfig) -> Result<Checkpoint> {
    train_detector_with(model, samples, cfg, |_, _| {})
}

/// [`train_detector`] with a per-epoch callback receiving `(epoch, mean_loss)`.
pub fn train_detector_with<T: Scalar>(
    model: &mut Detector<T>,
    samples: &[DetSample<T>],
    cfg: &DetTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Checkpoint> {
    cfg.validate()?;
    check_samples(model, samples)?;
    let tensors: Vec<Tensor<T>> = samples.iter().map(|s| s.image.to_tensor()).collect();
    let schedule = StepDecay { initial: cfg.learning_rate, factor: cfg.lr_decay_factor, every: cfg.lr_decay_every };
    let mut opt = Adam::<T>::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt.lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sample_loss = vec![0.0; samples.len()];
        for batch in order.chunks(cfg.batch_size) {
            let images = Tensor::stack(&batch.iter().map(|&i| tensors[i].clone()).collect::<Vec<_>>());
            let labels: Vec<Vec<BoundingBox>> = batch.iter().map(|&i| samples[i].labels.clone()).collect();
            let (parts, grads) = model.batch_loss(&images, &labels, cfg)?;
            for (&i, p) in batch.iter().zip(&parts) {
                sample_loss[i] = p.total;
            }
            model.store_mut().zero_grad();
            grads.accumulate_into(model.store_mut());
            opt.step(model.store_mut());
        }
        let mean = sample_loss.iter().sum::<f64>() / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: mean });
        }
        history.push(mean);
        on_epoch(epoch, mean);
    }
    model.checkpoint(cfg.epochs, history)
}
