use crabwatch_nn::{Scalar, Tensor};

use super::config::DecodeConfig;
use crate::eval::iou_xyxy;
use crate::tiling::BoundingBox;

/// A detection in tile-normalized coordinates.
pub type Detection = BoundingBox;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `logits` into `probs`; returns the log of the normalizer
/// (so `ln p_j = logits[j] - lse`).
pub(crate) fn softmax(logits: &[f64], probs: &mut [f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - m).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    m + sum.ln()
}

/// Expected bin index under the softmax of `logits`.
pub fn dfl_expectation(logits: &[f64]) -> f64 {
    let mut p = vec![0.0; logits.len()];
    softmax(logits, &mut p);
    p.iter().enumerate().map(|(j, pj)| j as f64 * pj).sum()
}

/// Anchor point of one grid cell on one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Anchor {
    pub level: usize,
    /// Flat `y * W + x` position inside the level.
    pub cell: usize,
    pub stride: f64,
    pub cx: f64,
    pub cy: f64,
}

/// All anchors, finest level first, row-major within a level.
pub(crate) fn anchors(sides: &[usize], strides: &[usize]) -> Vec<Anchor> {
    let mut out = Vec::new();
    for (level, (&side, &stride)) in sides.iter().zip(strides).enumerate() {
        let s = stride as f64;
        for y in 0..side {
            for x in 0..side {
                out.push(Anchor { level, cell: y * side + x, stride: s, cx: (x as f64 + 0.5) * s, cy: (y as f64 + 0.5) * s });
            }
        }
    }
    out
}

/// Read access to one image of the per-level raw maps.
pub(crate) struct RawView<'a, T> {
    pub maps: Vec<&'a Tensor<T>>,
    pub item: usize,
}

impl<T: Scalar> RawView<'_, T> {
    pub fn value(&self, a: &Anchor, channel: usize) -> f64 {
        let t = self.maps[a.level];
        let (_, c, h, w) = t.dims4();
        t.data()[(self.item * c + channel) * h * w + a.cell].as_f64()
    }

    pub fn flat_index(&self, a: &Anchor, channel: usize) -> usize {
        let (_, c, h, w) = self.maps[a.level].dims4();
        (self.item * c + channel) * h * w + a.cell
    }
}

/// Map sides of `raw`, checking that they form a consistent pyramid.
pub(crate) fn level_sides<T: Scalar>(raw: &[&Tensor<T>], strides: &[usize], channels: usize) -> Vec<usize> {
    assert_eq!(raw.len(), strides.len(), "one raw map per stride");
    raw.iter()
        .map(|t| {
            let (_, c, h, w) = t.dims4();
            assert_eq!(c, channels, "raw map channels");
            assert_eq!(h, w, "raw maps are square");
            h
        })
        .collect()
}

/// Class-wise greedy suppression over `(xyxy, class, confidence)` triples.
/// A box is dropped when its IoU with an already kept box of the same class
/// exceeds `iou_threshold`. Returns kept indices by descending confidence;
/// ties keep input order.
pub fn nms_indices(boxes: &[([f64; 4], usize, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].2.total_cmp(&boxes[a].2));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let (b, class_id, _) = boxes[i];
        let clash = kept.iter().any(|&k| boxes[k].1 == class_id && iou_xyxy(boxes[k].0, b) > iou_threshold);
        if !clash {
            kept.push(i);
        }
    }
    kept
}

/// [`nms_indices`] on detections.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let triples: Vec<_> = dets.iter().map(|d| (d.xyxy(), d.class_id, d.confidence)).collect();
    nms_indices(&triples, iou_threshold).into_iter().map(|i| dets[i]).collect()
}

/// Turns raw maps `(N, 4R + C, S/s, S/s)` into per-image detections for an
/// `image_side`-pixel square input. Each cell proposes its best class; cells
/// below `conf_threshold` are skipped, boxes are clipped to the image, and
/// class-wise NMS runs before the `max_detections` cut.
pub fn decode<T: Scalar>(
    raw: &[Tensor<T>],
    strides: &[usize],
    reg_max: usize,
    image_side: usize,
    cfg: &DecodeConfig,
) -> Vec<Vec<Detection>> {
    let maps: Vec<&Tensor<T>> = raw.iter().collect();
    let Some(first) = maps.first() else { return Vec::new() };
    let n = first.dims4().0;
    let nc = first.dims4().1 - 4 * reg_max;
    let sides = level_sides(&maps, strides, 4 * reg_max + nc);
    let anchors = anchors(&sides, strides);
    let side = image_side as f64;
    let mut logits = vec![0.0; reg_max];
    (0..n)
        .map(|item| {
            let view = RawView { maps: maps.clone(), item };
            let mut cands = Vec::new();
            for a in &anchors {
                let (class_id, score) = (0..nc)
                    .map(|c| (c, sigmoid(view.value(a, 4 * reg_max + c))))
                    .fold((0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
                if score < cfg.conf_threshold {
                    continue;
                }
                let mut d = [0.0; 4];
                for (k, dk) in d.iter_mut().enumerate() {
                    for (j, l) in logits.iter_mut().enumerate() {
                        *l = view.value(a, k * reg_max + j);
                    }
                    *dk = dfl_expectation(&logits) * a.stride;
                }
                let b = [
                    (a.cx - d[0]).clamp(0.0, side),
                    (a.cy - d[1]).clamp(0.0, side),
                    (a.cx + d[2]).clamp(0.0, side),
                    (a.cy + d[3]).clamp(0.0, side),
                ];
                if b[2] > b[0] && b[3] > b[1] {
                    let norm = b.map(|v| v / side);
                    cands.push(BoundingBox::from_xyxy(class_id, norm, score.clamp(0.0, 1.0)));
                }
            }
            let mut kept = nms(&cands, cfg.nms_iou);
            kept.truncate(cfg.max_detections);
            kept
        })
        .collect()
}
