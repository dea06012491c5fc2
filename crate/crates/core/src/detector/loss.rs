//! Detection loss: task-aligned assignment, BCE classification, GIoU box
//! regression and distribution focal loss, with analytic gradients.

use crabwatch_nn::{CustomOp, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::config::LossConfig;
use super::decode::{anchors, level_sides, sigmoid, softmax, Anchor, RawView};
use crate::eval::iou_xyxy;
use crate::tiling::BoundingBox;

/// GIoU of `p` against `t` (both `x1 y1 x2 y2`) and its gradient with
/// respect to the four coordinates of `p`.
pub fn giou_with_grad(p: [f64; 4], t: [f64; 4]) -> (f64, [f64; 4]) {
    let pw = p[2] - p[0];
    let ph = p[3] - p[1];
    let area_p = pw * ph;
    let area_t = (t[2] - t[0]) * (t[3] - t[1]);
    let ix = p[2].min(t[2]) - p[0].max(t[0]);
    let iy = p[3].min(t[3]) - p[1].max(t[1]);
    let (iw, ih) = (ix.max(0.0), iy.max(0.0));
    let inter = iw * ih;
    let union = area_p + area_t - inter;
    let cw = p[2].max(t[2]) - p[0].min(t[0]);
    let ch = p[3].max(t[3]) - p[1].min(t[1]);
    let hull = cw * ch;
    if union <= 0.0 || hull <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let g = inter / union - (hull - union) / hull;

    let dg_di = (union + inter) / (union * union) - 1.0 / hull;
    let dg_dap = -inter / (union * union) + 1.0 / hull;
    let dg_dc = -union / (hull * hull);

    let overlap = ix > 0.0 && iy > 0.0;
    let di = if overlap {
        [
            if p[0] > t[0] { -ih } else { 0.0 },
            if p[1] > t[1] { -iw } else { 0.0 },
            if p[2] < t[2] { ih } else { 0.0 },
            if p[3] < t[3] { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let dap = [-ph, -pw, ph, pw];
    let dc = [
        if p[0] < t[0] { -ch } else { 0.0 },
        if p[1] < t[1] { -cw } else { 0.0 },
        if p[2] > t[2] { ch } else { 0.0 },
        if p[3] > t[3] { cw } else { 0.0 },
    ];
    let grad = std::array::from_fn(|k| dg_di * di[k] + dg_dap * dap[k] + dg_dc * dc[k]);
    (g, grad)
}

/// Binary cross-entropy on a logit.
fn bce_logit(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

/// Loss terms of one image, already weighted and normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub box_loss: f64,
    pub cls_loss: f64,
    pub dfl_loss: f64,
}

/// One positive anchor of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positive {
    pub anchor: usize,
    pub gt: usize,
    /// Normalized alignment target, the soft label for the gt class.
    pub target: f64,
}

/// Decoded predictions of one image in pixel units.
struct Preds {
    boxes: Vec<[f64; 4]>,
    scores: Vec<Vec<f64>>,
}

fn predictions<T: Scalar>(view: &RawView<'_, T>, anchors: &[Anchor], reg_max: usize, nc: usize) -> Preds {
    let mut logits = vec![0.0; reg_max];
    let mut probs = vec![0.0; reg_max];
    let mut boxes = Vec::with_capacity(anchors.len());
    let mut scores = Vec::with_capacity(anchors.len());
    for a in anchors {
        let mut d = [0.0; 4];
        for (k, dk) in d.iter_mut().enumerate() {
            for (j, l) in logits.iter_mut().enumerate() {
                *l = view.value(a, k * reg_max + j);
            }
            softmax(&logits, &mut probs);
            *dk = probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum::<f64>() * a.stride;
        }
        boxes.push([a.cx - d[0], a.cy - d[1], a.cx + d[2], a.cy + d[3]]);
        scores.push((0..nc).map(|c| sigmoid(view.value(a, 4 * reg_max + c))).collect());
    }
    Preds { boxes, scores }
}

fn gt_pixels(gts: &[BoundingBox], side: f64) -> Vec<[f64; 4]> {
    gts.iter().map(|g| g.xyxy().map(|v| v * side)).collect()
}

/// Task-aligned assignment for one image.
///
/// Candidates for a ground truth are the anchors whose centre lies inside it
/// (the nearest anchor if none does). Each candidate scores
/// `s^alpha * IoU^beta` with `s` its predicted probability of the gt class;
/// the `topk` best become positives. An anchor claimed by several ground
/// truths keeps the one its prediction overlaps most. Targets are the
/// metrics rescaled so that each ground truth's best positive gets that
/// ground truth's best IoU.
fn assign_image(preds: &Preds, anchors: &[Anchor], gts: &[BoundingBox], gt_px: &[[f64; 4]], cfg: &LossConfig) -> Vec<Positive> {
    let mut claims: Vec<Option<(usize, f64, f64)>> = vec![None; anchors.len()];
    for (gi, (g, b)) in gts.iter().zip(gt_px).enumerate() {
        let mut cands: Vec<usize> = (0..anchors.len())
            .filter(|&i| {
                let a = &anchors[i];
                (a.cx - b[0]).min(a.cy - b[1]).min(b[2] - a.cx).min(b[3] - a.cy) > 1e-9
            })
            .collect();
        if cands.is_empty() {
            let (gx, gy) = ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0);
            let dist = |i: usize| (anchors[i].cx - gx).powi(2) + (anchors[i].cy - gy).powi(2);
            let nearest = (0..anchors.len()).min_by(|&i, &j| dist(i).total_cmp(&dist(j)));
            cands.extend(nearest);
        }
        let mut scored: Vec<(usize, f64, f64)> = cands
            .into_iter()
            .map(|i| {
                let iou = iou_xyxy(preds.boxes[i], *b);
                let s = preds.scores[i][g.class_id];
                (i, s.powf(cfg.alpha) * iou.powf(cfg.beta), iou)
            })
            .collect();
        scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for &(i, metric, iou) in scored.iter().take(cfg.topk) {
            let better = match claims[i] {
                None => true,
                Some((other, _, other_iou)) => iou > other_iou || (iou == other_iou && gi < other),
            };
            if better {
                claims[i] = Some((gi, metric, iou));
            }
        }
    }
    let mut best_metric = vec![0.0f64; gts.len()];
    let mut best_iou = vec![0.0f64; gts.len()];
    for &(gi, m, iou) in claims.iter().flatten() {
        best_metric[gi] = best_metric[gi].max(m);
        best_iou[gi] = best_iou[gi].max(iou);
    }
    claims
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            c.map(|(gi, m, _)| Positive { anchor: i, gt: gi, target: m * best_iou[gi] / (best_metric[gi] + 1e-9) })
        })
        .collect()
}

/// Assignment for every image of a batch of raw maps.
pub fn assign<T: Scalar>(
    raw: &[&Tensor<T>],
    strides: &[usize],
    reg_max: usize,
    image_side: usize,
    targets: &[Vec<BoundingBox>],
    cfg: &LossConfig,
) -> Vec<Vec<Positive>> {
    let nc = raw[0].dims4().1 - 4 * reg_max;
    let sides = level_sides(raw, strides, 4 * reg_max + nc);
    let anchors = anchors(&sides, strides);
    targets
        .iter()
        .enumerate()
        .map(|(item, gts)| {
            let view = RawView { maps: raw.to_vec(), item };
            let preds = predictions(&view, &anchors, reg_max, nc);
            assign_image(&preds, &anchors, gts, &gt_pixels(gts, image_side as f64), cfg)
        })
        .collect()
}

/// Loss of the batch (mean over images of each image's loss) for a fixed
/// assignment, with its gradient with respect to every raw map. Targets are
/// constants, so the gradient is exact for the returned value.
pub fn loss_with_assignment<T: Scalar>(
    raw: &[&Tensor<T>],
    strides: &[usize],
    reg_max: usize,
    image_side: usize,
    targets: &[Vec<BoundingBox>],
    positives: &[Vec<Positive>],
    cfg: &LossConfig,
) -> (Vec<LossParts>, Vec<Tensor<T>>) {
    let nc = raw[0].dims4().1 - 4 * reg_max;
    let sides = level_sides(raw, strides, 4 * reg_max + nc);
    let anchors = anchors(&sides, strides);
    let n = targets.len();
    assert_eq!(raw[0].dims4().0, n, "one target list per image");
    let mut grads: Vec<Vec<f64>> = raw.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut parts = Vec::with_capacity(n);
    let inv_n = 1.0 / n as f64;
    let mut logits = vec![0.0; reg_max];
    let mut probs = vec![0.0; reg_max];

    for (item, (gts, pos)) in targets.iter().zip(positives).enumerate() {
        let view = RawView { maps: raw.to_vec(), item };
        let gt_px = gt_pixels(gts, image_side as f64);
        let norm = pos.iter().map(|p| p.target).sum::<f64>().max(1.0);
        let mut soft = vec![None; anchors.len()];
        for p in pos {
            soft[p.anchor] = Some((gts[p.gt].class_id, p.target));
        }

        let mut cls = 0.0;
        for (ai, a) in anchors.iter().enumerate() {
            for c in 0..nc {
                let t = match soft[ai] {
                    Some((k, v)) if k == c => v,
                    _ => 0.0,
                };
                let z = view.value(a, 4 * reg_max + c);
                cls += bce_logit(z, t);
                grads[a.level][view.flat_index(a, 4 * reg_max + c)] +=
                    cfg.cls_weight * (sigmoid(z) - t) / norm * inv_n;
            }
        }
        cls /= norm;

        let (mut box_l, mut dfl) = (0.0, 0.0);
        for p in pos {
            let a = &anchors[p.anchor];
            let g = gt_px[p.gt];
            let w = p.target / norm;
            let mut side_probs = [(); 4].map(|_| vec![0.0; reg_max]);
            let mut d = [0.0; 4];
            let mut lse = [0.0; 4];
            for k in 0..4 {
                for (j, l) in logits.iter_mut().enumerate() {
                    *l = view.value(a, k * reg_max + j);
                }
                lse[k] = softmax(&logits, &mut probs);
                side_probs[k].copy_from_slice(&probs);
                d[k] = probs.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
            }
            let s = a.stride;
            let pb = [a.cx - d[0] * s, a.cy - d[1] * s, a.cx + d[2] * s, a.cy + d[3] * s];
            let (giou, dg) = giou_with_grad(pb, g);
            box_l += (1.0 - giou) * w;
            // d(coord)/d(distance) is -s for the left/top sides and +s otherwise.
            let dcoord = [-s, -s, s, s];
            let goal = [(a.cx - g[0]) / s, (a.cy - g[1]) / s, (g[2] - a.cx) / s, (g[3] - a.cy) / s]
                .map(|v| v.clamp(0.0, reg_max as f64 - 1.01));
            for k in 0..4 {
                let dl_dd = -dg[k] * dcoord[k] * w * cfg.box_weight;
                let lo = goal[k].floor() as usize;
                let wl = lo as f64 + 1.0 - goal[k];
                let wr = 1.0 - wl;
                let base = k * reg_max;
                let logp = |j: usize| view.value(a, base + j) - lse[k];
                dfl += -(wl * logp(lo) + wr * logp(lo + 1)) * w / 4.0;
                for j in 0..reg_max {
                    let pj = side_probs[k][j];
                    let onehot = if j == lo { wl } else if j == lo + 1 { wr } else { 0.0 };
                    let g_box = dl_dd * pj * (j as f64 - d[k]);
                    let g_dfl = cfg.dfl_weight * (pj - onehot) * w / 4.0;
                    grads[a.level][view.flat_index(a, base + j)] += (g_box + g_dfl) * inv_n;
                }
            }
        }
        let (box_loss, cls_loss, dfl_loss) = (cfg.box_weight * box_l, cfg.cls_weight * cls, cfg.dfl_weight * dfl);
        parts.push(LossParts { total: box_loss + cls_loss + dfl_loss, box_loss, cls_loss, dfl_loss });
    }
    let grads = raw
        .iter()
        .zip(grads)
        .map(|(t, g)| Tensor::new(t.shape(), g.into_iter().map(T::of).collect()))
        .collect();
    (parts, grads)
}

/// Assigns and evaluates in one go.
pub fn detection_loss<T: Scalar>(
    raw: &[&Tensor<T>],
    strides: &[usize],
    reg_max: usize,
    image_side: usize,
    targets: &[Vec<BoundingBox>],
    cfg: &LossConfig,
) -> (Vec<LossParts>, Vec<Tensor<T>>) {
    let pos = assign(raw, strides, reg_max, image_side, targets, cfg);
    loss_with_assignment(raw, strides, reg_max, image_side, targets, &pos, cfg)
}

/// Hands precomputed gradients back to the tape, scaled by the upstream gradient.
pub(crate) struct PrecomputedGrad<T> {
    pub grads: Vec<Tensor<T>>,
}

impl<T: Scalar> CustomOp<T> for PrecomputedGrad<T> {
    fn name(&self) -> &str {
        "detection_loss"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let s = grad_out.data()[0];
        self.grads.iter().map(|g| Some(g.map(|v| v * s))).collect()
    }
}
