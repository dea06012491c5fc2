use serde::{Deserialize, Serialize};

use crate::tiling::{BoundingBox, NUM_CLASSES};

/// Intersection over union of two `[x1, y1, x2, y2]` boxes; 0 when either
/// has no area.
pub fn iou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let (aa, ab) = (area(a), area(b));
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    (inter / (aa + ab - inter)).clamp(0.0, 1.0)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    iou_xyxy(a.xyxy(), b.xyxy())
}

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetMatch {
    pub class_id: usize,
    pub confidence: f64,
    /// Index of the same-class ground truth this detection claimed.
    pub gt: Option<usize>,
}

impl DetMatch {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

/// Class-aware greedy matching of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// In descending confidence order (ties keep input order).
    pub detections: Vec<DetMatch>,
    pub gt_classes: Vec<usize>,
    pub gt_matched: Vec<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl MatchResult {
    /// Counts for `class_id` over detections with confidence ≥ `min_conf`.
    pub fn counts(&self, class_id: usize, min_conf: f64) -> ClassCounts {
        let mut c = ClassCounts::default();
        let mut matched = vec![false; self.gt_classes.len()];
        for d in self.detections.iter().filter(|d| d.class_id == class_id && d.confidence >= min_conf) {
            match d.gt {
                Some(g) => {
                    c.tp += 1;
                    matched[g] = true;
                }
                None => c.fp += 1,
            }
        }
        c.fn_ = self.gt_classes.iter().zip(&matched).filter(|(&k, &m)| k == class_id && !m).count() as u64;
        c
    }

    pub fn num_gt(&self, class_id: usize) -> usize {
        self.gt_classes.iter().filter(|&&k| k == class_id).count()
    }
}

/// Indices of `dets` by descending confidence, stable.
pub(crate) fn confidence_order(dets: &[BoundingBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy best-IoU matching: each detection, highest confidence first,
/// claims the unmatched same-class ground truth with the largest IoU ≥
/// `iou_threshold` (lowest index on ties).
pub fn match_detections(dets: &[BoundingBox], gts: &[BoundingBox], iou_threshold: f64) -> MatchResult {
    let mut gt_matched = vec![false; gts.len()];
    let detections = confidence_order(dets)
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if gt_matched[j] || g.class_id != d.class_id {
                    continue;
                }
                let v = iou(d, g);
                if v >= iou_threshold && best.map_or(true, |(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                gt_matched[j] = true;
            }
            DetMatch { class_id: d.class_id, confidence: d.confidence, gt: best.map(|b| b.0) }
        })
        .collect();
    MatchResult { detections, gt_classes: gts.iter().map(|g| g.class_id).collect(), gt_matched }
}

/// Background index in the confusion matrix.
pub const BACKGROUND: usize = NUM_CLASSES;

/// 3 × 3 tally indexed `[predicted][actual]` over
/// {underwater, on sand, background}.
///
/// Cell names follow the published layout: row 0 is `TP1 FP1 FP2`, row 1
/// `FN1 TP2 FP3`, row 2 `FN2 FN3 TN`. Row sums are predicted totals and
/// column sums actual totals. TN stays 0 for box detection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES + 1]; NUM_CLASSES + 1],
}

impl ConfusionMatrix {
    pub fn tp1(&self) -> u64 {
        self.counts[0][0]
    }
    pub fn fp1(&self) -> u64 {
        self.counts[0][1]
    }
    pub fn fp2(&self) -> u64 {
        self.counts[0][2]
    }
    pub fn fn1(&self) -> u64 {
        self.counts[1][0]
    }
    pub fn tp2(&self) -> u64 {
        self.counts[1][1]
    }
    pub fn fp3(&self) -> u64 {
        self.counts[1][2]
    }
    pub fn fn2(&self) -> u64 {
        self.counts[2][0]
    }
    pub fn fn3(&self) -> u64 {
        self.counts[2][1]
    }
    pub fn tn(&self) -> u64 {
        self.counts[2][2]
    }

    pub fn row_sum(&self, pred: usize) -> u64 {
        self.counts[pred].iter().sum()
    }

    pub fn col_sum(&self, actual: usize) -> u64 {
        self.counts.iter().map(|r| r[actual]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    /// Class-level counts read off the matrix: FP is the rest of the row,
    /// FN the rest of the column.
    pub fn class_counts(&self, class_id: usize) -> ClassCounts {
        let tp = self.counts[class_id][class_id];
        ClassCounts { tp, fp: self.row_sum(class_id) - tp, fn_: self.col_sum(class_id) - tp }
    }
}

/// Builds the confusion matrix of one image. Same-class matches come
/// first; leftover detections may then claim a leftover ground truth of
/// the other class (best IoU ≥ threshold), and anything still unpaired
/// falls into the background row or column.
pub fn confusion_matrix(dets: &[BoundingBox], gts: &[BoundingBox], iou_threshold: f64) -> ConfusionMatrix {
    let m = match_detections(dets, gts, iou_threshold);
    let mut cm = ConfusionMatrix::default();
    let mut gt_used = m.gt_matched.clone();
    let order = confidence_order(dets);
    for (d, &i) in m.detections.iter().zip(&order) {
        if let Some(g) = d.gt {
            cm.counts[d.class_id][gts[g].class_id] += 1;
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_used[j] || g.class_id == d.class_id {
                continue;
            }
            let v = iou(&dets[i], g);
            if v >= iou_threshold && best.map_or(true, |(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, _)) => {
                gt_used[j] = true;
                cm.counts[d.class_id][gts[j].class_id] += 1;
            }
            None => cm.counts[d.class_id][BACKGROUND] += 1,
        }
    }
    for (g, used) in gts.iter().zip(&gt_used) {
        if !used {
            cm.counts[BACKGROUND][g.class_id] += 1;
        }
    }
    cm
}
