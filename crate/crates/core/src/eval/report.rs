use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ap::{mean_ap, precision_recall_f1, PrCurve};
use super::matching::{confusion_matrix, match_detections, ClassCounts, ConfusionMatrix, MatchResult};
use crate::error::{Error, Result};
use crate::tiling::{BoundingBox, CLASS_NAMES, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Operating point for P/R/F1; AP always uses every detection.
    pub score_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { iou_threshold: 0.5, score_threshold: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    pub num_gt: usize,
    pub counts: ClassCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the class has no ground truth.
    pub ap50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    /// Mean over classes of P and R at the operating point.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map50: f64,
    pub confusion: ConfusionMatrix,
    pub images: usize,
}

/// Detections and ground truth of one image, both tile-normalized.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub detections: Vec<BoundingBox>,
    pub ground_truth: Vec<BoundingBox>,
}

/// Scores a test set. Per-image work runs in parallel; the reduction is in
/// image order, so results do not depend on scheduling.
pub fn evaluate(images: &[ImageEval], opts: &EvalOptions) -> Result<EvalReport> {
    if !(opts.iou_threshold > 0.0 && opts.iou_threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!("iou threshold {}", opts.iou_threshold)));
    }
    let per_image: Vec<(MatchResult, ConfusionMatrix)> = images
        .par_iter()
        .map(|im| {
            let operating: Vec<BoundingBox> =
                im.detections.iter().copied().filter(|d| d.confidence >= opts.score_threshold).collect();
            (
                match_detections(&im.detections, &im.ground_truth, opts.iou_threshold),
                confusion_matrix(&operating, &im.ground_truth, opts.iou_threshold),
            )
        })
        .collect();

    let mut confusion = ConfusionMatrix::default();
    for (_, cm) in &per_image {
        confusion.add(cm);
    }
    let classes: Vec<ClassReport> = (0..NUM_CLASSES)
        .map(|c| {
            let mut counts = ClassCounts::default();
            let mut ranked: Vec<(f64, usize, bool)> = Vec::new();
            let mut num_gt = 0;
            for (i, (m, _)) in per_image.iter().enumerate() {
                let k = m.counts(c, opts.score_threshold);
                counts.tp += k.tp;
                counts.fp += k.fp;
                counts.fn_ += k.fn_;
                num_gt += m.num_gt(c);
                ranked.extend(m.detections.iter().filter(|d| d.class_id == c).map(|d| (d.confidence, i, d.is_tp())));
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let hits: Vec<bool> = ranked.iter().map(|r| r.2).collect();
            let prf = precision_recall_f1(counts);
            ClassReport {
                class_id: c,
                name: CLASS_NAMES[c].to_string(),
                num_gt,
                counts,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                ap50: PrCurve::<f64>::from_ranked(&hits, num_gt).average_precision(),
            }
        })
        .collect();
    let n = classes.len() as f64;
    let precision = classes.iter().map(|c| c.precision).sum::<f64>() / n;
    let recall = classes.iter().map(|c| c.recall).sum::<f64>() / n;
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    let aps: Vec<Option<f64>> = classes.iter().map(|c| c.ap50).collect();
    Ok(EvalReport { classes, precision, recall, f1, map50: mean_ap(&aps).unwrap_or(0.0), confusion, images: images.len() })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "method,testset,precision,recall,f1,ap_underwater,ap_on_sand,map50";

    /// One CSV row (no header) for table assembly.
    pub fn csv_row(&self, method: &str, testset: &str) -> String {
        let ap = |c: usize| self.classes[c].ap50.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        format!(
            "{method},{testset},{:.6},{:.6},{:.6},{},{},{:.6}",
            self.precision,
            self.recall,
            self.f1,
            ap(0),
            ap(1),
            self.map50
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_empty_sets() {
        let g = BoundingBox::ground_truth(0, 0.5, 0.5, 0.2, 0.2).unwrap();
        let h = BoundingBox::ground_truth(1, 0.2, 0.2, 0.1, 0.1).unwrap();
        let im = ImageEval { detections: vec![g, h], ground_truth: vec![g, h] };
        let r = evaluate(&[im], &EvalOptions::default()).unwrap();
        assert_eq!((r.map50, r.precision, r.recall), (1.0, 1.0, 1.0));
        assert_eq!(r.confusion.tp1() + r.confusion.tp2(), 2);
        let miss = ImageEval { detections: vec![], ground_truth: vec![g] };
        let r = evaluate(&[miss], &EvalOptions::default()).unwrap();
        assert_eq!(r.classes[0].ap50, Some(0.0));
        assert_eq!(r.classes[1].ap50, None);
        assert_eq!(r.map50, 0.0);
        assert!(r.to_json().unwrap().contains("\"map50\""));
        assert_eq!(r.csv_row("m", "hr"), "m,hr,0.500000,0.500000,0.500000,0.000000,NA,0.000000");
    }
}
