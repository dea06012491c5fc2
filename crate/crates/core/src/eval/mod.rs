//! Detection matching, the 3 × 3 confusion matrix, P/R/F1, all-point
//! interpolated AP and mAP@50.

mod ap;
mod matching;
mod report;

pub use ap::{average_precision, mean_ap, precision_recall_f1, PrCurve, Prf};
pub use matching::{
    confusion_matrix, iou, iou_xyxy, match_detections, ClassCounts, ConfusionMatrix, DetMatch, MatchResult, BACKGROUND,
};
pub use report::{evaluate, ClassReport, EvalOptions, EvalReport, ImageEval};
