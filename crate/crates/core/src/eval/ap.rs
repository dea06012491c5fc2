use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use super::matching::ClassCounts;

/// Precision, recall and F1 of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall/F1 with pinned zero-denominator rules: with no
/// detections, P is 1 if nothing was missed and 0 otherwise; with no ground
/// truth, R is 1 if nothing was falsely detected and 0 otherwise; F1 is 0
/// when P + R = 0.
pub fn precision_recall_f1(c: ClassCounts) -> Prf {
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let precision = if c.tp + c.fp == 0 {
        if c.fn_ == 0 { 1.0 } else { 0.0 }
    } else {
        tp / (tp + fp)
    };
    let recall = if c.tp + c.fn_ == 0 {
        if c.fp == 0 { 1.0 } else { 0.0 }
    } else {
        tp / (tp + fn_)
    };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Prf { precision, recall, f1 }
}

/// Precision/recall points of a ranked detection list, one per detection.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve<T> {
    pub recall: Vec<T>,
    pub precision: Vec<T>,
    pub num_gt: usize,
}

impl<T: Num + Clone + PartialOrd + FromPrimitive> PrCurve<T> {
    /// `hits[k]` tells whether the k-th most confident detection is a true
    /// positive.
    pub fn from_ranked(hits: &[bool], num_gt: usize) -> Self {
        let n = T::from_usize(num_gt.max(1)).expect("count fits the scalar type");
        let (mut tp, mut seen) = (0usize, 0usize);
        let mut recall = Vec::with_capacity(hits.len());
        let mut precision = Vec::with_capacity(hits.len());
        for &h in hits {
            seen += 1;
            tp += usize::from(h);
            let tp_t = T::from_usize(tp).expect("count fits the scalar type");
            recall.push(if num_gt == 0 { T::zero() } else { tp_t.clone() / n.clone() });
            precision.push(tp_t / T::from_usize(seen).expect("count fits the scalar type"));
        }
        Self { recall, precision, num_gt }
    }

    /// Running maximum of precision from the right: the best precision at
    /// any recall at least as large.
    pub fn interpolated(&self) -> Vec<T> {
        let mut out = self.precision.clone();
        for k in (0..out.len().saturating_sub(1)).rev() {
            if out[k + 1] > out[k] {
                out[k] = out[k + 1].clone();
            }
        }
        out
    }

    /// All-point interpolated AP. `None` when there is no ground truth.
    pub fn average_precision(&self) -> Option<T> {
        if self.num_gt == 0 {
            return None;
        }
        let interp = self.interpolated();
        let mut ap = T::zero();
        let mut prev = T::zero();
        for (r, p) in self.recall.iter().zip(interp) {
            if *r > prev {
                ap = ap + (r.clone() - prev) * p;
                prev = r.clone();
            }
        }
        Some(ap)
    }
}

pub fn average_precision<T: Num + Clone + PartialOrd + FromPrimitive>(curve: &PrCurve<T>) -> Option<T> {
    curve.average_precision()
}

/// Mean over the classes that have an AP; `None` if none do.
pub fn mean_ap(aps: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = aps.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prf_cases() {
        let p = precision_recall_f1(ClassCounts { tp: 3, fp: 1, fn_: 0 });
        assert_eq!((p.precision, p.recall), (0.75, 1.0));
        assert!((p.f1 - 6.0 / 7.0).abs() < 1e-15);
        let v = precision_recall_f1(ClassCounts::default());
        assert_eq!((v.precision, v.recall, v.f1), (1.0, 1.0, 1.0));
        let miss = precision_recall_f1(ClassCounts { tp: 0, fp: 0, fn_: 2 });
        assert_eq!((miss.precision, miss.recall, miss.f1), (0.0, 0.0, 0.0));
        let spurious = precision_recall_f1(ClassCounts { tp: 0, fp: 2, fn_: 0 });
        assert_eq!((spurious.precision, spurious.recall), (0.0, 0.0));
    }

    #[test]
    fn ap_simple_cases() {
        assert_eq!(PrCurve::<f64>::from_ranked(&[true], 1).average_precision(), Some(1.0));
        assert_eq!(PrCurve::<f64>::from_ranked(&[], 3).average_precision(), Some(0.0));
        assert_eq!(PrCurve::<f64>::from_ranked(&[false], 0).average_precision(), None);
        let ap = PrCurve::<f64>::from_ranked(&[true, false, true], 2).average_precision().unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn mean_ap_skips_missing() {
        assert_eq!(mean_ap(&[Some(1.0), Some(0.0)]), Some(0.5));
        assert_eq!(mean_ap(&[Some(0.4), None]), Some(0.4));
        assert_eq!(mean_ap(&[None, None]), None);
    }
}
