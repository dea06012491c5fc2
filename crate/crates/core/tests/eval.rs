mod common;

use common::brute_ap;
use crabwatch::eval::{
    average_precision, confusion_matrix, evaluate, iou, iou_xyxy, match_detections, mean_ap, precision_recall_f1,
    ClassCounts, EvalOptions, EvalReport, ImageEval, PrCurve, BACKGROUND,
};
use crabwatch::tiling::BoundingBox;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bx(class_id: usize, cx: f64, cy: f64, s: f64, conf: f64) -> BoundingBox {
    BoundingBox::new(class_id, cx, cy, s, s, conf).unwrap()
}

/// Random boxes clustered so that matches, misses and confusions all occur.
fn random_scene(rng: &mut ChaCha8Rng, max: usize) -> (Vec<BoundingBox>, Vec<BoundingBox>) {
    let gts: Vec<BoundingBox> = (0..rng.gen_range(0..=max))
        .map(|_| bx(rng.gen_range(0..2), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.05..0.3), 1.0))
        .collect();
    let dets = (0..rng.gen_range(0..=max))
        .map(|_| {
            let conf = rng.gen_range(0.01..1.0);
            if !gts.is_empty() && rng.gen_bool(0.7) {
                let g = gts[rng.gen_range(0..gts.len())];
                let class = if rng.gen_bool(0.8) { g.class_id } else { 1 - g.class_id };
                let j = 0.3 * g.w;
                BoundingBox::new(class, g.cx + rng.gen_range(-j..j), g.cy + rng.gen_range(-j..j), g.w * rng.gen_range(0.7..1.3), g.h, conf)
                    .unwrap()
            } else {
                bx(rng.gen_range(0..2), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.05..0.3), conf)
            }
        })
        .collect();
    (dets, gts)
}

#[test]
fn iou_hand_values() {
    let a = [0.0, 0.0, 1.0, 1.0];
    assert_eq!(iou_xyxy(a, a), 1.0);
    assert_eq!(iou_xyxy(a, [2.0, 2.0, 3.0, 3.0]), 0.0);
    assert!((iou_xyxy(a, [0.5, 0.0, 1.5, 1.0]) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(iou_xyxy([0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]), 0.0);
    let b = bx(0, 0.5, 0.5, 0.2, 0.9);
    assert_eq!(iou(&b, &b), 1.0);
}

#[test]
fn matching_examples() {
    let gt = [bx(0, 0.5, 0.5, 0.2, 1.0)];
    let one = match_detections(&[bx(0, 0.5, 0.5, 0.2, 0.9)], &gt, 0.5);
    assert_eq!(one.counts(0, 0.0), ClassCounts { tp: 1, fp: 0, fn_: 0 });

    let two = match_detections(&[bx(0, 0.51, 0.5, 0.2, 0.8), bx(0, 0.5, 0.5, 0.2, 0.9)], &gt, 0.5);
    assert_eq!(two.counts(0, 0.0), ClassCounts { tp: 1, fp: 1, fn_: 0 });
    assert_eq!(two.detections[0].confidence, 0.9);
    assert!(two.detections[0].is_tp());

    let other = match_detections(&[bx(1, 0.5, 0.5, 0.2, 0.9)], &gt, 0.5);
    assert_eq!(other.counts(1, 0.0), ClassCounts { tp: 0, fp: 1, fn_: 0 });
    assert_eq!(other.counts(0, 0.0), ClassCounts { tp: 0, fp: 0, fn_: 1 });
}

/// Detections claim ground truth in confidence order, each taking its best
/// remaining overlap.
#[test]
fn greedy_claims_for_the_more_confident_detection() {
    let gts = [bx(0, 0.5, 0.5, 0.2, 1.0), bx(0, 0.62, 0.5, 0.2, 1.0)];
    // The high-confidence detection overlaps both; it takes the better one.
    let dets = [bx(0, 0.6, 0.5, 0.2, 0.9), bx(0, 0.52, 0.5, 0.2, 0.5)];
    let m = match_detections(&dets, &gts, 0.5);
    assert_eq!(m.detections[0].gt, Some(1));
    assert_eq!(m.detections[1].gt, Some(0));
}

#[test]
fn cross_class_overlaps_fill_off_diagonal_cells() {
    let gt0 = [bx(0, 0.3, 0.3, 0.2, 1.0)];
    let gt1 = [bx(1, 0.3, 0.3, 0.2, 1.0)];
    let cm = confusion_matrix(&[bx(0, 0.3, 0.3, 0.2, 0.9)], &gt1, 0.5);
    assert_eq!((cm.fp1(), cm.total()), (1, 1));
    let cm = confusion_matrix(&[bx(1, 0.3, 0.3, 0.2, 0.9)], &gt0, 0.5);
    assert_eq!((cm.fn1(), cm.total()), (1, 1));
    let cm = confusion_matrix(&[bx(0, 0.8, 0.8, 0.1, 0.9)], &gt1, 0.5);
    assert_eq!((cm.fp2(), cm.fn3(), cm.total()), (1, 1, 2));
    let cm = confusion_matrix(&[bx(1, 0.8, 0.8, 0.1, 0.9), bx(0, 0.3, 0.3, 0.2, 0.8)], &gt0, 0.5);
    assert_eq!((cm.tp1(), cm.fp3(), cm.tn()), (1, 1, 0));
}

#[test]
fn marginals_reproduce_the_sum_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (dets, gts) = random_scene(&mut rng, 8);
        let cm = confusion_matrix(&dets, &gts, 0.5);
        let pred = |c: usize| dets.iter().filter(|d| d.class_id == c).count() as u64;
        let actual = |c: usize| gts.iter().filter(|g| g.class_id == c).count() as u64;
        assert_eq!(cm.tp1() + cm.fp1() + cm.fp2(), pred(0));
        assert_eq!(cm.fn1() + cm.tp2() + cm.fp3(), pred(1));
        assert_eq!(cm.tp1() + cm.fn1() + cm.fn2(), actual(0));
        assert_eq!(cm.fp1() + cm.tp2() + cm.fn3(), actual(1));
        assert_eq!(cm.row_sum(0), pred(0));
        assert_eq!(cm.col_sum(1), actual(1));
        assert_eq!(cm.row_sum(BACKGROUND), cm.fn2() + cm.fn3());
        assert_eq!(cm.tn(), 0);
        // The diagonal agrees with class-aware matching.
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(cm.tp1(), m.counts(0, 0.0).tp);
        assert_eq!(cm.tp2(), m.counts(1, 0.0).tp);
    }
}

#[test]
fn prf_examples_and_conventions() {
    let p = precision_recall_f1(ClassCounts { tp: 3, fp: 1, fn_: 0 });
    assert_eq!((p.precision, p.recall), (0.75, 1.0));
    assert!((p.f1 - 6.0 / 7.0).abs() < 1e-15);
    let vacuous = precision_recall_f1(ClassCounts::default());
    assert_eq!((vacuous.precision, vacuous.recall, vacuous.f1), (1.0, 1.0, 1.0));
    let missed = precision_recall_f1(ClassCounts { tp: 0, fp: 0, fn_: 2 });
    assert_eq!((missed.precision, missed.recall, missed.f1), (0.0, 0.0, 0.0));
    let spurious = precision_recall_f1(ClassCounts { tp: 0, fp: 2, fn_: 0 });
    assert_eq!((spurious.precision, spurious.recall, spurious.f1), (0.0, 0.0, 0.0));
}

#[test]
fn ap_hand_cases() {
    assert_eq!(PrCurve::<f64>::from_ranked(&[true], 1).average_precision(), Some(1.0));
    let exact = average_precision(&PrCurve::<Ratio<i64>>::from_ranked(&[true, false, true], 2));
    assert_eq!(exact, Some(Ratio::new(5, 6)));
    assert_eq!(PrCurve::<f64>::from_ranked(&[], 3).average_precision(), Some(0.0));
    assert_eq!(PrCurve::<f64>::from_ranked(&[false, false], 0).average_precision(), None);
    // Ground truths never reached cap the recall.
    assert_eq!(average_precision(&PrCurve::<Ratio<i64>>::from_ranked(&[true, true], 4)), Some(Ratio::new(1, 2)));
}

#[test]
fn ap_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.gen_range(0..=20);
        let hits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let tps = hits.iter().filter(|&&h| h).count();
        let num_gt = tps + rng.gen_range(0..4).max(usize::from(tps == 0));
        let ap = PrCurve::<f64>::from_ranked(&hits, num_gt).average_precision().unwrap();
        assert!((ap - brute_ap(&hits, num_gt)).abs() < 1e-9, "{hits:?} / {num_gt}");
        let exact = PrCurve::<Ratio<i64>>::from_ranked(&hits, num_gt).average_precision().unwrap();
        assert!((*exact.numer() as f64 / *exact.denom() as f64 - ap).abs() < 1e-12);
    }
}

#[test]
fn interpolated_precision_is_nonincreasing() {
    let c = PrCurve::<f64>::from_ranked(&[false, true, true, false, true, false, false, true], 5);
    assert!(c.recall.windows(2).all(|w| w[0] <= w[1]));
    assert!(c.interpolated().windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn mean_ap_examples() {
    assert_eq!(mean_ap(&[Some(1.0), Some(0.0)]), Some(0.5));
    assert_eq!(mean_ap(&[Some(0.3), Some(0.3)]), Some(0.3));
    assert_eq!(mean_ap(&[Some(0.4), None]), Some(0.4));
    assert_eq!(mean_ap(&[None, None]), None);
}

#[test]
fn report_values_are_fractions_and_map_is_the_class_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images: Vec<ImageEval> = (0..12)
        .map(|_| {
            let (detections, ground_truth) = random_scene(&mut rng, 10);
            ImageEval { detections, ground_truth }
        })
        .collect();
    let r = evaluate(&images, &EvalOptions::default()).unwrap();
    assert_eq!(r.images, 12);
    let aps: Vec<f64> = r.classes.iter().map(|c| c.ap50.unwrap()).collect();
    assert!((r.map50 - (aps[0] + aps[1]) / 2.0).abs() < 1e-15);
    for v in [r.precision, r.recall, r.f1, r.map50].into_iter().chain(aps) {
        assert!((0.0..=1.0).contains(&v));
    }
    let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
    assert_eq!(r.csv_row("CRAB-YOLO", "HR").split(',').count(), EvalReport::CSV_HEADER.split(',').count());
    assert!(evaluate(&images, &EvalOptions { iou_threshold: 0.0, ..EvalOptions::default() }).is_err());
}

#[test]
fn perfect_detections_score_one() {
    let gts = vec![bx(0, 0.3, 0.3, 0.1, 1.0), bx(1, 0.7, 0.7, 0.1, 1.0)];
    let dets = gts.iter().map(|g| BoundingBox { confidence: 0.9, ..*g }).collect();
    let r = evaluate(&[ImageEval { detections: dets, ground_truth: gts }], &EvalOptions::default()).unwrap();
    assert_eq!((r.precision, r.recall, r.f1, r.map50), (1.0, 1.0, 1.0, 1.0));
    assert_eq!((r.confusion.tp1(), r.confusion.tp2(), r.confusion.total()), (1, 1, 2));
}

fn scene_strategy() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ap_depends_only_on_confidence_order(seed in scene_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_scene(&mut rng, 10);
        let squashed: Vec<BoundingBox> = dets.iter().map(|d| BoundingBox { confidence: d.confidence.powi(3) * 0.5 + 0.1, ..*d }).collect();
        let a = evaluate(&[ImageEval { detections: dets, ground_truth: gts.clone() }], &EvalOptions::default()).unwrap();
        let b = evaluate(&[ImageEval { detections: squashed, ground_truth: gts }], &EvalOptions::default()).unwrap();
        for c in 0..2 {
            prop_assert_eq!(a.classes[c].ap50, b.classes[c].ap50);
        }
    }

    #[test]
    fn trailing_false_positive_never_raises_ap(hits in prop::collection::vec(any::<bool>(), 0..20), extra in 0usize..3) {
        let num_gt = hits.iter().filter(|&&h| h).count() + extra + 1;
        let before = PrCurve::<f64>::from_ranked(&hits, num_gt).average_precision().unwrap();
        let mut more = hits.clone();
        more.push(false);
        let after = PrCurve::<f64>::from_ranked(&more, num_gt).average_precision().unwrap();
        prop_assert!(after <= before);
        prop_assert!((0.0..=1.0).contains(&before));
    }

    #[test]
    fn extra_true_positive_never_lowers_recall(seed in scene_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut dets, gts) = random_scene(&mut rng, 8);
        prop_assume!(!gts.is_empty());
        let before = match_detections(&dets, &gts, 0.5);
        let g = gts[rng.gen_range(0..gts.len())];
        dets.push(BoundingBox { confidence: 0.95, ..g });
        let after = match_detections(&dets, &gts, 0.5);
        for c in 0..2 {
            let r = |m: &crabwatch::eval::MatchResult| precision_recall_f1(m.counts(c, 0.0)).recall;
            prop_assert!(r(&after) >= r(&before));
        }
    }
}
