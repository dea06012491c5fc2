mod common;

use crabwatch::detector::{DecodeConfig, DetSample, Detector, DetectorConfig, DetectorVariant};
use crabwatch::eval::EvalOptions;
use crabwatch::srr::{SrArchitecture, SrModel, SrModelConfig};
use crabwatch::survey::*;
use crabwatch::tiling::{BoundingBox, PixelBox, TileRecord, NUM_CLASSES};
use crabwatch::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tile(id: &str, x0: usize, y0: usize, side: usize) -> TileRecord {
    TileRecord { source_id: id.into(), x0, y0, side }
}

fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)
}

/// Same 20 px object seen by two overlapping 100 px tiles, one pixel apart.
fn duplicate_pair() -> Vec<TileDetections> {
    vec![
        TileDetections {
            tile: tile("f", 0, 0, 100),
            detections: vec![BoundingBox::new(1, 0.75, 0.5, 0.2, 0.2, 0.9).unwrap()],
        },
        TileDetections {
            tile: tile("f", 50, 0, 100),
            detections: vec![BoundingBox::new(1, 0.26, 0.5, 0.2, 0.2, 0.8).unwrap()],
        },
    ]
}

#[test]
fn cross_tile_duplicate_collapses_to_most_confident() {
    let tiles = duplicate_pair();
    let global: Vec<PixelBox> = tiles
        .iter()
        .flat_map(|t| t.detections.iter().map(|d| crabwatch::tiling::remap_box_to_global(&t.tile, d)))
        .collect();
    let overlap = iou(global[0].xyxy(), global[1].xyxy());
    assert!((overlap - 380.0 / 420.0).abs() < 1e-9, "fixture IoU {overlap}");
    assert!(overlap >= 0.9);

    let merged = merge_tile_detections(&tiles, DEFAULT_MERGE_IOU).unwrap();
    assert_eq!(merged.len(), 1);
    assert_eq!(merged[0], global[0]);
    assert_eq!(merged[0].confidence, 0.9);
}

#[test]
fn merge_keeps_isolated_detection_and_handles_empty() {
    let mut tiles = duplicate_pair();
    tiles[1].detections.push(BoundingBox::new(0, 0.9, 0.9, 0.05, 0.05, 0.3).unwrap());
    let merged = merge_tile_detections(&tiles, 0.5).unwrap();
    assert_eq!(merged.len(), 2);
    let lone = PixelBox { class_id: 0, cx: 140.0, cy: 90.0, w: 5.0, h: 5.0, confidence: 0.3 };
    let got = merged.iter().find(|b| b.class_id == 0).unwrap();
    assert!((got.cx - lone.cx).abs() < 1e-9 && (got.cy - lone.cy).abs() < 1e-9);
    assert!((got.w - lone.w).abs() < 1e-9 && got.confidence == lone.confidence);

    let empty = vec![TileDetections { tile: tile("f", 0, 0, 64), detections: vec![] }];
    assert!(merge_tile_detections(&empty, 0.5).unwrap().is_empty());
    assert!(merge_tile_detections(&[], 0.5).unwrap().is_empty());
}

#[test]
fn merge_rejects_mixed_frames_and_bad_iou() {
    let mut tiles = duplicate_pair();
    tiles[1].tile.source_id = "other".into();
    assert!(matches!(merge_tile_detections(&tiles, 0.5), Err(Error::MixedFrames(_, _))));
    assert!(matches!(merge_tile_detections(&duplicate_pair(), 0.0), Err(Error::InvalidConfig(_))));
}

fn arb_tiles() -> impl Strategy<Value = Vec<TileDetections>> {
    let det = (0..NUM_CLASSES, 0.05..0.95f64, 0.05..0.95f64, 0.02..0.3f64, 0.02..0.3f64, 0.01..1.0f64)
        .prop_map(|(c, x, y, w, h, s)| BoundingBox { class_id: c, cx: x, cy: y, w, h, confidence: s });
    prop::collection::vec((0usize..4, 0usize..4, prop::collection::vec(det, 0..6)), 0..6).prop_map(|ts| {
        ts.into_iter()
            .map(|(i, j, detections)| TileDetections { tile: tile("f", i * 32, j * 32, 64), detections })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_never_grows_or_relabels(tiles in arb_tiles(), thr in 0.1..0.95f64) {
        let merged = merge_tile_detections(&tiles, thr).unwrap();
        let global: Vec<PixelBox> = tiles
            .iter()
            .flat_map(|t| t.detections.iter().map(|d| crabwatch::tiling::remap_box_to_global(&t.tile, d)))
            .collect();
        prop_assert!(merged.len() <= global.len());
        for m in &merged {
            prop_assert!(global.contains(m));
        }
        // No surviving same-class pair overlaps above the threshold.
        for (i, a) in merged.iter().enumerate() {
            for b in &merged[i + 1..] {
                prop_assert!(a.class_id != b.class_id || iou(a.xyxy(), b.xyxy()) <= thr);
            }
        }
    }

    #[test]
    fn density_grid_counts_every_detection(seed in any::<u64>(), cell in 8.0..200.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (640usize, 480usize);
        let dets: Vec<PixelBox> = (0..100)
            .map(|_| PixelBox {
                class_id: rng.gen_range(0..NUM_CLASSES),
                cx: rng.gen_range(0.0..=w as f64),
                cy: rng.gen_range(0.0..=h as f64),
                w: 4.0,
                h: 4.0,
                confidence: 1.0,
            })
            .collect();
        let grid = build_density_map(&dets, cell, w, h).unwrap();
        prop_assert_eq!(grid.total(), 100);
        prop_assert_eq!(grid.outside, 0);
        for c in 0..NUM_CLASSES {
            prop_assert_eq!(grid.class_total(c), dets.iter().filter(|d| d.class_id == c).count() as u64);
        }
        // Oracle: ceil-based index, which sends boundary centres down.
        let idx = |v: f64, n: usize| ((v / cell).ceil() as i64 - 1).clamp(0, n as i64 - 1) as usize;
        let mut expect = vec![0u64; grid.rows * grid.cols];
        for d in &dets {
            expect[idx(d.cy, grid.rows) * grid.cols + idx(d.cx, grid.cols)] += 1;
        }
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                prop_assert_eq!(grid.count(r, c), expect[r * grid.cols + c]);
            }
        }
    }
}

#[test]
fn five_detections_in_one_cell() {
    let dets: Vec<PixelBox> = (0..5)
        .map(|i| PixelBox { class_id: i % 2, cx: 10.0 + i as f64, cy: 12.0, w: 3.0, h: 3.0, confidence: 0.9 })
        .collect();
    let grid = build_density_map(&dets, 50.0, 200, 100).unwrap();
    assert_eq!((grid.rows, grid.cols), (2, 4));
    assert_eq!(grid.count(0, 0), 5);
    assert_eq!(grid.total(), 5);
    assert_eq!(grid.max_count(), 5);
}

#[test]
fn boundary_centres_go_to_lower_cell() {
    let at = |x: f64, y: f64| PixelBox { class_id: 0, cx: x, cy: y, w: 2.0, h: 2.0, confidence: 1.0 };
    let grid = build_density_map(&[at(50.0, 50.0), at(0.0, 0.0), at(100.0, 25.0), at(150.0, 100.0)], 50.0, 150, 100).unwrap();
    assert_eq!(grid.count(0, 0), 2);
    assert_eq!(grid.count(0, 1), 1);
    assert_eq!(grid.count(1, 2), 1);
    assert_eq!(grid.total(), 4);

    let outside = build_density_map(&[at(-1.0, 5.0)], 50.0, 150, 100).unwrap();
    assert_eq!((outside.total(), outside.outside), (0, 1));
    assert!(build_density_map(&[], 0.0, 10, 10).is_err());
}

#[test]
fn ground_sample_distance_examples() {
    let direct = 2.0 * 5.0 * (47.0f64).to_radians().tan() / 5472.0;
    let gsd = ground_sample_distance(5.0, 94.0, 5472.0).unwrap();
    assert!((gsd - direct).abs() < 1e-15);
    assert!((gsd - 0.00196).abs() < 5e-6, "{gsd}");
    assert!((ground_sample_distance(3.0, 90.0, 600.0).unwrap() - 0.01).abs() < 1e-15);
    let twice = ground_sample_distance(10.0, 94.0, 5472.0).unwrap();
    assert!((twice - 2.0 * gsd).abs() < 1e-15);
    for bad in [(0.0, 94.0, 10.0), (5.0, 180.0, 10.0), (5.0, 94.0, 0.0), (-1.0, 30.0, 5.0)] {
        assert!(ground_sample_distance(bad.0, bad.1, bad.2).is_err());
    }
}

#[test]
fn heatmap_blocks_and_sidecar() {
    let zero = build_density_map(&[], 10.0, 40, 30).unwrap();
    let img = heatmap_image(&zero, 4).unwrap();
    assert_eq!((img.width(), img.height()), (16, 12));
    let first: Vec<f64> = (0..3).map(|c| img.get(0, 0, c)).collect();
    for y in 0..12 {
        for x in 0..16 {
            for c in 0..3 {
                assert_eq!(img.get(x, y, c), first[c]);
            }
        }
    }

    let hot = PixelBox { class_id: 1, cx: 25.0, cy: 15.0, w: 2.0, h: 2.0, confidence: 1.0 };
    let grid = build_density_map(&[hot, hot], 10.0, 40, 30).unwrap();
    let img = heatmap_image(&grid, 4).unwrap();
    for y in 0..12 {
        for x in 0..16 {
            let in_block = (8..12).contains(&x) && (4..8).contains(&y);
            assert_eq!(img.get(x, y, 0) != first[0], in_block, "pixel ({x},{y})");
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let (png, csv) = render_heatmap(&grid, dir.path().join("heat.png"), 4, Some(0.002)).unwrap();
    assert!(png.exists());
    let mut reader = csv::Reader::from_path(csv).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (ti, ui, si) = (col("total"), col("underwater"), col("on_sand"));
    let (mut total, mut by_class) = (0u64, [0u64; 2]);
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let t: u64 = rec[ti].parse().unwrap();
        let (u, s): (u64, u64) = (rec[ui].parse().unwrap(), rec[si].parse().unwrap());
        assert_eq!(t, u + s);
        total += t;
        by_class[0] += u;
        by_class[1] += s;
        rows += 1;
    }
    assert_eq!(rows, grid.rows * grid.cols);
    assert_eq!(total, grid.total());
    assert_eq!(by_class, [grid.class_total(0), grid.class_total(1)]);
}

fn fake_rows() -> Vec<AblationRow> {
    DetectorVariant::ALL
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let (four_heads, gsconv, eca) = v.flags();
            AblationRow { variant: v, four_heads, gsconv, eca, params: 1000 + i, precision: 0.5, recall: 0.25, map50: 0.125 }
        })
        .collect()
}

#[test]
fn ablation_table_lattice() {
    let t = ablation_table(&fake_rows());
    assert_eq!(t.rows.len(), 4);
    let marks: Vec<Vec<&str>> = t.rows.iter().map(|r| r[1..4].iter().map(String::as_str).collect()).collect();
    assert_eq!(marks, vec![vec!["×", "×", "×"], vec!["√", "×", "×"], vec!["√", "√", "×"], vec!["√", "√", "√"]]);
    assert_eq!(t.rows[0][0], "YOLOv8s");
    assert_eq!(t.rows[3][0], "YOLOv8s-1-2-3 (Crab-YOLO)");
    assert_eq!(t.rows[1][5..], ["50.00", "25.00", "12.50"]);
    let csv = t.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(t.to_text().contains("93.1"));
}

#[test]
fn sweep_labels_and_peak() {
    assert_eq!(sweep_label(1), "x1-LR");
    assert_eq!(sweep_label(4), "x4-SR");
    let row = |m: usize, map50: f64| SweepRow {
        label: sweep_label(m),
        magnification: m,
        side: 160 * m,
        precision: 0.0,
        recall: 0.0,
        map50,
    };
    let rows = vec![row(1, 0.9), row(2, 0.5), row(3, 0.55), row(4, 0.7), row(5, 0.7)];
    assert_eq!(peak_magnification(&rows), Some(4));
    assert_eq!(peak_magnification(&rows[..1]), None);
    let t = sweep_table(&rows);
    assert_eq!(t.headers[1..], ["x1-LR", "x2-SR", "x3-SR", "x4-SR", "x5-SR"]);
    assert_eq!(t.rows[3][1..], ["160x160", "320x320", "480x480", "640x640", "800x800"]);
}

fn tiny_detector(side: usize) -> Detector<f32> {
    Detector::new(DetectorConfig::tiny(DetectorVariant::CrabYolo).with_input_side(side)).unwrap()
}

fn scenes(n: usize, side: usize) -> Vec<DetSample<f32>> {
    (0..n)
        .map(|i| {
            let (image, boxes) = crabwatch::synthetic::synth_scene::<f32>(
                &crabwatch::synthetic::SceneSpec::new(side, side, 3),
                40 + i as u64,
            )
            .unwrap();
            DetSample { image, labels: boxes.iter().map(|b| b.normalized(side as f64, side as f64)).collect() }
        })
        .collect()
}

#[test]
fn sweep_reconstructs_to_m_times_input() {
    let lr = scenes(2, 32);
    let det = tiny_detector(64);
    let eval = DetEval { detector: &det, decode: DecodeConfig::for_evaluation(), options: EvalOptions::default() };
    let models: Vec<SrModel<f32>> = (2..=5)
        .map(|m| SrModel::new(SrModelConfig::tiny(SrArchitecture::Srcnn, m).with_zero_tail(true)).unwrap())
        .collect();
    let refs: Vec<&SrModel<f32>> = models.iter().collect();
    let rows = run_magnification_sweep(&lr, &refs, &eval).unwrap();
    let got: Vec<(String, usize)> = rows.iter().map(|r| (r.label.clone(), r.side)).collect();
    assert_eq!(
        got,
        vec![("x1-LR".into(), 32), ("x2-SR".into(), 64), ("x3-SR".into(), 96), ("x4-SR".into(), 128), ("x5-SR".into(), 160)]
    );
    // The identity magnification is the raw LR evaluation.
    let raw = det.evaluate(&lr, &eval.decode, &eval.options).unwrap();
    assert_eq!((rows[0].precision, rows[0].recall, rows[0].map50), (raw.precision, raw.recall, raw.map50));
    assert!(matches!(run_magnification_sweep(&[], &refs, &eval), Err(Error::EmptyDataset)));
}

#[test]
fn srr_benchmark_always_has_bicubic() {
    let hr = scenes(2, 32);
    let m2 = SrModel::<f32>::new(SrModelConfig::tiny(SrArchitecture::Srcnn, 2).with_zero_tail(true)).unwrap();
    let m3 = SrModel::<f32>::new(SrModelConfig::tiny(SrArchitecture::Srcnn, 3)).unwrap();
    let iq = crabwatch::metrics::IqOptions::default();

    let bare = run_srr_benchmark(&hr, 2, &[], &iq, None).unwrap();
    assert_eq!(bare.iq.methods(), vec![BICUBIC.to_string()]);
    assert!(bare.detection.is_empty());

    let det = tiny_detector(32);
    let eval = DetEval { detector: &det, decode: DecodeConfig::for_evaluation(), options: EvalOptions::default() };
    let full = run_srr_benchmark(&hr, 2, &[("SRCNN".into(), &m2)], &iq, Some(&eval)).unwrap();
    let labels: Vec<&str> = full.detection.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, [HR, BICUBIC, "SRCNN"]);
    // A zero-tail model is exactly bicubic before training.
    let (b, s) = (full.iq.summary(BICUBIC).unwrap(), full.iq.summary("SRCNN").unwrap());
    assert!((b.psnr_db - s.psnr_db).abs() < 1e-3);
    let table = iq_table(&full.iq, 2);
    assert_eq!(table.headers, ["Metrics", BICUBIC, "SRCNN"]);
    assert_eq!(srr_detection_table(&full.detection).rows.len(), 3);

    assert!(matches!(run_srr_benchmark::<f32>(&[], 2, &[], &iq, None), Err(Error::EmptyDataset)));
    assert!(matches!(run_srr_benchmark(&hr, 2, &[("x3".into(), &m3)], &iq, None), Err(Error::InvalidConfig(_))));
}

#[test]
fn config_defaults_and_strictness() {
    let cfg = SurveyConfig::from_toml("").unwrap();
    assert_eq!(cfg, SurveyConfig::default());
    assert_eq!(cfg.merge.iou, 0.5);
    assert_eq!((cfg.density.altitude_m, cfg.density.fov_deg, cfg.density.sensor_width_px), (5.0, 94.0, 5472.0));
    assert_eq!(cfg.augment.ops().unwrap().len(), 30);
    let round = SurveyConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(round, cfg);
    let quick = SurveyConfig::quick();
    assert_eq!(SurveyConfig::from_toml(&quick.to_toml().unwrap()).unwrap(), quick);

    let partial = SurveyConfig::from_toml("seed = 9\n[eval]\niou_threshold = 0.6\n[detector]\nvariant = \"baseline\"\n").unwrap();
    assert_eq!(partial.seed, 9);
    assert_eq!(partial.eval.iou_threshold, 0.6);
    assert_eq!(partial.eval.score_threshold, 0.25);
    assert_eq!(partial.detector.variant, DetectorVariant::Baseline);

    for bad in ["bogus = 1", "[merge]\niou = 0.0", "[tiling]\nwindow = 0", "[srr]\nmagnification = 1", "[density]\nfov_deg = 200.0"] {
        assert!(matches!(SurveyConfig::from_toml(bad), Err(Error::InvalidConfig(_))), "{bad}");
    }
}

#[test]
fn report_manifest_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SurveyConfig::quick();
    let out = run_report::<f32>(&cfg, dir.path(), &ReportInputs::default()).unwrap();
    assert_eq!(out.density_total as usize, out.merged.len());
    assert!(out.merged.len() <= out.tile_detections);
    let mut listed = out.manifest.outputs.clone();
    listed.sort();
    let mut found = Vec::new();
    for entry in walk(dir.path()) {
        found.push(entry.strip_prefix(dir.path()).unwrap().to_string_lossy().replace('\\', "/"));
    }
    found.sort();
    assert_eq!(listed, found);
    for name in ["table_iq.csv", "table_srr_detection.csv", "detections.csv", "density.csv", "summary.csv"] {
        assert!(found.iter().any(|f| f == name), "{name}");
    }
    let manifest = RunManifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, out.manifest);
    assert_eq!(manifest.seed, cfg.seed);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
