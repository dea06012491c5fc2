//! The `report` pipeline: frame → tiles → detector and SRR training →
//! benchmark tables → per-tile detection → merge → density map.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::SurveyConfig;
use super::density::{build_density_map, ground_sample_distance, heatmap_image};
use super::harness::{iq_table, run_srr_benchmark, srr_detection_table, DetEval};
use super::manifest::{RunDir, RunManifest};
use super::merge::{detections_to_csv, merge_tile_detections, TileDetections};
use super::table::Table;
use crate::detector::{train_detector, DecodeConfig, DetSample, Detector};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ImageEval};
use crate::imaging::{degrade, load_image, resample_bicubic, ImageBuffer, ResampleSpec};
use crate::srr::{train_sr, SrModel, SrPair};
use crate::synthetic::{synth_scene, SceneSpec};
use crate::tiling::{
    expand_dataset, extract_tile, format_labels, plan_tiles, read_labels, tile_labels, BoundingBox, PixelBox, Sample,
};
use crate::Scalar;

/// Optional survey frame with YOLO-style labels normalized to the frame.
/// Without a frame the pipeline renders a synthetic one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportInputs {
    pub frame: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub tiles: usize,
    /// Detections summed over tiles before merging.
    pub tile_detections: usize,
    pub merged: Vec<PixelBox>,
    pub density_total: u64,
    pub gsd_m: f64,
    pub manifest: RunManifest,
}

const FRAME_ID: &str = "frame";
/// Seed offset of the extra synthetic training scenes.
const SCENE_SEED_OFFSET: u64 = 1000;

fn fit<T: Scalar>(img: &ImageBuffer<T>, side: usize) -> Result<ImageBuffer<T>> {
    if img.width() == side && img.height() == side {
        Ok(img.clone())
    } else {
        resample_bicubic(img, &ResampleSpec::new(side, side))
    }
}

fn load_frame<T: Scalar>(cfg: &SurveyConfig, inputs: &ReportInputs, rd: &mut RunDir) -> Result<(ImageBuffer<T>, Vec<PixelBox>)> {
    match &inputs.frame {
        Some(path) => {
            let frame = load_image::<T>(path)?;
            rd.add_input(path)?;
            let (w, h) = (frame.width() as f64, frame.height() as f64);
            let labels = match &inputs.labels {
                Some(lp) => {
                    rd.add_input(lp)?;
                    read_labels(lp)?.iter().map(|b| PixelBox::from_normalized(b, w, h)).collect()
                }
                None => Vec::new(),
            };
            Ok((frame, labels))
        }
        None => {
            let s = &cfg.synthetic;
            synth_scene(&SceneSpec::new(s.frame_width, s.frame_height, s.frame_crabs), cfg.seed)
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn write_table(rd: &mut RunDir, stem: &str, table: &Table) -> Result<()> {
    rd.write_text(&format!("{stem}.csv"), &table.to_csv()?)?;
    rd.write_text(&format!("{stem}.txt"), &table.to_text())?;
    Ok(())
}

/// Runs the full pipeline into `out_dir` and returns what it produced.
///
/// Every CSV is a deterministic function of the config, the inputs and the
/// seed; the manifest additionally records wall-clock stage timings.
pub fn run_report<T: Scalar>(cfg: &SurveyConfig, out_dir: impl AsRef<Path>, inputs: &ReportInputs) -> Result<ReportSummary> {
    cfg.validate()?;
    let side = cfg.detector.input_side;
    let m = cfg.srr.magnification;
    if side % m != 0 {
        return Err(Error::InvalidConfig(format!("detector input side {side} is not divisible by magnification {m}")));
    }
    let mut rd = RunDir::create(out_dir, "report", cfg.seed, cfg)?;
    rd.write_text("config.toml", &cfg.to_toml()?)?;

    rd.stage("frame");
    let (frame, frame_boxes) = load_frame::<T>(cfg, inputs, &mut rd)?;
    let (fw, fh) = (frame.width(), frame.height());
    if inputs.frame.is_none() {
        rd.write_image("frame.png", &frame)?;
        let labels: Vec<BoundingBox> = frame_boxes.iter().map(|b| b.normalized(fw as f64, fh as f64)).collect();
        rd.write_text("frame_labels.txt", &format_labels(&labels))?;
    }

    rd.stage("tile");
    let grid = cfg.tiling.grid()?;
    let records = plan_tiles(FRAME_ID, fw, fh, &grid)?;
    if records.is_empty() {
        return Err(Error::ImageTooSmall { width: fw, height: fh, required: cfg.tiling.window });
    }
    let tiles: Vec<(ImageBuffer<T>, Vec<BoundingBox>)> = records
        .par_iter()
        .map(|r| Ok((fit(&extract_tile(&frame, r)?, side)?, tile_labels(&frame_boxes, r))))
        .collect::<Result<_>>()?;
    let mut tiles_csv = String::from("tile_id,source_id,x0,y0,side,labels\n");
    for (i, (r, (_, labels))) in records.iter().zip(&tiles).enumerate() {
        let _ = writeln!(tiles_csv, "tile_{i:04},{},{},{},{},{}", r.source_id, r.x0, r.y0, r.side, labels.len());
    }
    rd.write_text("tiles.csv", &tiles_csv)?;

    rd.stage("train_detector");
    let mut samples: Vec<Sample<T>> = tiles
        .iter()
        .enumerate()
        .map(|(i, (image, boxes))| Sample { id: format!("tile_{i:04}"), image: image.clone(), boxes: boxes.clone() })
        .collect();
    for i in 0..cfg.synthetic.train_scenes {
        let seed = cfg.seed + SCENE_SEED_OFFSET + i as u64;
        let (image, boxes) = synth_scene::<T>(&SceneSpec::new(side, side, cfg.synthetic.crabs_per_scene), seed)?;
        let boxes = boxes.iter().map(|b| b.normalized(side as f64, side as f64)).collect();
        samples.push(Sample { id: format!("scene_{i:04}"), image, boxes });
    }
    if cfg.augment.in_report {
        samples = expand_dataset(&samples, &cfg.augment.ops()?)?.into_iter().map(|(s, _)| s).collect();
    }
    let train: Vec<DetSample<T>> = samples
        .par_iter()
        .map(|s| Ok(DetSample { image: fit(&s.image, side)?, labels: s.boxes.clone() }))
        .collect::<Result<_>>()?;
    let mut train_cfg = cfg.detector.train.clone();
    train_cfg.seed = cfg.seed;
    let mut detector = Detector::<T>::new(cfg.detector.model(cfg.detector.variant, cfg.seed))?;
    let det_ckpt = train_detector(&mut detector, &train, &train_cfg)?;
    rd.write_text("loss_detector.csv", &det_ckpt.loss_csv("loss"))?;
    det_ckpt.save(rd.path("models/detector.ckpt"))?;
    rd.register("models/detector.ckpt")?;

    rd.stage("train_srr");
    let pairs: Vec<SrPair<T>> = train
        .par_iter()
        .map(|s| Ok(SrPair { lr: degrade(&s.image, m)?, hr: s.image.clone() }))
        .collect::<Result<_>>()?;
    let mut sr_cfg = cfg.srr.train.clone();
    sr_cfg.seed = cfg.seed;
    let mut models = Vec::with_capacity(cfg.srr.architectures.len());
    for &arch in &cfg.srr.architectures {
        let mut model = SrModel::<T>::new(cfg.srr.model(arch, m, cfg.seed))?;
        let ckpt = train_sr(&mut model, &pairs, &sr_cfg)?;
        let stem = format!("srr_{}_x{m}", arch.name().to_ascii_lowercase());
        rd.write_text(&format!("loss_{stem}.csv"), &ckpt.loss_csv("l1"))?;
        ckpt.save(rd.path(&format!("models/{stem}.ckpt")))?;
        rd.register(&format!("models/{stem}.ckpt"))?;
        models.push((arch.name().to_string(), model));
    }

    rd.stage("benchmark");
    let model_refs: Vec<(String, &SrModel<T>)> = models.iter().map(|(n, mdl)| (n.clone(), mdl)).collect();
    let det_eval = DetEval { detector: &detector, decode: DecodeConfig { conf_threshold: DecodeConfig::for_evaluation().conf_threshold, ..cfg.detector.decode }, options: cfg.eval };
    let bench = run_srr_benchmark(&train, m, &model_refs, &cfg.srr.iq, Some(&det_eval))?;
    rd.write_text("iq_per_image.csv", &bench.iq.to_csv())?;
    write_table(&mut rd, "table_iq", &iq_table(&bench.iq, m))?;
    write_table(&mut rd, "table_srr_detection", &srr_detection_table(&bench.detection))?;

    rd.stage("detect");
    let tile_images: Vec<ImageBuffer<T>> = tiles.iter().map(|(img, _)| img.clone()).collect();
    let per_tile = detector.predict(&tile_images, &cfg.detector.decode)?;
    let tile_detections: usize = per_tile.iter().map(Vec::len).sum();
    let tile_dets: Vec<TileDetections> = records
        .iter()
        .zip(per_tile)
        .map(|(r, detections)| TileDetections { tile: r.clone(), detections })
        .collect();

    rd.stage("merge");
    // Padded edge tiles can see mirror images of crabs beyond the frame.
    let mut merged = merge_tile_detections(&tile_dets, cfg.merge.iou)?;
    merged.retain(|b| (0.0..=fw as f64).contains(&b.cx) && (0.0..=fh as f64).contains(&b.cy));
    rd.write_text("detections.csv", &detections_to_csv(&merged))?;
    let frame_eval = evaluate(
        &[ImageEval {
            detections: merged.iter().map(|b| b.normalized(fw as f64, fh as f64)).collect(),
            ground_truth: frame_boxes.iter().map(|b| b.normalized(fw as f64, fh as f64)).collect(),
        }],
        &cfg.eval,
    )?;

    rd.stage("density");
    let gsd = ground_sample_distance(cfg.density.altitude_m, cfg.density.fov_deg, cfg.density.sensor_width_px)?;
    let density = build_density_map(&merged, cfg.density.cell_size, fw, fh)?;
    rd.write_image("density.png", &heatmap_image(&density, cfg.density.px_per_cell)?)?;
    rd.write_text("density.csv", &density.to_csv(Some(gsd))?)?;

    let mut summary = String::from("key,value\n");
    for (k, v) in [
        ("frame_width", fw.to_string()),
        ("frame_height", fh.to_string()),
        ("ground_truth", frame_boxes.len().to_string()),
        ("tiles", records.len().to_string()),
        ("tile_detections", tile_detections.to_string()),
        ("merged_detections", merged.len().to_string()),
        ("density_total", density.total().to_string()),
        ("outside_grid", density.outside.to_string()),
        ("gsd_m_per_px", format!("{gsd:.8}")),
        ("frame_precision", num(frame_eval.precision)),
        ("frame_recall", num(frame_eval.recall)),
        ("frame_map50", num(frame_eval.map50)),
    ] {
        let _ = writeln!(summary, "{k},{v}");
    }
    rd.write_text("summary.csv", &summary)?;

    let manifest = rd.finish()?;
    Ok(ReportSummary {
        tiles: records.len(),
        tile_detections,
        density_total: density.total(),
        merged,
        gsd_m: gsd,
        manifest,
    })
}
