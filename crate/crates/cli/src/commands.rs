use std::path::{Path, PathBuf};

use crabwatch::checkpoint::Checkpoint;
use crabwatch::detector::{train_detector, DecodeConfig, Detector, DetectorVariant};
use crabwatch::eval::EvalReport;
use crabwatch::imaging::{crop_to_multiple, degrade, load_image};
use crabwatch::srr::{train_sr, SrArchitecture, SrModel, SrPair};
use crabwatch::survey::{
    ablation_table, build_density_map, detections_to_csv, ground_sample_distance, heatmap_image, iq_table,
    merge_tile_detections, read_detections_csv, run_ablation, run_magnification_sweep, run_report, run_srr_benchmark,
    srr_detection_table, sweep_table, DetEval, ReportInputs, RunDir, SurveyConfig, Table, TileDetections,
};
use crabwatch::tiling::{
    expand_dataset, extract_tile, format_labels, format_predictions, plan_tiles, read_labels, read_manifest,
    read_predictions, tile_labels, write_manifest, ManifestRow, PixelBox, Sample,
};
use crabwatch::{Error, Result};

use crate::data::{self, F, TEST_SEED_OFFSET};
use crate::{Cli, Command, DataArgs};

/// Seed offset of generated training scenes, shared with `report`.
const SCENE_SEED_OFFSET: u64 = 1000;

fn samples(args: &DataArgs, cfg: &SurveyConfig, seed_offset: u64) -> Result<Vec<Sample<F>>> {
    match (&args.data, args.synthetic) {
        (Some(dir), _) => data::load_dir(dir),
        (None, Some(n)) => data::synthetic(
            n,
            cfg.detector.input_side,
            cfg.synthetic.crabs_per_scene,
            cfg.seed + seed_offset,
        ),
        (None, None) => Err(Error::InvalidConfig("pass --data <dir> or --synthetic <n>".into())),
    }
}

fn write_table(rd: &mut RunDir, stem: &str, table: &Table) -> Result<()> {
    rd.write_text(&format!("{stem}.csv"), &table.to_csv()?)?;
    rd.write_text(&format!("{stem}.txt"), &table.to_text())?;
    println!("{}", table.to_text());
    Ok(())
}

fn write_sample(rd: &mut RunDir, dir: &str, s: &Sample<F>) -> Result<()> {
    rd.write_image(&format!("{dir}/{}.png", s.id), &s.image)?;
    rd.write_text(&format!("{dir}/{}.txt", s.id), &format_labels(&s.boxes))?;
    Ok(())
}

fn load_checkpoint(path: &Path, rd: &mut RunDir) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    rd.add_input(path)?;
    Ok(ckpt)
}

fn save_checkpoint(rd: &mut RunDir, rel: &str, ckpt: &Checkpoint) -> Result<PathBuf> {
    ckpt.save(rd.path(rel))?;
    rd.register(rel)
}

fn add_data_inputs(rd: &mut RunDir, args: &DataArgs) -> Result<()> {
    if let Some(dir) = &args.data {
        for p in data::image_files(dir)? {
            rd.add_input(&p)?;
        }
    }
    Ok(())
}

fn eval_csv(rows: &[(String, EvalReport)]) -> String {
    let mut s = format!("{}\n", EvalReport::CSV_HEADER);
    for (name, r) in rows {
        s.push_str(&r.csv_row(name, "test"));
        s.push('\n');
    }
    s
}

pub fn run(cli: &Cli, name: &str, cfg: &SurveyConfig) -> Result<()> {
    if let Command::Report { frame, labels } = &cli.command {
        let inputs = ReportInputs { frame: frame.clone(), labels: labels.clone() };
        let out = run_report::<F>(cfg, &cli.out, &inputs)?;
        println!(
            "report: {} tiles, {} tile detections, {} merged, GSD {:.5} m/px -> {}",
            out.tiles,
            out.tile_detections,
            out.merged.len(),
            out.gsd_m,
            cli.out.display()
        );
        return Ok(());
    }
    let mut rd = RunDir::create(&cli.out, name, cfg.seed, cfg)?;
    match &cli.command {
        Command::Tile { frame, labels } => tile(&mut rd, cfg, frame, labels.as_deref())?,
        Command::Degrade { data, m } => {
            add_data_inputs(&mut rd, data)?;
            let m = m.unwrap_or(cfg.srr.magnification);
            for s in samples(data, cfg, SCENE_SEED_OFFSET)? {
                let lr = Sample { image: degrade(&s.image, m)?, ..s };
                write_sample(&mut rd, "lr", &lr)?;
            }
        }
        Command::Augment { data } => {
            add_data_inputs(&mut rd, data)?;
            let expanded = expand_dataset(&samples(data, cfg, SCENE_SEED_OFFSET)?, &cfg.augment.ops()?)?;
            let mut prov = String::from("id,source_id,op\n");
            for (s, p) in &expanded {
                let id = s.id.replace(['#', '@'], "_");
                write_sample(&mut rd, "augmented", &Sample { id: id.clone(), ..s.clone() })?;
                prov.push_str(&format!("{id},{},{}\n", p.source_id, p.op));
            }
            rd.write_text("provenance.csv", &prov)?;
            println!("augment: {} samples", expanded.len());
        }
        Command::TrainSr { data, arch, m } => {
            add_data_inputs(&mut rd, data)?;
            let arch: SrArchitecture = arch.parse()?;
            let m = m.unwrap_or(cfg.srr.magnification);
            let pairs = samples(data, cfg, SCENE_SEED_OFFSET)?
                .iter()
                .map(|s| {
                    let hr = crop_to_multiple(&s.image, m)?;
                    Ok(SrPair { lr: degrade(&hr, m)?, hr })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut model = SrModel::<F>::new(cfg.srr.model(arch, m, cfg.seed))?;
            let mut train = cfg.srr.train.clone();
            train.seed = cfg.seed;
            rd.stage("train");
            let ckpt = train_sr(&mut model, &pairs, &train)?;
            let stem = format!("sr_{}_x{m}", arch.name().to_ascii_lowercase());
            rd.write_text(&format!("loss_{stem}.csv"), &ckpt.loss_csv("l1"))?;
            let path = save_checkpoint(&mut rd, &format!("{stem}.ckpt"), &ckpt)?;
            println!("train-sr: {} x{m}, final L1 {:.5} -> {}", arch, ckpt.loss_history.last().unwrap_or(&f64::NAN), path.display());
        }
        Command::EvalSr { data, sr, m, detector } => {
            add_data_inputs(&mut rd, data)?;
            let mut models = Vec::with_capacity(sr.len());
            for p in sr {
                let model = SrModel::<F>::from_checkpoint(&load_checkpoint(p, &mut rd)?)?;
                models.push((model.config().architecture.name().to_string(), model));
            }
            let m = m.or_else(|| models.first().map(|(_, mdl)| mdl.magnification())).unwrap_or(cfg.srr.magnification);
            let test = data::as_det_samples(samples(data, cfg, TEST_SEED_OFFSET)?);
            let test: Vec<_> = test
                .into_iter()
                .map(|s| Ok(crabwatch::detector::DetSample { image: crop_to_multiple(&s.image, m)?, labels: s.labels }))
                .collect::<Result<_>>()?;
            let det = match detector {
                Some(p) => Some(Detector::<F>::from_checkpoint(&load_checkpoint(p, &mut rd)?)?),
                None => None,
            };
            let eval = det.as_ref().map(|d| DetEval {
                detector: d,
                decode: DecodeConfig { conf_threshold: DecodeConfig::for_evaluation().conf_threshold, ..cfg.detector.decode },
                options: cfg.eval,
            });
            let refs: Vec<(String, &SrModel<F>)> = models.iter().map(|(n, mdl)| (n.clone(), mdl)).collect();
            let bench = run_srr_benchmark(&test, m, &refs, &cfg.srr.iq, eval.as_ref())?;
            rd.write_text("iq_per_image.csv", &bench.iq.to_csv())?;
            write_table(&mut rd, "table_iq", &iq_table(&bench.iq, m))?;
            if !bench.detection.is_empty() {
                write_table(&mut rd, "table_srr_detection", &srr_detection_table(&bench.detection))?;
            }
        }
        Command::TrainDet { data, variant } => {
            add_data_inputs(&mut rd, data)?;
            let variant = match variant {
                Some(v) => v.parse::<DetectorVariant>()?,
                None => cfg.detector.variant,
            };
            let train = data::det_samples(&samples(data, cfg, SCENE_SEED_OFFSET)?, cfg.detector.input_side)?;
            let mut model = Detector::<F>::new(cfg.detector.model(variant, cfg.seed))?;
            let mut tcfg = cfg.detector.train.clone();
            tcfg.seed = cfg.seed;
            rd.stage("train");
            let ckpt = train_detector(&mut model, &train, &tcfg)?;
            rd.write_text("loss_detector.csv", &ckpt.loss_csv("loss"))?;
            let path = save_checkpoint(&mut rd, "detector.ckpt", &ckpt)?;
            println!("train-det: {variant}, {} params -> {}", model.param_count(), path.display());
        }
        Command::EvalDet { data, detector } => {
            add_data_inputs(&mut rd, data)?;
            let model = Detector::<F>::from_checkpoint(&load_checkpoint(detector, &mut rd)?)?;
            let test = samples(data, cfg, TEST_SEED_OFFSET)?;
            let det = data::det_samples(&test, model.config().input_side)?;
            let images: Vec<_> = det.iter().map(|s| s.image.clone()).collect();
            let decode = DecodeConfig { conf_threshold: DecodeConfig::for_evaluation().conf_threshold, ..cfg.detector.decode };
            for (s, preds) in test.iter().zip(model.predict(&images, &cfg.detector.decode)?) {
                rd.write_text(&format!("predictions/{}.txt", s.id), &format_predictions(&preds))?;
            }
            let report = model.evaluate(&det, &decode, &cfg.eval)?;
            rd.write_text("eval.json", &report.to_json()?)?;
            let c = model.config();
            let variant = DetectorVariant::ALL
                .into_iter()
                .find(|v| v.flags() == (c.four_heads, c.gsconv, c.eca))
                .map_or_else(|| "custom".to_string(), |v| v.name().to_string());
            rd.write_text("eval.csv", &eval_csv(&[(variant, report.clone())]))?;
            println!(
                "eval-det: P {:.4} R {:.4} F1 {:.4} mAP@50 {:.4}",
                report.precision, report.recall, report.f1, report.map50
            );
        }
        Command::Ablate { data, test } => {
            add_data_inputs(&mut rd, data)?;
            let side = cfg.detector.input_side;
            let train = data::det_samples(&samples(data, cfg, SCENE_SEED_OFFSET)?, side)?;
            let test = match test {
                Some(dir) => data::det_samples(&data::load_dir(dir)?, side)?,
                None => train.clone(),
            };
            let mut tcfg = cfg.detector.train.clone();
            tcfg.seed = cfg.seed;
            let decode = DecodeConfig { conf_threshold: DecodeConfig::for_evaluation().conf_threshold, ..cfg.detector.decode };
            rd.stage("ablate");
            let rows = run_ablation(&cfg.detector.model(cfg.detector.variant, cfg.seed), &train, &test, &tcfg, &decode, &cfg.eval)?;
            rd.write_text("ablation.json", &serde_json_pretty(&rows)?)?;
            write_table(&mut rd, "table_ablation", &ablation_table(&rows))?;
        }
        Command::Sweep { data, detector, sr, lr_factor } => {
            add_data_inputs(&mut rd, data)?;
            let det = Detector::<F>::from_checkpoint(&load_checkpoint(detector, &mut rd)?)?;
            let mut models = Vec::new();
            for p in sr {
                models.push(SrModel::<F>::from_checkpoint(&load_checkpoint(p, &mut rd)?)?);
            }
            let mut ordered = Vec::new();
            for &m in &cfg.srr.sweep {
                let model = models
                    .iter()
                    .find(|mdl| mdl.magnification() == m)
                    .ok_or_else(|| Error::MissingFile(PathBuf::from(format!("x{m} SR checkpoint"))))?;
                ordered.push(model);
            }
            let f = lr_factor.unwrap_or(cfg.srr.magnification);
            let lr = samples(data, cfg, TEST_SEED_OFFSET)?
                .into_iter()
                .map(|s| Ok(crabwatch::detector::DetSample { image: degrade(&s.image, f)?, labels: s.boxes }))
                .collect::<Result<Vec<_>>>()?;
            let eval = DetEval {
                detector: &det,
                decode: DecodeConfig { conf_threshold: DecodeConfig::for_evaluation().conf_threshold, ..cfg.detector.decode },
                options: cfg.eval,
            };
            let rows = run_magnification_sweep(&lr, &ordered, &eval)?;
            rd.write_text("sweep.json", &serde_json_pretty(&rows)?)?;
            write_table(&mut rd, "table_sweep", &sweep_table(&rows))?;
        }
        Command::Merge { tiles, predictions } => {
            rd.add_input(tiles)?;
            let rows = read_manifest(tiles)?;
            let mut per_tile = Vec::with_capacity(rows.len());
            for r in &rows {
                let path = predictions.join(format!("{}.txt", data::stem(Path::new(&r.tile_path))));
                rd.add_input(&path)?;
                per_tile.push(TileDetections { tile: r.record(), detections: read_predictions(&path)? });
            }
            let total: usize = per_tile.iter().map(|t| t.detections.len()).sum();
            let merged = merge_tile_detections(&per_tile, cfg.merge.iou)?;
            rd.write_text("detections.csv", &detections_to_csv(&merged))?;
            println!("merge: {total} tile detections -> {} frame detections", merged.len());
        }
        Command::Density { detections, width, height } => {
            rd.add_input(detections)?;
            let dets: Vec<PixelBox> = read_detections_csv(detections)?;
            let d = &cfg.density;
            let gsd = ground_sample_distance(d.altitude_m, d.fov_deg, d.sensor_width_px)?;
            let grid = build_density_map(&dets, d.cell_size, *width, *height)?;
            rd.write_image("density.png", &heatmap_image(&grid, d.px_per_cell)?)?;
            rd.write_text("density.csv", &grid.to_csv(Some(gsd))?)?;
            println!(
                "density: {} detections in a {}x{} grid ({} outside), max {} per cell",
                grid.total(),
                grid.rows,
                grid.cols,
                grid.outside,
                grid.max_count()
            );
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
    rd.finish()?;
    Ok(())
}

fn serde_json_pretty<S: serde::Serialize>(v: &S) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn tile(rd: &mut RunDir, cfg: &SurveyConfig, frame_path: &Path, labels: Option<&Path>) -> Result<()> {
    let frame = load_image::<F>(frame_path)?;
    rd.add_input(frame_path)?;
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    let boxes: Vec<PixelBox> = match labels {
        Some(p) => {
            rd.add_input(p)?;
            read_labels(p)?.iter().map(|b| PixelBox::from_normalized(b, w, h)).collect()
        }
        None => Vec::new(),
    };
    let source = data::stem(frame_path);
    let records = plan_tiles(&source, frame.width(), frame.height(), &cfg.tiling.grid()?)?;
    let mut rows = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let rel = format!("tiles/{source}_{i:04}.png");
        rd.write_image(&rel, &extract_tile(&frame, r)?)?;
        if labels.is_some() {
            rd.write_text(&format!("tiles/{source}_{i:04}.txt"), &format_labels(&tile_labels(&boxes, r)))?;
        }
        rows.push(ManifestRow { source_id: r.source_id.clone(), x0: r.x0, y0: r.y0, side: r.side, tile_path: rel });
    }
    write_manifest(rd.path("tiles.csv"), &rows)?;
    rd.register("tiles.csv")?;
    println!("tile: {} tiles of {}px from {}x{}", rows.len(), cfg.tiling.window, frame.width(), frame.height());
    Ok(())
}
