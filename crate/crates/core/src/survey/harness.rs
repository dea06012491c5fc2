//! Experiment drivers for the SRR comparison, the detector ablation and the
//! magnification sweep. Paper values appear only as footer annotations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::table::{mark, pct, Table};
use crate::detector::{train_detector, DecodeConfig, DetSample, DetTrainConfig, Detector, DetectorConfig, DetectorVariant};
use crate::error::{Error, Result};
use crate::eval::{EvalOptions, EvalReport};
use crate::imaging::{degrade, upscale_bicubic, ImageBuffer};
use crate::metrics::{psnr_with, ssim_with, IqOptions, IqReport};
use crate::srr::SrModel;
use crate::Scalar;

/// Label of the non-learned upscaling baseline.
pub const BICUBIC: &str = "Bicubic";
/// Label of the untouched high-resolution test set.
pub const HR: &str = "HR";

/// Precision, recall and mAP@50 of one detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetRow {
    pub label: String,
    /// Side of the images the detector saw.
    pub side: usize,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
}

impl DetRow {
    fn from_report(label: &str, side: usize, r: &EvalReport) -> Self {
        Self { label: label.to_string(), side, precision: r.precision, recall: r.recall, map50: r.map50 }
    }
}

fn relabel<T: Scalar>(images: Vec<ImageBuffer<T>>, like: &[DetSample<T>]) -> Vec<DetSample<T>> {
    images.into_iter().zip(like).map(|(image, s)| DetSample { image, labels: s.labels.clone() }).collect()
}

/// Detector settings shared by the harness runs.
#[derive(Debug, Clone, Copy)]
pub struct DetEval<'a, T: Scalar> {
    pub detector: &'a Detector<T>,
    pub decode: DecodeConfig,
    pub options: EvalOptions,
}

impl<T: Scalar> DetEval<'_, T> {
    fn run(&self, label: &str, samples: &[DetSample<T>]) -> Result<DetRow> {
        let side = samples.first().map_or(0, |s| s.image.width());
        let report = self.detector.evaluate(samples, &self.decode, &self.options)?;
        Ok(DetRow::from_report(label, side, &report))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrrBenchmark {
    /// Per-image PSNR/SSIM of bicubic and every model against HR.
    pub iq: IqReport,
    /// HR first, then bicubic and every model, when a detector was given.
    pub detection: Vec<DetRow>,
}

/// Degrades each HR test image by `m`, reconstructs it with bicubic and
/// every model, and scores image quality and (optionally) detection.
pub fn run_srr_benchmark<T: Scalar>(
    test: &[DetSample<T>],
    magnification: usize,
    models: &[(String, &SrModel<T>)],
    iq: &IqOptions,
    detector: Option<&DetEval<'_, T>>,
) -> Result<SrrBenchmark> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some((name, _)) = models.iter().find(|(_, m)| m.magnification() != magnification) {
        return Err(Error::InvalidConfig(format!("{name} is not a x{magnification} model")));
    }
    let lr: Vec<ImageBuffer<T>> = test.par_iter().map(|s| degrade(&s.image, magnification)).collect::<Result<_>>()?;
    let mut methods: Vec<(String, Vec<ImageBuffer<T>>)> =
        vec![(BICUBIC.to_string(), lr.par_iter().map(|l| upscale_bicubic(l, magnification)).collect::<Result<_>>()?)];
    for (name, model) in models {
        methods.push((name.clone(), lr.iter().map(|l| model.reconstruct(l)).collect::<Result<_>>()?));
    }
    let mut report = IqReport::default();
    for (name, recon) in &methods {
        let scores: Vec<(f64, f64)> = recon
            .par_iter()
            .zip(test)
            .map(|(r, s)| Ok((psnr_with(&s.image, r, iq)?, ssim_with(&s.image, r, iq)?)))
            .collect::<Result<_>>()?;
        for (i, (p, s)) in scores.into_iter().enumerate() {
            report.push(format!("{i:04}"), name.clone(), p, s);
        }
    }
    let mut detection = Vec::new();
    if let Some(det) = detector {
        detection.push(det.run(HR, test)?);
        for (name, recon) in methods {
            detection.push(det.run(&name, &relabel(recon, test))?);
        }
    }
    Ok(SrrBenchmark { iq: report, detection })
}

/// Image-quality table: one column per method, PSNR and SSIM rows.
pub fn iq_table(iq: &IqReport, magnification: usize) -> Table {
    let summaries = iq.summaries();
    let mut headers = vec!["Metrics"];
    headers.extend(summaries.iter().map(|s| s.method.as_str()));
    let mut t = Table::new(format!("Image quality of SRR methods on the LR test set (x{magnification})"), &headers);
    let mut psnr = vec!["PSNR (dB)".to_string()];
    psnr.extend(summaries.iter().map(|s| format!("{:.2}", s.psnr_db)));
    let mut ssim = vec!["SSIM (%)".to_string()];
    ssim.extend(summaries.iter().map(|s| pct(s.ssim)));
    t.push(psnr);
    t.push(ssim);
    t.footer.push("Reference (field data, x4): PSNR 36.24 / 36.40 / 36.58 / 36.66 / 36.97 / 37.05 dB, SSIM 83.94 / 85.13 / 85.45 / 85.59 / 86.44 / 86.54 % for Bicubic / SRCNN / SRFBN / EDSR / RCAN / RDN.".into());
    t
}

fn detection_columns(title: &str, rows: &[DetRow], metric_label: &str) -> Table {
    let mut headers = vec!["Metrics (%)"];
    headers.extend(rows.iter().map(|r| r.label.as_str()));
    let mut t = Table::new(title, &headers);
    for (name, f) in [
        ("Precision", (|r: &DetRow| r.precision) as fn(&DetRow) -> f64),
        ("Recall", |r: &DetRow| r.recall),
        (metric_label, |r: &DetRow| r.map50),
    ] {
        let mut row = vec![name.to_string()];
        row.extend(rows.iter().map(|r| pct(f(r))));
        t.push(row);
    }
    t
}

/// Detection on reconstructed test sets, one column per method.
pub fn srr_detection_table(rows: &[DetRow]) -> Table {
    let mut t = detection_columns("Detection on test sets reconstructed by SRR methods", rows, "mAP@50");
    t.footer.push("Reference (field data): mAP@50 93.1 / 29.8 / 56.3 / 61.0 / 62.7 / 69.3 / 69.5 % for HR / Bicubic / SRCNN / SRFBN / EDSR / RCAN / RDN.".into());
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: DetectorVariant,
    pub four_heads: bool,
    pub gsconv: bool,
    pub eca: bool,
    pub params: usize,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
}

/// `base` with the enhancement flags of `variant`.
pub fn variant_config(base: &DetectorConfig, variant: DetectorVariant) -> DetectorConfig {
    let (four_heads, gsconv, eca) = variant.flags();
    DetectorConfig { four_heads, gsconv, eca, ..base.clone() }
}

/// Trains each lattice variant from the same seed and data and scores it
/// on `test`. Rows follow the lattice order.
pub fn run_ablation<T: Scalar>(
    base: &DetectorConfig,
    train: &[DetSample<T>],
    test: &[DetSample<T>],
    train_cfg: &DetTrainConfig,
    decode: &DecodeConfig,
    options: &EvalOptions,
) -> Result<Vec<AblationRow>> {
    DetectorVariant::ALL
        .into_iter()
        .map(|variant| {
            let cfg = variant_config(base, variant);
            let mut model = Detector::<T>::new(cfg.clone())?;
            train_detector(&mut model, train, train_cfg)?;
            let r = model.evaluate(test, decode, options)?;
            Ok(AblationRow {
                variant,
                four_heads: cfg.four_heads,
                gsconv: cfg.gsconv,
                eca: cfg.eca,
                params: model.param_count(),
                precision: r.precision,
                recall: r.recall,
                map50: r.map50,
            })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> Table {
    let mut t = Table::new(
        "Ablation of detection networks",
        &["model", "4 head", "GSConv", "ECA", "Params", "Precision (%)", "Recall (%)", "mAP@50 (%)"],
    );
    for r in rows {
        t.push(vec![
            r.variant.name().to_string(),
            mark(r.four_heads),
            mark(r.gsconv),
            mark(r.eca),
            r.params.to_string(),
            pct(r.precision),
            pct(r.recall),
            pct(r.map50),
        ]);
    }
    t.footer.push("Reference (field data): mAP@50 87.2 / 91.5 / 92.9 / 93.1 % in lattice order.".into());
    t
}

/// One column of the magnification sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub magnification: usize,
    /// Side of the images the detector saw.
    pub side: usize,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
}

pub fn sweep_label(m: usize) -> String {
    if m == 1 {
        "x1-LR".into()
    } else {
        format!("x{m}-SR")
    }
}

/// Scores the detector on the raw LR test set (`x1-LR`) and on its
/// reconstruction by each model, in the order of `models`.
pub fn run_magnification_sweep<T: Scalar>(
    lr_test: &[DetSample<T>],
    models: &[&SrModel<T>],
    det: &DetEval<'_, T>,
) -> Result<Vec<SweepRow>> {
    if lr_test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let to_row = |m: usize, r: DetRow| SweepRow {
        label: sweep_label(m),
        magnification: m,
        side: r.side,
        precision: r.precision,
        recall: r.recall,
        map50: r.map50,
    };
    let mut rows = vec![to_row(1, det.run(&sweep_label(1), lr_test)?)];
    for model in models {
        let m = model.magnification();
        let recon: Vec<ImageBuffer<T>> = lr_test.iter().map(|s| model.reconstruct(&s.image)).collect::<Result<_>>()?;
        rows.push(to_row(m, det.run(&sweep_label(m), &relabel(recon, lr_test))?));
    }
    Ok(rows)
}

/// Magnification with the best mAP among the SR rows (lowest on ties).
pub fn peak_magnification(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .filter(|r| r.magnification > 1)
        .fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if b.map50 >= r.map50 => Some(b),
            _ => Some(r),
        })
        .map(|r| r.magnification)
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let det: Vec<DetRow> = rows
        .iter()
        .map(|r| DetRow { label: r.label.clone(), side: r.side, precision: r.precision, recall: r.recall, map50: r.map50 })
        .collect();
    let mut t = detection_columns("Detection on test sets reconstructed at different magnifications", &det, "mAP");
    let mut sizes = vec!["Size (px)".to_string()];
    sizes.extend(rows.iter().map(|r| format!("{0}x{0}", r.side)));
    t.push(sizes);
    if let Some(m) = peak_magnification(rows) {
        t.footer.push(format!("Peak magnification: x{m}"));
    }
    t.footer.push("Reference (field data): mAP 18.1 / 50.5 / 55.3 / 69.5 / 51.0 % for x1-LR / x2..x5-SR, peak at x4.".into());
    t
}
