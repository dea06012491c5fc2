//! Labelled image folders: `name.png` with optional YOLO-style `name.txt`.

use std::path::{Path, PathBuf};

use crabwatch::detector::DetSample;
use crabwatch::imaging::{load_image, resample_bicubic, ResampleSpec};
use crabwatch::synthetic::{synth_scene, SceneSpec};
use crabwatch::tiling::{read_labels, Sample};
use crabwatch::{Error, ImageBuffer, Result};

pub type F = f32;

/// Seed offset separating generated test scenes from training scenes.
pub const TEST_SEED_OFFSET: u64 = 50_000;

pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads every PNG in `dir` (sorted by name) with its labels, if any.
pub fn load_dir(dir: &Path) -> Result<Vec<Sample<F>>> {
    image_files(dir)?
        .into_iter()
        .map(|p| {
            let image = load_image::<F>(&p)?;
            let labels = p.with_extension("txt");
            let boxes = if labels.exists() { read_labels(&labels)? } else { Vec::new() };
            Ok(Sample { id: stem(&p), image, boxes })
        })
        .collect()
}

/// `n` square synthetic scenes seeded from `seed`.
pub fn synthetic(n: usize, side: usize, crabs: usize, seed: u64) -> Result<Vec<Sample<F>>> {
    (0..n)
        .map(|i| {
            let (image, boxes) = synth_scene::<F>(&SceneSpec::new(side, side, crabs), seed + i as u64)?;
            let boxes = boxes.iter().map(|b| b.normalized(side as f64, side as f64)).collect();
            Ok(Sample { id: format!("scene_{i:04}"), image, boxes })
        })
        .collect()
}

pub fn fit(img: &ImageBuffer<F>, side: usize) -> Result<ImageBuffer<F>> {
    if img.width() == side && img.height() == side {
        Ok(img.clone())
    } else {
        resample_bicubic(img, &ResampleSpec::new(side, side))
    }
}

/// Detector samples resampled to a square `side`.
pub fn det_samples(samples: &[Sample<F>], side: usize) -> Result<Vec<DetSample<F>>> {
    samples.iter().map(|s| Ok(DetSample { image: fit(&s.image, side)?, labels: s.boxes.clone() })).collect()
}

pub fn as_det_samples(samples: Vec<Sample<F>>) -> Vec<DetSample<F>> {
    samples.into_iter().map(|s| DetSample { image: s.image, labels: s.boxes }).collect()
}
