use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boxes::BoundingBox;
use crate::error::{Error, Result};
use crate::imaging::{resample_bicubic, ImageBuffer, ResampleSpec};
use crate::Scalar;

/// Label-exact geometric transforms of a square or rectangular tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoOp {
    Identity,
    Hflip,
    Vflip,
    Rot180,
    /// Reflection about the main diagonal.
    Transpose,
    /// Reflection about the anti-diagonal.
    AntiTranspose,
}

impl GeoOp {
    pub const ALL: [GeoOp; 6] =
        [GeoOp::Identity, GeoOp::Hflip, GeoOp::Vflip, GeoOp::Rot180, GeoOp::Transpose, GeoOp::AntiTranspose];

    pub fn name(self) -> &'static str {
        match self {
            GeoOp::Identity => "identity",
            GeoOp::Hflip => "hflip",
            GeoOp::Vflip => "vflip",
            GeoOp::Rot180 => "rot180",
            GeoOp::Transpose => "transpose",
            GeoOp::AntiTranspose => "anti_transpose",
        }
    }

    /// Whether width and height trade places.
    pub fn swaps_axes(self) -> bool {
        matches!(self, GeoOp::Transpose | GeoOp::AntiTranspose)
    }

    pub fn apply_image<T: Scalar>(self, img: &ImageBuffer<T>) -> ImageBuffer<T> {
        let (w, h) = (img.width(), img.height());
        match self {
            GeoOp::Identity => img.clone(),
            GeoOp::Hflip => img.remap(w, h, |x, y| (w - 1 - x, y)),
            GeoOp::Vflip => img.remap(w, h, |x, y| (x, h - 1 - y)),
            GeoOp::Rot180 => img.remap(w, h, |x, y| (w - 1 - x, h - 1 - y)),
            GeoOp::Transpose => img.remap(h, w, |x, y| (y, x)),
            GeoOp::AntiTranspose => img.remap(h, w, |x, y| (w - 1 - y, h - 1 - x)),
        }
    }

    pub fn apply_box(self, b: &BoundingBox) -> BoundingBox {
        let (cx, cy, w, h) = match self {
            GeoOp::Identity => (b.cx, b.cy, b.w, b.h),
            GeoOp::Hflip => (1.0 - b.cx, b.cy, b.w, b.h),
            GeoOp::Vflip => (b.cx, 1.0 - b.cy, b.w, b.h),
            GeoOp::Rot180 => (1.0 - b.cx, 1.0 - b.cy, b.w, b.h),
            GeoOp::Transpose => (b.cy, b.cx, b.h, b.w),
            GeoOp::AntiTranspose => (1.0 - b.cy, 1.0 - b.cx, b.h, b.w),
        };
        BoundingBox { cx, cy, w, h, ..*b }
    }
}

/// A geometric transform followed by a uniform canvas rescale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentOp {
    pub geo: GeoOp,
    pub scale: f64,
}

impl AugmentOp {
    pub fn new(geo: GeoOp, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidConfig(format!("augmentation scale {scale} outside (0, 1]")));
        }
        Ok(Self { geo, scale })
    }

    pub fn identity() -> Self {
        Self { geo: GeoOp::Identity, scale: 1.0 }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.geo.name(), self.scale)
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (geo, scale) = s.split_once('@').unwrap_or((s, "1"));
        let geo = GeoOp::ALL
            .into_iter()
            .find(|g| g.name() == geo)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown augmentation '{geo}'")))?;
        let scale = scale.parse::<f64>().map_err(|e| Error::InvalidConfig(format!("augmentation scale: {e}")))?;
        AugmentOp::new(geo, scale)
    }
}

/// Scale ratios of the default recipe, unit scale first.
pub const DEFAULT_SCALES: [f64; 5] = [1.0, 0.6, 0.7, 0.8, 0.9];

/// Every geometric op at every default scale: 6 × 5 = 30 ops.
pub fn default_recipe() -> Vec<AugmentOp> {
    DEFAULT_SCALES
        .iter()
        .flat_map(|&scale| GeoOp::ALL.into_iter().map(move |geo| AugmentOp { geo, scale }))
        .collect()
}

/// Applies `op` to an image and its tile-normalized labels.
pub fn augment<T: Scalar>(
    img: &ImageBuffer<T>,
    boxes: &[BoundingBox],
    op: &AugmentOp,
) -> Result<(ImageBuffer<T>, Vec<BoundingBox>)> {
    let mut out = op.geo.apply_image(img);
    if op.scale != 1.0 {
        let tw = ((out.width() as f64) * op.scale).round().max(1.0) as usize;
        let th = ((out.height() as f64) * op.scale).round().max(1.0) as usize;
        out = resample_bicubic(&out, &ResampleSpec::new(tw, th))?;
    }
    let boxes = boxes.iter().map(|b| op.geo.apply_box(b)).collect();
    Ok((out, boxes))
}

/// Image with labels and an identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub image: ImageBuffer<T>,
    pub boxes: Vec<BoundingBox>,
}

/// Augmented sample with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub source_id: String,
    pub op: AugmentOp,
}

/// Applies every recipe op to every sample. Output order is sample-major,
/// recipe-minor; ids are `"{source}#{op}"`.
pub fn expand_dataset<T: Scalar>(
    samples: &[Sample<T>],
    recipe: &[AugmentOp],
) -> Result<Vec<(Sample<T>, Provenance)>> {
    if recipe.is_empty() {
        return Err(Error::InvalidConfig("augmentation recipe is empty".into()));
    }
    let jobs: Vec<(&Sample<T>, &AugmentOp)> = samples.iter().flat_map(|s| recipe.iter().map(move |op| (s, op))).collect();
    jobs.into_par_iter()
        .map(|(s, op)| {
            let (image, boxes) = augment(&s.image, &s.boxes, op)?;
            let sample = Sample { id: format!("{}#{op}", s.id), image, boxes };
            Ok((sample, Provenance { source_id: s.id.clone(), op: *op }))
        })
        .collect()
}
