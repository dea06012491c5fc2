use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tiling::NUM_CLASSES;

/// Base channel plan of the five backbone stages before the width multiplier.
pub const BASE_CHANNELS: [usize; 5] = [64, 128, 256, 512, 1024];
/// Bottleneck repeats of the backbone C2f stages before the depth multiplier.
pub const BASE_REPEATS: [usize; 4] = [3, 6, 6, 3];

/// The four rows of the ablation lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorVariant {
    Baseline,
    FourHeads,
    FourHeadsGsconv,
    CrabYolo,
}

impl DetectorVariant {
    pub const ALL: [DetectorVariant; 4] =
        [DetectorVariant::Baseline, DetectorVariant::FourHeads, DetectorVariant::FourHeadsGsconv, DetectorVariant::CrabYolo];

    /// `(four_heads, gsconv, eca)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            DetectorVariant::Baseline => (false, false, false),
            DetectorVariant::FourHeads => (true, false, false),
            DetectorVariant::FourHeadsGsconv => (true, true, false),
            DetectorVariant::CrabYolo => (true, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DetectorVariant::Baseline => "YOLOv8s",
            DetectorVariant::FourHeads => "YOLOv8s-1",
            DetectorVariant::FourHeadsGsconv => "YOLOv8s-1-2",
            DetectorVariant::CrabYolo => "YOLOv8s-1-2-3 (Crab-YOLO)",
        }
    }
}

impl fmt::Display for DetectorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        DetectorVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(&key) || serde_name(*v) == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown detector variant '{s}'")))
    }
}

fn serde_name(v: DetectorVariant) -> &'static str {
    match v {
        DetectorVariant::Baseline => "baseline",
        DetectorVariant::FourHeads => "four-heads",
        DetectorVariant::FourHeadsGsconv => "four-heads-gsconv",
        DetectorVariant::CrabYolo => "crab-yolo",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Adds the stride-4 level.
    pub four_heads: bool,
    /// Uses GSConv in the layers listed in `gsconv_layers`.
    pub gsconv: bool,
    /// Inserts attention after every neck fusion layer.
    pub eca: bool,
    /// Adds the group-norm spatial branch (with softmax channel weights and a
    /// shuffle) to every attention block.
    pub eca_spatial: bool,
    /// Channel shuffle at the end of each GSConv block.
    pub gsconv_shuffle: bool,
    /// Layer-table indices that become GSConv when `gsconv` is set.
    pub gsconv_layers: Vec<usize>,
    pub width_multiplier: f64,
    pub depth_multiplier: f64,
    /// Upper bound on any stage width before the multiplier.
    pub max_channels: usize,
    pub num_classes: usize,
    pub input_side: usize,
    /// Bins of the distance distribution per box side.
    pub reg_max: usize,
    pub seed: u64,
}

impl DetectorConfig {
    /// YOLOv8s-sized network.
    pub fn small(variant: DetectorVariant) -> Self {
        let (four_heads, gsconv, eca) = variant.flags();
        Self {
            four_heads,
            gsconv,
            eca,
            eca_spatial: false,
            gsconv_shuffle: true,
            gsconv_layers: vec![11, 12],
            width_multiplier: 0.5,
            depth_multiplier: 1.0 / 3.0,
            max_channels: 1024,
            num_classes: NUM_CLASSES,
            input_side: 640,
            reg_max: 16,
            seed: 0,
        }
    }

    /// A narrow network that trains in minutes on a CPU.
    pub fn tiny(variant: DetectorVariant) -> Self {
        Self { width_multiplier: 0.125, reg_max: 8, ..Self::small(variant) }
    }

    pub fn with_input_side(mut self, side: usize) -> Self {
        self.input_side = side;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn strides(&self) -> Vec<usize> {
        if self.four_heads {
            vec![4, 8, 16, 32]
        } else {
            vec![8, 16, 32]
        }
    }

    /// Stage widths after the multiplier, rounded up to a multiple of 4.
    pub fn channels(&self) -> [usize; 5] {
        BASE_CHANNELS.map(|c| {
            let v = (c.min(self.max_channels) as f64 * self.width_multiplier).round() as usize;
            v.div_ceil(4).max(1) * 4
        })
    }

    pub fn repeats(&self) -> [usize; 4] {
        BASE_REPEATS.map(|n| self.repeat(n))
    }

    pub(crate) fn repeat(&self, n: usize) -> usize {
        ((n as f64 * self.depth_multiplier).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [("width", self.width_multiplier), ("depth", self.depth_multiplier)] {
            if !(v.is_finite() && v > 0.0 && v <= 4.0) {
                return bad(format!("{name} multiplier {v} outside (0, 4]"));
            }
        }
        if self.num_classes != NUM_CLASSES {
            return bad(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes));
        }
        if self.input_side == 0 || self.input_side % 32 != 0 {
            return bad(format!("input side {} is not a positive multiple of 32", self.input_side));
        }
        if self.reg_max < 2 {
            return bad(format!("reg_max {} < 2", self.reg_max));
        }
        if self.max_channels == 0 {
            return bad("max_channels must be positive".into());
        }
        Ok(())
    }
}

/// Loss weights and assigner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub box_weight: f64,
    pub cls_weight: f64,
    pub dfl_weight: f64,
    /// Candidate anchors kept per ground truth.
    pub topk: usize,
    /// Exponent of the classification score in the alignment metric.
    pub alpha: f64,
    /// Exponent of the IoU in the alignment metric.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { box_weight: 7.5, cls_weight: 0.5, dfl_weight: 1.5, topk: 10, alpha: 0.5, beta: 6.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiply the learning rate by `lr_decay_factor` every `lr_decay_every` epochs (0 = constant).
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for DetTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_decay_every: 0,
            lr_decay_factor: 0.5,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl DetTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if self.loss.topk == 0 {
            return Err(Error::InvalidConfig("assigner topk must be positive".into()));
        }
        Ok(())
    }
}

/// Thresholds for turning raw outputs into detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    /// Cap on detections kept per image after suppression.
    pub max_detections: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { conf_threshold: 0.25, nms_iou: 0.45, max_detections: 300 }
    }
}

impl DecodeConfig {
    /// Low threshold so the precision/recall curve reaches high recall.
    pub fn for_evaluation() -> Self {
        Self { conf_threshold: 0.001, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v < 1.0;
        if !ok(self.conf_threshold) || !ok(self.nms_iou) {
            return Err(Error::InvalidConfig(format!(
                "decode thresholds must lie in (0, 1): conf {}, nms {}",
                self.conf_threshold, self.nms_iou
            )));
        }
        Ok(())
    }
}
