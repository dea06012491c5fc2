//! Declarative run configuration (TOML). Every field has a default, so an
//! empty document is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::merge::DEFAULT_MERGE_IOU;
use crate::detector::{DecodeConfig, DetTrainConfig, DetectorConfig, DetectorVariant};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::metrics::IqOptions;
use crate::srr::{SrArchitecture, SrModelConfig, SrPreset, SrTrainConfig};
use crate::tiling::{default_recipe, AugmentOp, EdgePolicy, TileGrid};

/// Scene generator settings, used when no survey frame is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSettings {
    pub frame_width: usize,
    pub frame_height: usize,
    pub frame_crabs: usize,
    /// Extra labelled scenes added to the training set, each `tile_side` square.
    pub train_scenes: usize,
    pub crabs_per_scene: usize,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self { frame_width: 512, frame_height: 384, frame_crabs: 24, train_scenes: 8, crabs_per_scene: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingSettings {
    pub window: usize,
    pub stride: usize,
    pub edge_policy: EdgePolicy,
}

impl Default for TilingSettings {
    fn default() -> Self {
        Self { window: 640, stride: 320, edge_policy: EdgePolicy::DropPartial }
    }
}

impl TilingSettings {
    pub fn grid(&self) -> Result<TileGrid> {
        TileGrid::new(self.window, self.stride, self.edge_policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSettings {
    /// Ops as `geo@scale` strings; the default is the 30-op recipe.
    pub recipe: Vec<String>,
    /// Expand the detector training set inside `report`.
    pub in_report: bool,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self { recipe: default_recipe().iter().map(ToString::to_string).collect(), in_report: false }
    }
}

impl AugmentSettings {
    pub fn ops(&self) -> Result<Vec<AugmentOp>> {
        self.recipe.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrrSettings {
    /// Learned methods compared against bicubic, in table order.
    pub architectures: Vec<SrArchitecture>,
    pub preset: SrPreset,
    pub magnification: usize,
    /// Factors of the magnification sweep.
    pub sweep: Vec<usize>,
    pub zero_init_tail: bool,
    pub train: SrTrainConfig,
    pub iq: IqOptions,
}

impl Default for SrrSettings {
    fn default() -> Self {
        Self {
            architectures: SrArchitecture::ALL.to_vec(),
            preset: SrPreset::Tiny,
            magnification: 4,
            sweep: vec![2, 3, 4, 5],
            zero_init_tail: true,
            train: SrTrainConfig::default(),
            iq: IqOptions::default(),
        }
    }
}

impl SrrSettings {
    pub fn model(&self, arch: SrArchitecture, magnification: usize, seed: u64) -> SrModelConfig {
        SrModelConfig::preset(arch, magnification, self.preset).with_zero_tail(self.zero_init_tail).with_seed(seed)
    }
}

/// Detector size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetPreset {
    Tiny,
    Small,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSettings {
    pub variant: DetectorVariant,
    pub preset: DetPreset,
    /// Network input side; tiles are resampled to it.
    pub input_side: usize,
    pub train: DetTrainConfig,
    pub decode: DecodeConfig,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            variant: DetectorVariant::CrabYolo,
            preset: DetPreset::Tiny,
            input_side: 128,
            train: DetTrainConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl DetectorSettings {
    pub fn model(&self, variant: DetectorVariant, seed: u64) -> DetectorConfig {
        let base = match self.preset {
            DetPreset::Tiny => DetectorConfig::tiny(variant),
            DetPreset::Small => DetectorConfig::small(variant),
        };
        base.with_input_side(self.input_side).with_seed(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensitySettings {
    /// Cell side in frame pixels.
    pub cell_size: f64,
    pub altitude_m: f64,
    pub fov_deg: f64,
    /// Sensor width in pixels; with altitude and FOV it fixes the GSD.
    pub sensor_width_px: f64,
    pub px_per_cell: usize,
}

impl Default for DensitySettings {
    fn default() -> Self {
        Self { cell_size: 320.0, altitude_m: 5.0, fov_deg: 94.0, sensor_width_px: 5472.0, px_per_cell: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeSettings {
    pub iou: f64,
}

impl Default for MergeSettings {
    fn default() -> Self {
        Self { iou: DEFAULT_MERGE_IOU }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurveyConfig {
    pub seed: u64,
    pub synthetic: SyntheticSettings,
    pub tiling: TilingSettings,
    pub augment: AugmentSettings,
    pub srr: SrrSettings,
    pub detector: DetectorSettings,
    pub eval: EvalOptions,
    pub merge: MergeSettings,
    pub density: DensitySettings,
}

impl SurveyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// A configuration that runs `report` end to end in seconds.
    pub fn quick() -> Self {
        let mut cfg = Self::default();
        cfg.synthetic = SyntheticSettings { frame_width: 256, frame_height: 192, frame_crabs: 8, train_scenes: 4, crabs_per_scene: 3 };
        cfg.tiling = TilingSettings { window: 64, stride: 48, edge_policy: EdgePolicy::PadReflect };
        cfg.srr.architectures = vec![SrArchitecture::Srcnn];
        cfg.srr.magnification = 2;
        cfg.srr.sweep = vec![2];
        cfg.srr.train.max_epochs = 3;
        cfg.srr.train.batch_size = 8;
        cfg.srr.train.patch_size = 16;
        cfg.detector.input_side = 64;
        cfg.detector.train.epochs = 3;
        cfg.density.cell_size = 64.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.tiling.grid()?;
        self.augment.ops()?;
        self.srr.train.validate()?;
        self.detector.decode.validate()?;
        self.detector.model(self.detector.variant, self.seed).validate()?;
        self.srr.model(SrArchitecture::Srcnn, self.srr.magnification, self.seed).validate()?;
        for &m in &self.srr.sweep {
            self.srr.model(SrArchitecture::Srcnn, m, self.seed).validate()?;
        }
        if self.detector.train.epochs == 0 || self.detector.train.batch_size == 0 {
            return bad("detector epochs and batch_size must be positive".into());
        }
        if self.synthetic.frame_width == 0 || self.synthetic.frame_height == 0 {
            return bad("synthetic frame must be non-empty".into());
        }
        if !(self.merge.iou > 0.0 && self.merge.iou <= 1.0) {
            return bad(format!("merge iou {} outside (0, 1]", self.merge.iou));
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return bad(format!("eval iou_threshold {} outside (0, 1]", self.eval.iou_threshold));
        }
        if !(self.density.cell_size > 0.0) || self.density.px_per_cell == 0 {
            return bad("density cell_size and px_per_cell must be positive".into());
        }
        super::density::ground_sample_distance(self.density.altitude_m, self.density.fov_deg, self.density.sensor_width_px)?;
        Ok(())
    }
}
