use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrArchitecture {
    Srcnn,
    Edsr,
    Rdn,
    Rcan,
    Srfbn,
}

impl SrArchitecture {
    pub const ALL: [SrArchitecture; 5] =
        [SrArchitecture::Srcnn, SrArchitecture::Srfbn, SrArchitecture::Edsr, SrArchitecture::Rcan, SrArchitecture::Rdn];

    pub fn name(self) -> &'static str {
        match self {
            SrArchitecture::Srcnn => "SRCNN",
            SrArchitecture::Edsr => "EDSR",
            SrArchitecture::Rdn => "RDN",
            SrArchitecture::Rcan => "RCAN",
            SrArchitecture::Srfbn => "SRFBN",
        }
    }
}

impl fmt::Display for SrArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SrArchitecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SrArchitecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown SR architecture '{s}'")))
    }
}

/// Size presets. `Tiny` trains in seconds, `Desk` in minutes on a CPU,
/// `Full` approximates the published network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrPreset {
    Tiny,
    Desk,
    Full,
}

/// Architecture plus size knobs. Knobs a variant does not use are ignored.
///
/// | variant | `depth`            | `block_layers`        | other            |
/// |---------|--------------------|-----------------------|------------------|
/// | SRCNN   | unused             | unused                | `width` = n1     |
/// | EDSR    | residual blocks    | unused                | `res_scale`      |
/// | RDN     | dense blocks       | conv layers per block | `growth`         |
/// | RCAN    | residual groups    | blocks per group      | `reduction`      |
/// | SRFBN   | projection groups  | unused                | `steps` (T)      |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrModelConfig {
    pub architecture: SrArchitecture,
    pub magnification: usize,
    /// Image channels (1 or 3).
    pub channels: usize,
    pub width: usize,
    pub depth: usize,
    pub block_layers: usize,
    pub growth: usize,
    pub reduction: usize,
    pub steps: usize,
    pub res_scale: f64,
    /// Start the reconstruction layer at zero so the untrained model returns
    /// the bicubic upsample.
    pub zero_init_tail: bool,
    pub seed: u64,
}

impl SrModelConfig {
    pub fn preset(architecture: SrArchitecture, magnification: usize, preset: SrPreset) -> Self {
        let (width, depth, block_layers, growth, reduction, steps, res_scale) = match (architecture, preset) {
            (SrArchitecture::Srcnn, SrPreset::Tiny) => (16, 1, 1, 1, 1, 1, 1.0),
            (SrArchitecture::Srcnn, _) => (64, 1, 1, 1, 1, 1, 1.0),
            (SrArchitecture::Edsr, SrPreset::Tiny) => (16, 2, 1, 1, 1, 1, 1.0),
            (SrArchitecture::Edsr, SrPreset::Desk) => (32, 8, 1, 1, 1, 1, 1.0),
            (SrArchitecture::Edsr, SrPreset::Full) => (256, 32, 1, 1, 1, 1, 0.1),
            (SrArchitecture::Rdn, SrPreset::Tiny) => (32, 3, 3, 16, 1, 1, 1.0),
            (SrArchitecture::Rdn, SrPreset::Desk) => (32, 4, 4, 16, 1, 1, 1.0),
            (SrArchitecture::Rdn, SrPreset::Full) => (64, 16, 8, 64, 1, 1, 1.0),
            (SrArchitecture::Rcan, SrPreset::Tiny) => (16, 2, 2, 1, 4, 1, 1.0),
            (SrArchitecture::Rcan, SrPreset::Desk) => (32, 3, 4, 1, 8, 1, 1.0),
            (SrArchitecture::Rcan, SrPreset::Full) => (64, 10, 20, 1, 16, 1, 1.0),
            (SrArchitecture::Srfbn, SrPreset::Tiny) => (16, 2, 1, 1, 1, 2, 1.0),
            (SrArchitecture::Srfbn, SrPreset::Desk) => (32, 3, 1, 1, 1, 3, 1.0),
            (SrArchitecture::Srfbn, SrPreset::Full) => (64, 6, 1, 1, 1, 4, 1.0),
        };
        Self {
            architecture,
            magnification,
            channels: 3,
            width,
            depth,
            block_layers,
            growth,
            reduction,
            steps,
            res_scale,
            zero_init_tail: false,
            seed: 0,
        }
    }

    pub fn tiny(architecture: SrArchitecture, magnification: usize) -> Self {
        Self::preset(architecture, magnification, SrPreset::Tiny)
    }

    pub fn desk(architecture: SrArchitecture, magnification: usize) -> Self {
        Self::preset(architecture, magnification, SrPreset::Desk)
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_zero_tail(mut self, zero: bool) -> Self {
        self.zero_init_tail = zero;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(2..=8).contains(&self.magnification) {
            return bad(format!("magnification {} outside 2..=8", self.magnification));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("{} image channels", self.channels));
        }
        if self.width == 0 || self.depth == 0 {
            return bad("width and depth must be positive".into());
        }
        match self.architecture {
            SrArchitecture::Srcnn if self.width < 2 => bad("SRCNN width must be at least 2".into()),
            SrArchitecture::Rdn if self.block_layers == 0 || self.growth == 0 => {
                bad("RDN needs positive block_layers and growth".into())
            }
            SrArchitecture::Rcan if self.block_layers == 0 || self.reduction == 0 || self.reduction > self.width => {
                bad(format!("RCAN reduction {} incompatible with width {}", self.reduction, self.width))
            }
            SrArchitecture::Srfbn if self.steps == 0 => bad("SRFBN needs at least one feedback step".into()),
            SrArchitecture::Edsr if !(self.res_scale.is_finite() && self.res_scale > 0.0) => {
                bad(format!("EDSR res_scale {}", self.res_scale))
            }
            _ => Ok(()),
        }
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrTrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `lr_decay_factor` every `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// LR patch side; HR patches are `magnification` times larger.
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for SrTrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            batch_size: 16,
            learning_rate: 1e-4,
            lr_decay_every: 100,
            lr_decay_factor: 0.5,
            patch_size: 40,
            seed: 0,
        }
    }
}

impl SrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.max_epochs > 300 {
            return Err(Error::InvalidConfig(format!("max_epochs {} outside 1..=300", self.max_epochs)));
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return Err(Error::InvalidConfig("batch_size and patch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}
