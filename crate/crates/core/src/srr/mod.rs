//! Super-resolution networks (SRCNN, EDSR, RDN, RCAN, SRFBN), L1 training
//! and reconstruction.

mod config;
mod model;
mod train;

pub use config::{SrArchitecture, SrModelConfig, SrPreset, SrTrainConfig};
pub use model::{bicubic_batch, l1_loss, LayerInfo, SrModel, CHECKPOINT_KIND};
pub use train::{train_sr, train_sr_with, SrPair};
