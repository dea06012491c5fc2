//! The anchor-free detector with its three switchable enhancements (a
//! stride-4 head, GSConv neck blocks, channel attention), decoding, loss and
//! training.

mod blocks;
mod config;
mod decode;
mod loss;
mod network;
mod train;

pub use blocks::{eca_kernel_size, shuffle_perm, Bottleneck, ConvUnit, Eca, GsConv, Norm, Sppf, C2f};
pub use config::{DecodeConfig, DetTrainConfig, DetectorConfig, DetectorVariant, LossConfig, BASE_CHANNELS, BASE_REPEATS};
pub use decode::{decode, dfl_expectation, nms, nms_indices, Detection};
pub use loss::{assign, detection_loss, giou_with_grad, loss_with_assignment, LossParts, Positive};
pub use network::{DetLayer, Detector, CHECKPOINT_KIND};
pub use train::{train_detector, train_detector_with, DetSample};
