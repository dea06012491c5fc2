//! Raster buffers, lossless file I/O, bicubic resampling and the HR → LR
//! degradation model.

mod buffer;
mod io;
mod resample;

pub use buffer::ImageBuffer;
pub use io::{load_image, save_image};
pub use resample::{crop_to_multiple, cubic_kernel, degrade, resample_bicubic, upscale_bicubic, ResampleSpec, CATMULL_ROM};
