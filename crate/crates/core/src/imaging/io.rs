use std::path::Path;

use crabwatch_nn::Scalar;
use image::{DynamicImage, ImageFormat};

use super::ImageBuffer;
use crate::error::{Error, Result};

fn lossless_format(path: &Path) -> Result<ImageFormat> {
    let fmt = ImageFormat::from_path(path)
        .map_err(|_| Error::UnsupportedFormat(path.display().to_string()))?;
    match fmt {
        ImageFormat::Png | ImageFormat::Bmp | ImageFormat::Tiff | ImageFormat::Pnm => Ok(fmt),
        other => Err(Error::UnsupportedFormat(format!("{other:?} ({})", path.display()))),
    }
}

/// Reads an 8-bit grayscale or RGB raster. Alpha is discarded; 16-bit
/// sources are reduced to 8 bits.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageBuffer<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let fmt = lossless_format(path)?;
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    if reader.format() != Some(fmt) {
        return Err(Error::UnsupportedFormat(path.display().to_string()));
    }
    let img = reader.decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroDimension);
    }
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        ImageBuffer::from_u8(w, h, 1, img.to_luma8().as_raw())
    } else {
        ImageBuffer::from_u8(w, h, 3, img.to_rgb8().as_raw())
    }
}

/// Writes the 8-bit view of `img`; the format follows the file extension.
pub fn save_image<T: Scalar>(img: &ImageBuffer<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fmt = lossless_format(path)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = img.to_u8();
    let dynimg = if img.channels() == 1 {
        DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("buffer size"))
    } else {
        DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("buffer size"))
    };
    dynimg.save_with_format(path, fmt)?;
    Ok(())
}
