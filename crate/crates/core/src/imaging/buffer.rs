use crabwatch_nn::{Scalar, Tensor};

use crate::error::{shape_err, Error, Result};

/// Planar raster with 1 or 3 channels and values in `[0, 1]`.
///
/// Samples are stored channel-major (`c, y, x`), matching the tensor layout
/// the networks consume.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImageBuffer<T> {
    /// Validates dimensions, channel count and value range.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} channels (expected 1 or 3)")));
        }
        if data.len() != width * height * channels {
            return Err(shape_err(width * height * channels, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidImage(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Builds an image by clamping `data` into `[0, 1]`; NaN maps to 0.
    pub fn from_clamped(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let data = data.into_iter().map(clamp01).collect();
        Self::new(width, height, channels, data)
    }

    pub fn constant(width: usize, height: usize, channels: usize, v: T) -> Result<Self> {
        Self::new(width, height, channels, vec![v; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(clamp01(f(x, y, c)));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Imports interleaved 8-bit samples, mapping `0..=255` linearly onto `[0, 1]`.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * channels {
            return Err(shape_err(width * height * channels, bytes.len()));
        }
        let inv = T::one() / T::of(255.0);
        let mut data = vec![T::zero(); bytes.len()];
        let plane = width * height;
        for (i, &b) in bytes.iter().enumerate() {
            let (p, c) = (i / channels, i % channels);
            data[c * plane + p] = T::of(b as f64) * inv;
        }
        Self::new(width, height, channels, data)
    }

    /// Interleaved 8-bit view, rounding to the nearest level.
    pub fn to_u8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = vec![0u8; self.data.len()];
        for c in 0..self.channels {
            for p in 0..plane {
                let v = (self.data[c * plane + p] * T::of(255.0)).round().as_f64();
                out[p * self.channels + c] = v.clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let p = self.width * self.height;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::of_usize(self.data.len())
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_err(
                format!("{}x{}x{}", self.width, self.height, self.channels),
                format!("{}x{}x{}", other.width, other.height, other.channels),
            ));
        }
        Ok(())
    }

    /// Rectangular window; coordinates outside the frame are mirrored
    /// (reflect-101), so windows may overhang the border.
    pub fn crop_reflect(&self, x0: isize, y0: isize, w: usize, h: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in 0..h {
                let sy = reflect(y0 + y as isize, self.height);
                for x in 0..w {
                    let sx = reflect(x0 + x as isize, self.width);
                    data.push(plane[sy * self.width + sx]);
                }
            }
        }
        Self::new(w, h, self.channels, data)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidImage(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        self.crop_reflect(x0 as isize, y0 as isize, w, h)
    }

    /// Applies a pixel-coordinate map `(x, y) -> source (x, y)` to produce an
    /// image of the given size.
    pub(crate) fn remap(&self, w: usize, h: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = f(x, y);
                    data.push(plane[sy * self.width + sx]);
                }
            }
        }
        Self { width: w, height: h, channels: self.channels, data }
    }

    /// ITU-R BT.601 luma; single-channel images are returned unchanged.
    pub fn to_luma(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = (0..self.width * self.height)
            .map(|i| clamp01(T::of(0.299) * r[i] + T::of(0.587) * g[i] + T::of(0.114) * b[i]))
            .collect();
        Self { width: self.width, height: self.height, channels: 1, data }
    }

    /// `1 × C × H × W` tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, self.channels, self.height, self.width], self.data.clone())
    }

    /// Converts batch item `n` of an NCHW tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor<T>, n: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4();
        let item = t.batch_item(n);
        Self::from_clamped(w, h, c, item.into_data())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data = self.data.iter().map(|&v| clamp01(f(v))).collect();
        Self { width: self.width, height: self.height, channels: self.channels, data }
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ImageBuffer<U> {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

pub(crate) fn clamp01<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}
