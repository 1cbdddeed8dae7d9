//! Core value types shared by every stage of the pipeline.
//!
//! All grids are stored row-major with channels interleaved (`H × W × C`),
//! which is also the on-disk order of `.flo` files and 8-bit images.

mod flo;
mod image_io;
mod resize;

pub use flo::{flo_read, flo_write};
pub use image_io::{load_image, save_image};
pub use resize::{resize_bilinear, resize_interleaved, resize_interleaved_adjoint, GridField};
pub(crate) use resize::scale_flow_in_place;

use crate::error::{Error, Result};

fn check_finite(data: &[f32], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("{what}: non-finite value at index {i}"))),
        None => Ok(()),
    }
}

fn check_len(len: usize, h: usize, w: usize, c: usize, what: &str) -> Result<()> {
    if len != h * w * c {
        return Err(Error::arg(format!(
            "{what}: buffer holds {len} values, expected {h}x{w}x{c}"
        )));
    }
    Ok(())
}

/// A single frame with intensities normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub const MIN_DIM: usize = 8;

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height < Self::MIN_DIM || width < Self::MIN_DIM {
            return Err(Error::arg(format!(
                "image must be at least {m}x{m}, got {height}x{width}",
                m = Self::MIN_DIM
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!("image channels must be 1 or 3, got {channels}")));
        }
        check_len(data.len(), height, width, channels, "image")?;
        check_finite(&data, "image")?;
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Quantize to 8-bit codes (round to nearest, saturating).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_code(v)).collect()
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, codes: &[u8]) -> Result<Self> {
        let data = codes.iter().map(|&c| c as f32 / 255.0).collect();
        Image::new(height, width, channels, data)
    }
}

#[inline]
pub(crate) fn to_code(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Two frames stacked along the channel axis: `H × W × 2C`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImagePair {
    pub fn from_frames(first: &Image, second: &Image) -> Result<Self> {
        if (first.height, first.width, first.channels)
            != (second.height, second.width, second.channels)
        {
            return Err(Error::arg(format!(
                "frame shapes differ: {}x{}x{} vs {}x{}x{}",
                first.height,
                first.width,
                first.channels,
                second.height,
                second.width,
                second.channels
            )));
        }
        let c = first.channels;
        let mut data = Vec::with_capacity(first.data.len() * 2);
        for (a, b) in first.data.chunks_exact(c).zip(second.data.chunks_exact(c)) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(ImagePair {
            height: first.height,
            width: first.width,
            channels: c,
            data,
        })
    }

    /// Build directly from a stacked `H × W × 2C` buffer.
    pub fn from_stacked(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!("frame channels must be 1 or 3, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::arg("image pair must be non-empty"));
        }
        check_len(data.len(), height, width, 2 * channels, "image pair")?;
        check_finite(&data, "image pair")?;
        Ok(ImagePair {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    /// Channels per frame (`C`); the stacked tensor has `2C`.
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn stacked_channels(&self) -> usize {
        2 * self.channels
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Extract frame 0 or 1.
    pub fn frame(&self, index: usize) -> Image {
        assert!(index < 2, "frame index must be 0 or 1");
        let c = self.channels;
        let data = self
            .data
            .chunks_exact(2 * c)
            .flat_map(|px| px[index * c..(index + 1) * c].iter().copied())
            .collect();
        Image {
            height: self.height,
            width: self.width,
            channels: c,
            data,
        }
    }

    /// Copy a rectangular window (rows `y0..y0+h`, cols `x0..x0+w`).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImagePair> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::arg(format!(
                "crop window {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let cc = 2 * self.channels;
        let mut data = Vec::with_capacity(h * w * cc);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * cc;
            data.extend_from_slice(&self.data[row..row + w * cc]);
        }
        Ok(ImagePair {
            height: h,
            width: w,
            channels: self.channels,
            data,
        })
    }
}

/// Per-pixel displacement `(u, v)` in pixels/frame, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("flow field must be non-empty"));
        }
        check_len(data.len(), height, width, 2, "flow field")?;
        check_finite(&data, "flow field")?;
        Ok(FlowField {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        let data = std::iter::repeat_n([u, v], height * width).flatten().collect();
        FlowField {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, u: f32, v: f32) {
        let i = 2 * (y * self.width + x);
        self.data[i] = u;
        self.data[i + 1] = v;
    }

    /// Per-pixel Euclidean magnitude.
    pub fn magnitudes(&self) -> Vec<f32> {
        self.data
            .chunks_exact(2)
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .collect()
    }

    pub fn max_magnitude(&self) -> f32 {
        self.magnitudes().into_iter().fold(0.0, f32::max)
    }

    /// Add a constant offset to every vector.
    pub fn offset(&self, du: f32, dv: f32) -> FlowField {
        let data = self
            .data
            .chunks_exact(2)
            .flat_map(|p| [p[0] + du, p[1] + dv])
            .collect();
        FlowField {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Per-pixel log-uncertainty.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl UncertaintyField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("uncertainty field must be non-empty"));
        }
        check_len(data.len(), height, width, 1, "uncertainty field")?;
        check_finite(&data, "uncertainty field")?;
        Ok(UncertaintyField {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        UncertaintyField {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Boolean per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::arg(format!(
                "mask: buffer holds {} values, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Mask {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_shapes() {
        assert!(Image::new(4, 8, 1, vec![0.0; 32]).is_err());
        assert!(Image::new(8, 8, 2, vec![0.0; 128]).is_err());
        assert!(Image::new(8, 8, 1, vec![0.0; 63]).is_err());
        let mut data = vec![0.0; 64];
        data[10] = f32::NAN;
        assert!(Image::new(8, 8, 1, data).is_err());
    }

    #[test]
    fn pair_stacks_along_channels() {
        let a = Image::new(8, 8, 3, vec![0.25; 192]).unwrap();
        let b = Image::new(8, 8, 3, vec![0.75; 192]).unwrap();
        let pair = ImagePair::from_frames(&a, &b).unwrap();
        assert_eq!(pair.stacked_channels(), 6);
        assert_eq!(&pair.data()[..6], &[0.25, 0.25, 0.25, 0.75, 0.75, 0.75]);
        assert_eq!(pair.frame(0), a);
        assert_eq!(pair.frame(1), b);
    }

    #[test]
    fn pair_rejects_mismatched_frames() {
        let a = Image::new(8, 8, 1, vec![0.0; 64]).unwrap();
        let b = Image::new(8, 16, 1, vec![0.0; 128]).unwrap();
        assert!(ImagePair::from_frames(&a, &b).is_err());
    }

    #[test]
    fn crop_copies_window() {
        let data: Vec<f32> = (0..8 * 8 * 2).map(|i| i as f32).collect();
        let pair = ImagePair::from_stacked(8, 8, 1, data).unwrap();
        let c = pair.crop(2, 4, 3, 2).unwrap();
        assert_eq!(c.height(), 3);
        assert_eq!(&c.data()[..4], &pair.data()[(2 * 8 + 4) * 2..(2 * 8 + 4) * 2 + 4]);
        assert!(pair.crop(6, 0, 3, 2).is_err());
    }
}
