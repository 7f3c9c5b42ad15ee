//! Raster and label-mask data model, PNM file I/O, synthetic scenes and
//! augmentation.

mod augment;
mod dataset;
mod io;
mod synth;

pub use augment::{augment, apply_augment, AugmentConfig, AugmentDraws};
pub use dataset::{
    build_dataset, load_cls_split, load_split, ClsEntry, DatasetCounts, DatasetManifest,
    ManifestEntry, Split,
};
pub use io::{read_mask, read_mask_with_arity, read_raster, write_mask, write_raster};
pub use synth::{
    generate_scene, generate_scene_with_bodies, BodyKind, BodyRecord, SceneSpec, ShapeMix,
    MIN_BODY_AREA,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive pixel bounding box `(r0, c0)`–`(r1, c1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl BBox {
    pub fn new(r0: usize, c0: usize, r1: usize, c1: usize) -> Self {
        debug_assert!(r0 <= r1 && c0 <= c1);
        BBox { r0, c0, r1, c1 }
    }

    pub fn height(&self) -> usize {
        self.r1 - self.r0 + 1
    }

    pub fn width(&self) -> usize {
        self.c1 - self.c0 + 1
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.r0 <= other.r0 && self.c0 <= other.c0 && self.r1 >= other.r1 && self.c1 >= other.c1
    }

    /// Tight box of a non-empty pixel set.
    pub fn of_pixels(pixels: &[(usize, usize)]) -> Option<BBox> {
        let (&(r, c), rest) = pixels.split_first()?;
        let mut b = BBox::new(r, c, r, c);
        for &(r, c) in rest {
            b.r0 = b.r0.min(r);
            b.c0 = b.c0.min(c);
            b.r1 = b.r1.max(r);
            b.c1 = b.c1.max(c);
        }
        Some(b)
    }
}

/// Multi-channel image with values in `[0, 1]`, stored row-major with
/// interleaved channels (`data[(row * width + col) * channels + ch]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "raster {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!(
                "raster value {} at index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![value.clamp(0.0, 1.0); width * height * channels],
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// Writes a value, clamping into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value.clamp(0.0, 1.0);
    }

    /// Channel-planar copy (`[ch][row][col]`), the layout the networks consume.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + i] = v;
            }
        }
        out
    }

    /// Rounds every value to the nearest multiple of 1/255, the precision of
    /// the on-disk format.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (*v * 255.0).round() / 255.0;
        }
    }

    pub fn crop(&self, bbox: &BBox) -> Result<Raster> {
        if bbox.r1 >= self.height || bbox.c1 >= self.width {
            return Err(Error::DimensionMismatch(format!(
                "crop {bbox:?} outside {}x{} raster",
                self.width, self.height
            )));
        }
        let (w, h) = (bbox.width(), bbox.height());
        let mut data = Vec::with_capacity(w * h * self.channels);
        for r in bbox.r0..=bbox.r1 {
            let start = (r * self.width + bbox.c0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Ok(Raster {
            width: w,
            height: h,
            channels: self.channels,
            data,
        })
    }

    /// Bilinear resize with half-pixel centers and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut data = vec![0.0; width * height * self.channels];
        for r in 0..height {
            let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for c in 0..width {
                let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                for ch in 0..self.channels {
                    let top = self.get(y0, x0, ch) * (1.0 - wx) + self.get(y0, x1, ch) * wx;
                    let bot = self.get(y1, x0, ch) * (1.0 - wx) + self.get(y1, x1, ch) * wx;
                    data[(r * width + c) * self.channels + ch] =
                        (top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0);
                }
            }
        }
        Raster {
            width,
            height,
            channels: self.channels,
            data,
        }
    }
}

/// Per-pixel class labels. Arity 2 is land/water, arity 3 is
/// land/natural/dam.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    arity: u8,
    values: Vec<u8>,
}

pub const LAND: u8 = 0;
pub const WATER: u8 = 1;
pub const NATURAL: u8 = 1;
pub const DAM: u8 = 2;

impl LabelMask {
    pub fn new(width: usize, height: usize, arity: u8, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if !(2..=3).contains(&arity) {
            return Err(Error::Data(format!("unsupported mask arity {arity}")));
        }
        if let Some(index) = values.iter().position(|&v| v >= arity) {
            return Err(Error::ArityMismatch {
                value: values[index],
                index,
                arity,
            });
        }
        Ok(LabelMask {
            width,
            height,
            arity,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize, arity: u8) -> Self {
        LabelMask {
            width,
            height,
            arity,
            values: vec![0; width * height],
        }
    }

    /// Builds an arity-2 mask with the given water pixels.
    pub fn from_water_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let mut m = LabelMask::zeros(width, height, 2);
        for &(r, c) in pixels {
            m.set(r, c, WATER);
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn arity(&self) -> u8 {
        self.arity
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        assert!(value < self.arity, "label {value} outside arity {}", self.arity);
        self.values[row * self.width + col] = value;
    }

    /// Collapses any water class to 1 (arity 2).
    pub fn to_binary(&self) -> LabelMask {
        LabelMask {
            width: self.width,
            height: self.height,
            arity: 2,
            values: self.values.iter().map(|&v| u8::from(v > 0)).collect(),
        }
    }

    pub fn count(&self, class: u8) -> usize {
        self.values.iter().filter(|&&v| v == class).count()
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_rejects_out_of_range() {
        assert!(Raster::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Raster::new(2, 1, 1, vec![0.5]).is_err());
    }

    #[test]
    fn mask_rejects_value_beyond_arity() {
        let err = LabelMask::new(2, 1, 2, vec![0, 2]).unwrap_err();
        assert!(matches!(err, Error::ArityMismatch { value: 2, index: 1, arity: 2 }));
    }

    #[test]
    fn bilinear_resize_of_constant_is_constant() {
        let r = Raster::filled(7, 5, 3, 0.4);
        let out = r.resize_bilinear(32, 32);
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn crop_extracts_window() {
        let data: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let r = Raster::new(4, 4, 1, data).unwrap();
        let c = r.crop(&BBox::new(1, 1, 2, 3)).unwrap();
        assert_eq!(c.width(), 3);
        assert_eq!(c.height(), 2);
        assert_eq!(c.get(0, 0, 0), 5.0 / 16.0);
        assert_eq!(c.get(1, 2, 0), 11.0 / 16.0);
        assert!(r.crop(&BBox::new(0, 0, 4, 0)).is_err());
    }

    #[test]
    fn planar_layout() {
        let r = Raster::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(r.to_planar(), vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
