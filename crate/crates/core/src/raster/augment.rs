use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{LabelMask, Raster};
use crate::error::{Error, Result};
use crate::rng;

/// Magnitudes for the photometric part of augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Brightness shift is drawn uniformly from `[-brightness, brightness]`.
    pub brightness: f64,
    /// Per-channel shift is drawn uniformly from `[-channel_shift, channel_shift]`.
    pub channel_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            brightness: 0.2,
            channel_shift: 0.1,
        }
    }
}

/// One realisation of the random augmentation.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AugmentDraws {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
    pub brightness: f64,
    pub channel_shift: Vec<f64>,
}

impl AugmentDraws {
    pub fn sample(cfg: &AugmentConfig, channels: usize, rng: &mut rng::Rng) -> Self {
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        let quarter_turns = rng.random_range(0..4u8);
        let brightness = if cfg.brightness > 0.0 {
            rng.random_range(-cfg.brightness..=cfg.brightness)
        } else {
            0.0
        };
        let channel_shift = (0..channels)
            .map(|_| {
                if cfg.channel_shift > 0.0 {
                    rng.random_range(-cfg.channel_shift..=cfg.channel_shift)
                } else {
                    0.0
                }
            })
            .collect();
        AugmentDraws {
            hflip,
            vflip,
            quarter_turns,
            brightness,
            channel_shift,
        }
    }
}

/// Source pixel `(row, col)` in the input for output pixel `(r, c)`.
fn source_coords(
    r: usize,
    c: usize,
    out_w: usize,
    out_h: usize,
    draws: &AugmentDraws,
) -> (usize, usize) {
    // undo flips (applied after rotation) first
    let r = if draws.vflip { out_h - 1 - r } else { r };
    let c = if draws.hflip { out_w - 1 - c } else { c };
    // then undo the rotation; (in_h, in_w) are the pre-rotation dimensions
    match draws.quarter_turns % 4 {
        0 => (r, c),
        // ccw 90: out(r, c) = in(c, in_w - 1 - r), in_w = out_h
        1 => (c, out_h - 1 - r),
        2 => (out_h - 1 - r, out_w - 1 - c),
        // ccw 270: out(r, c) = in(in_h - 1 - c, r), in_h = out_w
        _ => (out_w - 1 - c, r),
    }
}

/// Applies fixed draws. The mask receives only the geometric transforms;
/// photometric shifts are clamped into `[0, 1]`.
pub fn apply_augment(r: &Raster, m: &LabelMask, draws: &AugmentDraws) -> Result<(Raster, LabelMask)> {
    if r.width() != m.width() || r.height() != m.height() {
        return Err(Error::DimensionMismatch(format!(
            "raster {}x{} vs mask {}x{}",
            r.width(),
            r.height(),
            m.width(),
            m.height()
        )));
    }
    let (out_w, out_h) = if draws.quarter_turns % 2 == 1 {
        (r.height(), r.width())
    } else {
        (r.width(), r.height())
    };
    let ch = r.channels();
    let mut data = vec![0.0; out_w * out_h * ch];
    let mut values = vec![0u8; out_w * out_h];
    for row in 0..out_h {
        for col in 0..out_w {
            let (sr, sc) = source_coords(row, col, out_w, out_h, draws);
            values[row * out_w + col] = m.get(sr, sc);
            for k in 0..ch {
                let shift = draws.brightness + draws.channel_shift.get(k).copied().unwrap_or(0.0);
                data[(row * out_w + col) * ch + k] = (r.get(sr, sc, k) + shift).clamp(0.0, 1.0);
            }
        }
    }
    Ok((
        Raster::new(out_w, out_h, ch, data)?,
        LabelMask::new(out_w, out_h, m.arity(), values)?,
    ))
}

/// Random flips, quarter-turn rotation, brightness and channel shift.
pub fn augment(
    r: &Raster,
    m: &LabelMask,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<(Raster, LabelMask)> {
    let mut rng = rng::stream(seed, rng::AUGMENT);
    let draws = AugmentDraws::sample(cfg, r.channels(), &mut rng);
    apply_augment(r, m, &draws)
}
