use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelMask;

pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("focal alpha in (0,1) and gamma >= 0 required: {self:?}")));
        }
        Ok(())
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Focal loss of one pixel with water probability `p` and label `y`.
pub fn focal_point(y: bool, p: f64, cfg: &FocalConfig) -> f64 {
    let p = clamp_prob(p);
    if y {
        -cfg.alpha * (1.0 - p).powf(cfg.gamma) * p.ln()
    } else {
        -(1.0 - cfg.alpha) * p.powf(cfg.gamma) * (1.0 - p).ln()
    }
}

/// Derivative of [`focal_point`] with respect to the pre-sigmoid logit.
/// Zero where the probability is clamped.
pub fn focal_point_logit_grad(y: bool, p: f64, cfg: &FocalConfig) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    let g = cfg.gamma;
    if y {
        cfg.alpha * (1.0 - p).powf(g) * (g * p * p.ln() - (1.0 - p))
    } else {
        (1.0 - cfg.alpha) * p.powf(g) * (p - g * (1.0 - p) * (1.0 - p).ln())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check(n: usize, gt: &LabelMask) -> Result<()> {
    if gt.arity() != 2 {
        return Err(Error::ArityMismatch {
            value: gt.arity(),
            index: 0,
            arity: 2,
        });
    }
    if n != gt.values().len() {
        return Err(Error::DimensionMismatch(format!("{n} predictions vs {} mask pixels", gt.values().len())));
    }
    Ok(())
}

/// Mean focal loss over the pixels of one image, with its gradient with
/// respect to the probabilities.
pub fn focal_loss(probs: &[f64], gt: &LabelMask, cfg: &FocalConfig) -> Result<(f64, Vec<f64>)> {
    check(probs.len(), gt)?;
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(gt.values()) {
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("probability {p}")));
        }
        let y = y == 1;
        loss += focal_point(y, p, cfg);
        let g = if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
            0.0
        } else if y {
            let (a, g) = (cfg.alpha, cfg.gamma);
            a * (g * (1.0 - p).powf(g - 1.0) * p.ln() - (1.0 - p).powf(g) / p)
        } else {
            let (a, g) = (cfg.alpha, cfg.gamma);
            -(1.0 - a) * (g * p.powf(g - 1.0) * (1.0 - p).ln() - p.powf(g) / (1.0 - p))
        };
        grad.push(g / n);
    }
    Ok((loss / n, grad))
}

/// Mean focal loss of one image from logits, with the gradient with respect
/// to the logits.
pub fn focal_loss_logits(logits: &[f64], gt: &LabelMask, cfg: &FocalConfig) -> Result<(f64, Vec<f64>)> {
    check(logits.len(), gt)?;
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(gt.values()) {
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("logit {z}")));
        }
        let p = sigmoid(z);
        loss += focal_point(y == 1, p, cfg);
        grad.push(focal_point_logit_grad(y == 1, p, cfg) / n);
    }
    Ok((loss / n, grad))
}

/// Batch segmentation loss: mean over images of the per-image mean.
pub fn focal_loss_batch(probs: &[Vec<f64>], gts: &[LabelMask], cfg: &FocalConfig) -> Result<f64> {
    if probs.len() != gts.len() || probs.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} images vs {} masks", probs.len(), gts.len())));
    }
    let mut total = 0.0;
    for (p, g) in probs.iter().zip(gts) {
        total += focal_loss(p, g, cfg)?.0;
    }
    Ok(total / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_confidence_is_free() {
        assert!(focal_point(true, 1.0, &FocalConfig::default()) < 1e-8);
    }

    #[test]
    fn reference_values() {
        let cfg = FocalConfig::default();
        assert!((focal_point(true, 0.9, &cfg) - 2.634_012_891_445_657e-4).abs() < 1e-15);
        assert!((focal_point(false, 0.9, &cfg) - 1.398_820_443_993_883).abs() < 1e-12);
    }

    #[test]
    fn modulating_factor_reduces_hundredfold() {
        let cfg = FocalConfig::default();
        let ratio = focal_point(true, 0.9, &cfg) / (-cfg.alpha * 0.9f64.ln());
        assert!((ratio - 0.01).abs() < 1e-12);
    }

    #[test]
    fn prob_and_logit_gradients_agree() {
        let cfg = FocalConfig { alpha: 0.3, gamma: 1.5 };
        let gt = LabelMask::new(3, 1, 2, vec![1, 0, 1]).unwrap();
        let z = [0.3, -1.2, 2.0];
        let p: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
        let (_, gp) = focal_loss(&p, &gt, &cfg).unwrap();
        let (_, gz) = focal_loss_logits(&z, &gt, &cfg).unwrap();
        for i in 0..3 {
            assert!((gp[i] * p[i] * (1.0 - p[i]) - gz[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_nan_and_wrong_arity() {
        let gt = LabelMask::zeros(1, 1, 2);
        assert!(matches!(focal_loss(&[f64::NAN], &gt, &FocalConfig::default()), Err(Error::NonFinite(_))));
        let gt3 = LabelMask::zeros(1, 1, 3);
        assert!(focal_loss(&[0.5], &gt3, &FocalConfig::default()).is_err());
    }
}
