//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use serde::Serialize;

use super::params::{Gradients, ParamStore};
use super::Network;
use crate::error::{Error, Result};
use crate::rng;

/// Anything that owns parameter stores the checker may perturb.
pub trait Parameterized {
    fn stores(&self) -> Vec<&ParamStore>;
    fn stores_mut(&mut self) -> Vec<&mut ParamStore>;
}

impl Parameterized for Network {
    fn stores(&self) -> Vec<&ParamStore> {
        vec![self.params()]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![self.params_mut()]
    }
}

/// One evaluation of an objective.
#[derive(Clone, Debug, Default)]
pub struct Probe {
    pub loss: f64,
    /// Analytic gradients, one [`Gradients`] per store, when requested.
    pub grads: Option<Vec<Gradients>>,
    /// Signs of every quantity at which the objective has a kink (ReLU
    /// inputs, hinge arguments). A parameter whose perturbation changes the
    /// signature straddles a non-differentiable point and is not compared.
    pub kinks: Vec<i8>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central difference step.
    pub step: f64,
    /// Maximum allowed relative error (strict).
    pub tolerance: f64,
    /// Parameters whose analytic and numeric gradients are both below this
    /// magnitude are skipped.
    pub min_grad: f64,
    /// Check a random subset of at most this many parameters.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-4,
            min_grad: 1e-6,
            max_params: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub store: usize,
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub compared: usize,
    pub excluded: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn finite(p: Probe) -> Result<Probe> {
    if p.loss.is_finite() {
        Ok(p)
    } else {
        Err(Error::NonFinite(format!("loss = {}", p.loss)))
    }
}

/// Compares the objective's analytic gradients with central differences.
///
/// `objective(model, want_grads)` evaluates the loss at the model's current
/// parameters and, when `want_grads` is set, returns analytic gradients.
pub fn check_gradients<M, F>(model: &mut M, mut objective: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&M, bool) -> Result<Probe>,
{
    let base = finite(objective(model, true)?)?;
    let grads = base
        .grads
        .clone()
        .ok_or_else(|| Error::Config("objective returned no gradients".into()))?;

    let mut coords = Vec::new();
    for (s, store) in model.stores().iter().enumerate() {
        for (p, param) in store.iter().enumerate() {
            coords.extend((0..param.len()).map(|i| (s, p, i)));
        }
    }
    if let Some(n) = cfg.max_params {
        if coords.len() > n {
            let mut r = rng::stream(cfg.seed, "gradcheck");
            let mut picked: Vec<usize> = sample(&mut r, coords.len(), n).into_vec();
            picked.sort_unstable();
            coords = picked.into_iter().map(|k| coords[k]).collect();
        }
    }

    let mut checks = Vec::with_capacity(coords.len());
    for (s, p, i) in coords {
        let orig = model.stores()[s].get(p).value[i];
        model.stores_mut()[s].get_mut(p).value[i] = orig + cfg.step;
        let plus = finite(objective(model, false)?)?;
        model.stores_mut()[s].get_mut(p).value[i] = orig - cfg.step;
        let minus = finite(objective(model, false)?)?;
        model.stores_mut()[s].get_mut(p).value[i] = orig;

        let numeric = (plus.loss - minus.loss) / (2.0 * cfg.step);
        let analytic = grads[s].0[p][i];
        let kink = plus.kinks != base.kinks || minus.kinks != base.kinks;
        let scale = analytic.abs().max(numeric.abs());
        let excluded = kink || scale <= cfg.min_grad;
        let rel_error = if excluded { 0.0 } else { (analytic - numeric).abs() / scale };
        checks.push(ParamCheck {
            store: s,
            param: p,
            index: i,
            analytic,
            numeric,
            rel_error,
            excluded,
        });
    }
    let compared = checks.iter().filter(|c| !c.excluded).count();
    let max_rel_error = checks
        .iter()
        .filter(|c| !c.excluded)
        .map(|c| c.rel_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        excluded: checks.len() - compared,
        compared,
        passed: compared > 0 && max_rel_error < cfg.tolerance,
        max_rel_error,
        tolerance: cfg.tolerance,
        checks,
    })
}
