//! Finite-difference verification of both models under their training
//! losses, on small random instances.

use rand::Rng as _;
use serde::Serialize;

use crate::autonet::{check_gradients, GradCheckConfig, LayerSpec, Network, ParamStore, Parameterized, Probe, Tensor};
use crate::clsmodel::{cls_batch, kmeans, mine_pgml, BatchMining, ClsTrainConfig, EmbedNetToy, WaterClass};
use crate::error::Result;
use crate::raster::LabelMask;
use crate::rng;
use crate::segmodel::{seg_batch, PointRef, PointTriplet, SegNetToy, SegTrainConfig, FEATURE_STRIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Segmentation network, focal loss only.
    Focal,
    /// Segmentation network, focal plus point triplet loss.
    Plml,
    /// Embedding network, cluster-guided triplet loss.
    Pgml,
    /// Embedding network with a softmax head.
    Ce,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Focal, Objective::Plml, Objective::Pgml, Objective::Ce];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seeds: u64,
    pub check: GradCheckConfig,
    /// Side of the random segmentation inputs.
    pub seg_size: usize,
    pub seg_batch: usize,
    pub cls_batch: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seeds: 20,
            check: GradCheckConfig {
                max_params: Some(48),
                ..Default::default()
            },
            seg_size: 16,
            seg_batch: 2,
            cls_batch: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub objective: Objective,
    pub seed: u64,
    pub max_rel_error: f64,
    pub compared: usize,
    pub excluded: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub max_rel_error: f64,
    pub compared: usize,
    pub tolerance: f64,
    pub step: f64,
    pub passed: bool,
}

fn random_tensor(c: usize, h: usize, w: usize, r: &mut rng::Rng) -> Tensor {
    let data = (0..c * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(c, h, w, data).expect("consistent shape")
}

fn random_mask(h: usize, w: usize, r: &mut rng::Rng) -> LabelMask {
    let values = (0..h * w).map(|_| u8::from(r.random_bool(0.4))).collect();
    LabelMask::new(w, h, 2, values).expect("binary values")
}

fn seg_check(obj: Objective, seed: u64, cfg: &SuiteConfig) -> Result<crate::autonet::GradCheckReport> {
    let mut r = rng::stream(seed, "verify");
    let mut model = SegNetToy::new(3, 8, &mut r)?;
    let s = cfg.seg_size;
    let batch: Vec<(Tensor, LabelMask)> =
        (0..cfg.seg_batch).map(|_| (random_tensor(3, s, s, &mut r), random_mask(s, s, &mut r))).collect();
    let cells = s / FEATURE_STRIDE;
    let point = |r: &mut rng::Rng| PointRef {
        image: r.random_range(0..cfg.seg_batch),
        row: r.random_range(0..cells) * FEATURE_STRIDE,
        col: r.random_range(0..cells) * FEATURE_STRIDE,
    };
    let triplets: Vec<PointTriplet> = (0..6)
        .map(|_| PointTriplet {
            anchor: point(&mut r),
            positive: point(&mut r),
            negative: point(&mut r),
        })
        .collect();
    let train = SegTrainConfig {
        plml: obj == Objective::Plml,
        loss_weight_sigma: 1.0,
        margin_beta: 0.5,
        ..Default::default()
    };
    check_gradients(
        &mut model,
        |m, want| {
            let out = seg_batch(m, &batch, &train, &mut |_, _| Ok(triplets.clone()), want)?;
            Ok(Probe {
                loss: out.total,
                grads: out.grads.map(Vec::from),
                kinks: out.kinks,
            })
        },
        &GradCheckConfig { seed, ..cfg.check },
    )
}

/// Embedding network plus optional head, as one parameterised model.
struct ClsPair {
    embed: EmbedNetToy,
    head: Option<Network>,
}

impl Parameterized for ClsPair {
    fn stores(&self) -> Vec<&ParamStore> {
        let mut s = vec![self.embed.net.params()];
        s.extend(self.head.as_ref().map(Network::params));
        s
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        let mut s = vec![self.embed.net.params_mut()];
        s.extend(self.head.as_mut().map(Network::params_mut));
        s
    }
}

fn cls_check(obj: Objective, seed: u64, cfg: &SuiteConfig) -> Result<crate::autonet::GradCheckReport> {
    let mut r = rng::stream(seed, "verify");
    let embed = EmbedNetToy::new(3, 8, 16, &mut r)?;
    let head = match obj {
        Objective::Ce => Some(Network::new(vec![LayerSpec::dense(8, 2)], &mut r)?),
        _ => None,
    };
    let batch: Vec<(Tensor, WaterClass)> = (0..cfg.cls_batch)
        .map(|i| {
            let class = if i % 2 == 0 { WaterClass::Dam } else { WaterClass::Natural };
            (random_tensor(3, 16, 16, &mut r), class)
        })
        .collect();
    let train = ClsTrainConfig {
        margin_epsilon: 0.5,
        ..Default::default()
    };
    // triplets are mined once at the base point and then held fixed
    let embs: Vec<Vec<f64>> =
        batch.iter().map(|(x, _)| Ok(embed.forward(x)?.0.vector)).collect::<Result<_>>()?;
    let labels: Vec<WaterClass> = batch.iter().map(|(_, l)| *l).collect();
    let clusters = kmeans(&embs, 2, train.kmeans_iters, &mut rng::stream(seed, rng::KMEANS))?;
    let triplets = mine_pgml(&embs, &labels, &clusters.labels);
    let mut model = ClsPair { embed, head };
    check_gradients(
        &mut model,
        |m, want| {
            let out = cls_batch(&m.embed, m.head.as_ref(), &batch, &train, BatchMining::Fixed(&triplets), want)?;
            Ok(Probe {
                loss: out.loss,
                grads: out.grads.map(|(e, h)| std::iter::once(e).chain(h).collect()),
                kinks: out.kinks,
            })
        },
        &GradCheckConfig { seed, ..cfg.check },
    )
}

/// Runs every objective over seeds `0..cfg.seeds`.
pub fn run_suite(objectives: &[Objective], cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut entries = Vec::new();
    for &obj in objectives {
        for seed in 0..cfg.seeds {
            let report = match obj {
                Objective::Focal | Objective::Plml => seg_check(obj, seed, cfg)?,
                Objective::Pgml | Objective::Ce => cls_check(obj, seed, cfg)?,
            };
            entries.push(SuiteEntry {
                objective: obj,
                seed,
                max_rel_error: report.max_rel_error,
                compared: report.compared,
                excluded: report.excluded,
                passed: report.passed,
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(SuiteReport {
        passed: entries.iter().all(|e| e.passed && e.compared > 0),
        compared: entries.iter().map(|e| e.compared).sum(),
        max_rel_error,
        tolerance: cfg.check.tolerance,
        step: cfg.check.step,
        entries,
    })
}
