use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autonet::Tensor;
use crate::error::{Error, Result};
use crate::raster::LabelMask;
use crate::rng::Rng;

/// Pixel-to-feature-cell stride of the segmentation encoder.
pub const FEATURE_STRIDE: usize = 4;

/// Per-image pixel pools, each in raster order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletPools {
    /// Correctly predicted water.
    pub anchors: Vec<(usize, usize)>,
    /// Missed water (false negatives).
    pub positives: Vec<(usize, usize)>,
    /// Land predicted as water (false positives).
    pub negatives: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointRef {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointTriplet {
    pub anchor: PointRef,
    pub positive: PointRef,
    pub negative: PointRef,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MiningStrategy {
    /// Positive and negative drawn uniformly from the batch-merged pools.
    #[default]
    CrossImageRandom,
    /// Positive and negative drawn from the anchor's own image.
    WithinImage,
    /// Farthest positive and nearest negative in point-feature space, over
    /// the batch-merged pools.
    FeatureHard,
}

impl std::str::FromStr for MiningStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-image-random" | "cross-image" => Ok(MiningStrategy::CrossImageRandom),
            "within-image" => Ok(MiningStrategy::WithinImage),
            "feature-hard" => Ok(MiningStrategy::FeatureHard),
            other => Err(Error::Config(format!("unknown point mining strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for MiningStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MiningStrategy::CrossImageRandom => "cross-image-random",
            MiningStrategy::WithinImage => "within-image",
            MiningStrategy::FeatureHard => "feature-hard",
        })
    }
}

pub fn build_pools(pred: &LabelMask, gt: &LabelMask) -> Result<TripletPools> {
    for m in [pred, gt] {
        if m.arity() != 2 {
            return Err(Error::ArityMismatch {
                value: m.arity(),
                index: 0,
                arity: 2,
            });
        }
    }
    if !pred.same_shape(gt) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let w = gt.width();
    let mut pools = TripletPools::default();
    for (i, (&p, &g)) in pred.values().iter().zip(gt.values()).enumerate() {
        let rc = (i / w, i % w);
        match (g, p) {
            (1, 1) => pools.anchors.push(rc),
            (1, 0) => pools.positives.push(rc),
            (0, 1) => pools.negatives.push(rc),
            _ => {}
        }
    }
    Ok(pools)
}

fn feature_of<'a>(features: &'a [Tensor], p: PointRef) -> Vec<f64> {
    features[p.image].cell(p.row / FEATURE_STRIDE, p.col / FEATURE_STRIDE)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Samples up to `k` anchors per image and pairs each with a positive and a
/// negative according to `strategy`. Anchors whose required pool is empty
/// are skipped. `features` is required for [`MiningStrategy::FeatureHard`].
pub fn mine_triplets(
    pools: &[TripletPools],
    k: usize,
    strategy: MiningStrategy,
    features: Option<&[Tensor]>,
    rng: &mut Rng,
) -> Result<Vec<PointTriplet>> {
    let tag = |image: usize, (row, col): (usize, usize)| PointRef { image, row, col };
    let merged = |pick: fn(&TripletPools) -> &Vec<(usize, usize)>| -> Vec<PointRef> {
        pools
            .iter()
            .enumerate()
            .flat_map(|(i, p)| pick(p).iter().map(move |&rc| tag(i, rc)))
            .collect()
    };
    let all_pos = merged(|p| &p.positives);
    let all_neg = merged(|p| &p.negatives);
    let features = match (strategy, features) {
        (MiningStrategy::FeatureHard, None) => {
            return Err(Error::Config("feature-hard mining needs point features".into()))
        }
        (_, f) => f,
    };

    let mut out = Vec::new();
    for (img, p) in pools.iter().enumerate() {
        let m = k.min(p.anchors.len());
        if m == 0 {
            continue;
        }
        let mut picked = sample(rng, p.anchors.len(), m).into_vec();
        picked.sort_unstable();
        let (own_pos, own_neg);
        let (pos_pool, neg_pool): (&[PointRef], &[PointRef]) = match strategy {
            MiningStrategy::WithinImage => {
                own_pos = p.positives.iter().map(|&rc| tag(img, rc)).collect::<Vec<_>>();
                own_neg = p.negatives.iter().map(|&rc| tag(img, rc)).collect::<Vec<_>>();
                (&own_pos, &own_neg)
            }
            _ => (&all_pos, &all_neg),
        };
        for a in picked {
            let anchor = tag(img, p.anchors[a]);
            if pos_pool.is_empty() || neg_pool.is_empty() {
                continue;
            }
            let (positive, negative) = match strategy {
                MiningStrategy::FeatureHard => {
                    let f = features.expect("checked above");
                    let fa = feature_of(f, anchor);
                    let dist = |q: &PointRef| euclid(&fa, &feature_of(f, *q));
                    let mut best_p = (0, dist(&pos_pool[0]));
                    for (i, q) in pos_pool.iter().enumerate().skip(1) {
                        let d = dist(q);
                        if d > best_p.1 {
                            best_p = (i, d);
                        }
                    }
                    let mut best_n = (0, dist(&neg_pool[0]));
                    for (i, q) in neg_pool.iter().enumerate().skip(1) {
                        let d = dist(q);
                        if d < best_n.1 {
                            best_n = (i, d);
                        }
                    }
                    (pos_pool[best_p.0], neg_pool[best_n.0])
                }
                _ => (
                    pos_pool[rng.random_range(0..pos_pool.len())],
                    neg_pool[rng.random_range(0..neg_pool.len())],
                ),
            };
            out.push(PointTriplet {
                anchor,
                positive,
                negative,
            });
        }
    }
    Ok(out)
}

/// Point-level triplet loss: the mean hinge `max(d(a,p) - d(a,n) + beta, 0)`
/// over all triplets, with Euclidean `d` on point features. Returns the loss,
/// its gradient with respect to each image's feature map and the hinge
/// signs (for gradient checking). No triplets gives zero.
pub fn plml_loss(features: &[Tensor], triplets: &[PointTriplet], beta: f64) -> (f64, Vec<Tensor>, Vec<i8>) {
    let mut grads: Vec<Tensor> = features
        .iter()
        .map(|f| Tensor::zeros(f.channels, f.height, f.width))
        .collect();
    let mut kinks = Vec::with_capacity(triplets.len());
    if triplets.is_empty() {
        return (0.0, grads, kinks);
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for t in triplets {
        let fa = feature_of(features, t.anchor);
        let fp = feature_of(features, t.positive);
        let fn_ = feature_of(features, t.negative);
        let dap = euclid(&fa, &fp);
        let dan = euclid(&fa, &fn_);
        let arg = dap - dan + beta;
        kinks.push(if arg > 0.0 { 1 } else if arg < 0.0 { -1 } else { 0 });
        if arg <= 0.0 {
            continue;
        }
        total += arg;
        let mut add = |p: PointRef, coef: f64, diff: &dyn Fn(usize) -> f64| {
            let g = &mut grads[p.image];
            let (y, x) = (p.row / FEATURE_STRIDE, p.col / FEATURE_STRIDE);
            for c in 0..g.channels {
                let idx = (c * g.height + y) * g.width + x;
                g.data[idx] += coef * diff(c);
            }
        };
        // d||u||/du = u/||u||, zero at the origin
        if dap > 0.0 {
            let u = |c: usize| (fa[c] - fp[c]) / dap;
            add(t.anchor, scale, &u);
            add(t.positive, -scale, &u);
        }
        if dan > 0.0 {
            let v = |c: usize| (fa[c] - fn_[c]) / dan;
            add(t.anchor, -scale, &v);
            add(t.negative, scale, &v);
        }
    }
    (total * scale, grads, kinks)
}

/// `L_S + sigma * L_M`.
pub fn seg_total_loss(focal: f64, triplet: f64, sigma: f64) -> f64 {
    focal + sigma * triplet
}
