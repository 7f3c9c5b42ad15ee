use serde::{Deserialize, Serialize};

use super::WaterClass;
use crate::error::{Error, Result};

/// Indices into a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTriplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClsMining {
    /// Positives restricted to the anchor's class and K-means cluster.
    #[default]
    Pgml,
    /// Plain batch-hard mining, clusters ignored.
    Fbml,
}

impl std::str::FromStr for ClsMining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgml" => Ok(ClsMining::Pgml),
            "fbml" | "feature-hard" => Ok(ClsMining::Fbml),
            other => Err(Error::Config(format!("unknown image mining strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for ClsMining {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClsMining::Pgml => "pgml",
            ClsMining::Fbml => "fbml",
        })
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mine_with(emb: &[Vec<f64>], labels: &[WaterClass], same_group: impl Fn(usize, usize) -> bool) -> Vec<ImageTriplet> {
    let mut out = Vec::new();
    for a in 0..emb.len() {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..emb.len() {
            if j == a {
                continue;
            }
            let d = euclidean(&emb[a], &emb[j]);
            if labels[j] == labels[a] {
                if same_group(a, j) && pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        if let (Some((positive, _)), Some((negative, _))) = (pos, neg) {
            out.push(ImageTriplet {
                anchor: a,
                positive,
                negative,
            });
        }
    }
    out
}

/// Every sample is an anchor; the positive is the farthest sample of the
/// same class and cluster, the negative the nearest of the other class.
/// Ties go to the lowest index. Anchors without both are skipped.
pub fn mine_pgml(emb: &[Vec<f64>], labels: &[WaterClass], clusters: &[usize]) -> Vec<ImageTriplet> {
    debug_assert!(emb.len() == labels.len() && emb.len() == clusters.len());
    mine_with(emb, labels, |a, j| clusters[a] == clusters[j])
}

/// Batch-hard mining without the cluster constraint.
pub fn mine_fbml(emb: &[Vec<f64>], labels: &[WaterClass]) -> Vec<ImageTriplet> {
    mine_with(emb, labels, |_, _| true)
}

/// Mean over triplets of `max(d(b,p) - d(b,n) + eps, 0)`; returns the loss,
/// the gradient for every embedding and the hinge signs.
pub fn pgml_loss(emb: &[Vec<f64>], triplets: &[ImageTriplet], eps: f64) -> (f64, Vec<Vec<f64>>, Vec<i8>) {
    let mut grads: Vec<Vec<f64>> = emb.iter().map(|e| vec![0.0; e.len()]).collect();
    let mut kinks = Vec::with_capacity(triplets.len());
    if triplets.is_empty() {
        return (0.0, grads, kinks);
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for t in triplets {
        let (b, p, n) = (&emb[t.anchor], &emb[t.positive], &emb[t.negative]);
        let dbp = euclidean(b, p);
        let dbn = euclidean(b, n);
        let arg = dbp - dbn + eps;
        kinks.push(if arg > 0.0 { 1 } else if arg < 0.0 { -1 } else { 0 });
        if arg <= 0.0 {
            continue;
        }
        total += arg;
        for c in 0..b.len() {
            let u = if dbp > 0.0 { (b[c] - p[c]) / dbp } else { 0.0 };
            let v = if dbn > 0.0 { (b[c] - n[c]) / dbn } else { 0.0 };
            grads[t.anchor][c] += scale * (u - v);
            grads[t.positive][c] -= scale * u;
            grads[t.negative][c] += scale * v;
        }
    }
    (total * scale, grads, kinks)
}

/// Softmax cross-entropy over two logits: loss and logit gradient.
pub fn softmax_ce(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    let loss = -(exps[target] / s).ln();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, e)| e / s - f64::from(u8::from(i == target)))
        .collect();
    (loss, grad)
}
