use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterAssignment {
    /// Cluster id of every sample, in `[0, Z)`.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after every assignment step.
    pub objective: Vec<f64>,
    /// True when the last step left every assignment unchanged.
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid of every point (lowest index on ties) and the objective.
fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut labels = Vec::with_capacity(points.len());
    let mut total = 0.0;
    for p in points {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        labels.push(best.0);
        total += best.1;
    }
    (labels, total)
}

/// Distance-weighted seeding: first centre uniform, later ones with
/// probability proportional to the squared distance to the nearest centre.
fn seed_centroids(points: &[Vec<f64>], z: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < z {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(p, &points[pick]));
        }
    }
    centroids
}

/// Lloyd's algorithm with distance-weighted seeding, at most `iters`
/// centroid updates, early stop once assignments repeat.
///
/// A cluster left empty by an update is re-seeded at the point farthest
/// from its assigned centroid.
pub fn kmeans(points: &[Vec<f64>], z: usize, iters: usize, rng: &mut Rng) -> Result<ClusterAssignment> {
    if z == 0 || points.len() < z {
        return Err(Error::NotEnoughSamples(format!("{} samples for {z} clusters", points.len())));
    }
    let dim = points[0].len();
    let mut centroids = seed_centroids(points, z, rng);
    let (mut labels, obj) = assign(points, &centroids);
    let mut objective = vec![obj];
    let mut converged = false;
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; dim]; z];
        let mut counts = vec![0usize; z];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut taken = Vec::new();
        for j in 0..z {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..z {
            if counts[j] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i]])))
                    .fold((usize::MAX, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best })
                    .0;
                taken.push(far);
                centroids[j] = points[far].clone();
            }
        }
        let (next, obj) = assign(points, &centroids);
        objective.push(obj);
        let same = next == labels;
        labels = next;
        if same {
            converged = true;
            break;
        }
    }
    Ok(ClusterAssignment {
        labels,
        centroids,
        objective,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SilhouetteReport {
    pub scores: Vec<f64>,
    pub mean: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Silhouette coefficient `(b - a) / max(a, b)` of every sample; samples
/// alone in their cluster score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<SilhouetteReport> {
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} points vs {} labels", points.len(), labels.len())));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::NotEnoughSamples("silhouette needs two non-empty clusters".into()));
    }
    let mut scores = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let own = labels[i];
        if sizes[own] == 1 {
            scores.push(0.0);
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if j != i {
                sums[labels[j]] += dist(p, q);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        scores.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(SilhouetteReport { scores, mean })
}
