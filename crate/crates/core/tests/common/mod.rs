//! Brute-force oracles shared by the property and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use damex::clsmodel::WaterClass;
use damex::raster::LabelMask;

/// 8-connected components of nonzero pixels by depth-first flood fill,
/// ordered by their first pixel in raster order, pixels sorted.
pub fn flood_fill(mask: &LabelMask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) == 0 || seen[r * w + c] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![(r, c)];
            seen[r * w + c] = true;
            while let Some((y, x)) = stack.pop() {
                comp.push((y, x));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask.get(ny, nx) != 0 && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
    }
    out
}

pub type PixelSet = BTreeSet<(usize, usize)>;

/// (anchors, positives, negatives) by direct set comparison.
pub fn pools_oracle(pred: &LabelMask, gt: &LabelMask) -> (PixelSet, PixelSet, PixelSet) {
    let set = |m: &LabelMask| -> PixelSet {
        (0..m.height())
            .flat_map(|r| (0..m.width()).map(move |c| (r, c)))
            .filter(|&(r, c)| m.get(r, c) != 0)
            .collect()
    };
    let (p, g) = (set(pred), set(gt));
    (
        p.intersection(&g).copied().collect(),
        g.difference(&p).copied().collect(),
        p.difference(&g).copied().collect(),
    )
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Exhaustive triplet selection: for every anchor, the full distance row is
/// computed, then the extreme value is located and its first index taken.
pub fn triplet_oracle(
    emb: &[Vec<f64>],
    labels: &[WaterClass],
    clusters: Option<&[usize]>,
) -> Vec<(usize, usize, usize)> {
    let n = emb.len();
    let mut out = Vec::new();
    for a in 0..n {
        let row: Vec<f64> = (0..n).map(|j| dist(&emb[a], &emb[j])).collect();
        let pos: Vec<usize> = (0..n)
            .filter(|&j| j != a && labels[j] == labels[a] && clusters.is_none_or(|c| c[j] == c[a]))
            .collect();
        let neg: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let far = pos.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let near = neg.iter().map(|&j| row[j]).fold(f64::INFINITY, f64::min);
        let p = *pos.iter().find(|&&j| row[j] == far).unwrap();
        let q = *neg.iter().find(|&&j| row[j] == near).unwrap();
        out.push((a, p, q));
    }
    out
}

/// Per-class IoU by pixel counting with the empty-class rule.
pub fn iou_count(pred: &LabelMask, gt: &LabelMask, class: u8) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        let (a, b) = (p == class, g == class);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    let in_pred = pred.values().contains(&class);
    let in_gt = gt.values().contains(&class);
    match (in_pred, in_gt) {
        (false, false) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => inter as f64 / union as f64,
    }
}

/// Mean over classes per image, then over images.
pub fn set_miou(preds: &[LabelMask], gts: &[LabelMask], classes: &[u8]) -> f64 {
    let per_image: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| classes.iter().map(|&c| iou_count(p, g, c)).sum::<f64>() / classes.len() as f64)
        .collect();
    per_image.iter().sum::<f64>() / per_image.len() as f64
}

/// Silhouette of every sample from the full distance matrix.
pub fn silhouette_oracle(points: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let n = points.len();
    let d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dist(&points[i], &points[j])).collect()).collect();
    let ids: HashSet<usize> = labels.iter().copied().collect();
    (0..n)
        .map(|i| {
            let mates: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if mates.is_empty() {
                return 0.0;
            }
            let a = mates.iter().map(|&j| d[i][j]).sum::<f64>() / mates.len() as f64;
            let b = ids
                .iter()
                .filter(|&&c| c != labels[i])
                .map(|&c| {
                    let m: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                    m.iter().map(|&j| d[i][j]).sum::<f64>() / m.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}
