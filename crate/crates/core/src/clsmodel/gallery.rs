use std::fs;
use std::path::Path;

use super::{EmbedNetToy, WaterClass};
use crate::error::{Error, Result};
use crate::extract::WaterBodyClassifier;
use crate::raster::Raster;

/// Training embeddings with their labels, queried by cosine similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    dim: usize,
    embeddings: Vec<Vec<f64>>,
    labels: Vec<WaterClass>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbour {
    pub class: WaterClass,
    pub similarity: f64,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl Gallery {
    pub fn new(embeddings: Vec<Vec<f64>>, labels: Vec<WaterClass>) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} embeddings vs {} labels",
                embeddings.len(),
                labels.len()
            )));
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        if embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::DimensionMismatch("gallery embeddings differ in length".into()));
        }
        Ok(Gallery {
            dim,
            embeddings,
            labels,
        })
    }

    /// Embeds every `(raster, label)` pair with `model`.
    pub fn build(model: &EmbedNetToy, data: &[(Raster, WaterClass)]) -> Result<Self> {
        let mut e = Vec::with_capacity(data.len());
        for (r, _) in data {
            e.push(model.embed(r)?.vector);
        }
        Gallery::new(e, data.iter().map(|(_, l)| *l).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[WaterClass] {
        &self.labels
    }

    /// Majority vote over the `k` most similar entries (most similar first,
    /// lowest index on equal similarity). A tied vote goes to the class
    /// whose best member ranks first. The returned similarity is that of
    /// the winning class's best member.
    pub fn classify(&self, query: &[f64], k: usize) -> Result<Neighbour> {
        if self.is_empty() {
            return Err(Error::EmptyGallery);
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch(format!("query has {} dims, gallery {}", query.len(), self.dim)));
        }
        let sims: Vec<f64> = self.embeddings.iter().map(|e| cosine(query, e)).collect();
        let mut order: Vec<usize> = (0..sims.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        let top = &order[..k.clamp(1, order.len())];
        let mut votes = [0usize; 2];
        for &i in top {
            votes[self.labels[i].label() as usize] += 1;
        }
        let winner = if votes[0] == votes[1] {
            self.labels[top[0]]
        } else if votes[1] > votes[0] {
            WaterClass::Dam
        } else {
            WaterClass::Natural
        };
        let best = top.iter().find(|&&i| self.labels[i] == winner).expect("winner has a member");
        Ok(Neighbour {
            class: winner,
            similarity: sims[*best],
        })
    }

    /// Binary layout: `count u32, dim u32`, then per entry a label byte and
    /// `dim` little-endian f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.len() * (1 + 4 * self.dim));
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (e, l) in self.embeddings.iter().zip(&self.labels) {
            out.push(l.label());
            for &v in e {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::MalformedHeader("gallery header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (count, dim) = (word(0), word(4));
        let expected = 8 + count * (1 + 4 * dim);
        if bytes.len() != expected {
            return Err(Error::TruncatedPayload {
                context: "gallery".into(),
                expected,
                found: bytes.len(),
            });
        }
        let mut embeddings = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        let mut pos = 8;
        for _ in 0..count {
            labels.push(WaterClass::from_label(bytes[pos])?);
            pos += 1;
            let e = (0..dim)
                .map(|d| {
                    let o = pos + 4 * d;
                    f64::from(f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")))
                })
                .collect();
            pos += 4 * dim;
            embeddings.push(e);
        }
        Ok(Gallery {
            dim,
            embeddings,
            labels,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Embeds a raster and queries the gallery.
pub fn nn_infer(query: &Raster, model: &EmbedNetToy, gallery: &Gallery, k: usize) -> Result<Neighbour> {
    gallery.classify(&model.embed(query)?.vector, k)
}

/// Nearest-neighbour classifier usable by the extraction pipeline.
pub struct NnClassifier<'a> {
    pub model: &'a EmbedNetToy,
    pub gallery: &'a Gallery,
    pub k: usize,
}

impl WaterBodyClassifier for NnClassifier<'_> {
    fn classify(&self, crop: &Raster) -> Result<WaterClass> {
        Ok(nn_infer(crop, self.model, self.gallery, self.k)?.class)
    }
}
