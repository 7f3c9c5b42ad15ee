use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gallery::Gallery;
use super::kmeans::{kmeans, silhouette};
use super::net::EmbedNetToy;
use super::pgml::{mine_fbml, mine_pgml, pgml_loss, softmax_ce, ClsMining, ImageTriplet};
use super::WaterClass;
use crate::autonet::{AdamConfig, Gradients, LayerSpec, Network, Tensor};
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::raster::{apply_augment, AugmentConfig, AugmentDraws, LabelMask, Raster};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsTrainConfig {
    pub num_clusters: usize,
    pub margin_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub kmeans_iters: usize,
    pub embed_dim: usize,
    pub input_size: usize,
    pub mining: ClsMining,
    /// Train a two-way softmax head with cross-entropy instead of the
    /// triplet loss.
    pub ce_baseline: bool,
    /// Neighbours consulted at validation.
    pub knn_k: usize,
    pub augment: Option<AugmentConfig>,
}

impl Default for ClsTrainConfig {
    fn default() -> Self {
        ClsTrainConfig {
            num_clusters: 4,
            margin_epsilon: 0.01,
            batch_size: 64,
            epochs: 30,
            learning_rate: 1e-3,
            kmeans_iters: 20,
            embed_dim: 64,
            input_size: 32,
            mining: ClsMining::Pgml,
            ce_baseline: false,
            knn_k: 1,
            augment: None,
        }
    }
}

impl ClsTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters < 2 {
            return Err(Error::Config("num_clusters must be >= 2".into()));
        }
        if !(self.margin_epsilon > 0.0) {
            return Err(Error::Config("margin_epsilon must be > 0".into()));
        }
        if self.batch_size <= self.num_clusters {
            return Err(Error::Config(format!(
                "batch_size {} must exceed num_clusters {}",
                self.batch_size, self.num_clusters
            )));
        }
        if !(self.learning_rate > 0.0) || self.embed_dim == 0 || self.input_size < 4 || self.knn_k == 0 {
            return Err(Error::Config("learning_rate, embed_dim, input_size and knn_k must be positive".into()));
        }
        Ok(())
    }
}

/// Losses and gradients of one classification batch.
#[derive(Clone, Debug)]
pub struct ClsBatchResult {
    pub loss: f64,
    pub triplets: Vec<ImageTriplet>,
    /// Mean silhouette of the batch clustering, when defined.
    pub silhouette: Option<f64>,
    /// `[embedding, head]`; the head entry is empty without a CE head.
    pub grads: Option<(Gradients, Option<Gradients>)>,
    pub kinks: Vec<i8>,
}

/// How a batch picks its triplets.
pub enum BatchMining<'a> {
    /// Cluster (PGML) or batch-hard (FBML) mining with the given K-means
    /// randomness.
    Mine(ClsMining, &'a mut rng::Rng),
    /// Use these triplets as given.
    Fixed(&'a [ImageTriplet]),
}

/// Embeds a batch and evaluates the triplet loss (or the CE baseline when a
/// `head` is given).
pub fn cls_batch(
    model: &EmbedNetToy,
    head: Option<&Network>,
    batch: &[(Tensor, WaterClass)],
    cfg: &ClsTrainConfig,
    mining: BatchMining<'_>,
    want_grads: bool,
) -> Result<ClsBatchResult> {
    let mut embs = Vec::with_capacity(batch.len());
    let mut tapes = Vec::with_capacity(batch.len());
    let mut kinks = Vec::new();
    for (x, _) in batch {
        let (e, tape) = model.forward(x)?;
        kinks.extend(model.net.relu_signature(&tape));
        embs.push(e.vector);
        tapes.push(tape);
    }
    let labels: Vec<WaterClass> = batch.iter().map(|(_, l)| *l).collect();

    if let Some(head) = head {
        let b = batch.len() as f64;
        let mut loss = 0.0;
        let mut g_emb = Gradients::zeros_like(model.net.params());
        let mut g_head = Gradients::zeros_like(head.params());
        for ((e, tape), l) in embs.iter().zip(&tapes).zip(&labels) {
            let (z, htape) = head.forward(&Tensor::vector(e.clone()))?;
            let (li, gz) = softmax_ce(&z.data, l.label() as usize);
            loss += li / b;
            if want_grads {
                let gz = Tensor::vector(gz.iter().map(|v| v / b).collect());
                let (gh, ge) = head.backward(&htape, &gz)?;
                g_head.add(&gh);
                g_emb.add(&model.backward(tape, &ge.data)?);
            }
        }
        return Ok(ClsBatchResult {
            loss,
            triplets: Vec::new(),
            silhouette: None,
            grads: want_grads.then_some((g_emb, Some(g_head))),
            kinks,
        });
    }

    let (triplets, sil) = match mining {
        BatchMining::Fixed(t) => (t.to_vec(), None),
        BatchMining::Mine(ClsMining::Fbml, _) => (mine_fbml(&embs, &labels), None),
        BatchMining::Mine(ClsMining::Pgml, r) => {
            let z = cfg.num_clusters.min(embs.len());
            let clusters = kmeans(&embs, z, cfg.kmeans_iters, r)?;
            let sil = silhouette(&embs, &clusters.labels).ok().map(|s| s.mean);
            (mine_pgml(&embs, &labels, &clusters.labels), sil)
        }
    };
    let (loss, g, hinge) = pgml_loss(&embs, &triplets, cfg.margin_epsilon);
    kinks.extend(hinge);
    let grads = if want_grads {
        let mut total = Gradients::zeros_like(model.net.params());
        for (tape, gi) in tapes.iter().zip(&g) {
            if gi.iter().any(|&v| v != 0.0) {
                total.add(&model.backward(tape, gi)?);
            }
        }
        Some((total, None))
    } else {
        None
    };
    Ok(ClsBatchResult {
        loss,
        triplets,
        silhouette: sil,
        grads,
        kinks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub triplets: usize,
    /// Mean over batches of the batch-mean silhouette.
    pub msc: Option<f64>,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct ClsTrainOutcome {
    pub model: EmbedNetToy,
    /// Softmax head of the CE baseline.
    pub head: Option<Network>,
    /// Training embeddings of the kept model.
    pub gallery: Gallery,
    pub history: Vec<ClsEpoch>,
    pub initial_val_accuracy: f64,
    pub best_epoch: usize,
}

/// Predictions for `data`: gallery vote, or the head's argmax when given.
pub fn predict_classes(
    model: &EmbedNetToy,
    head: Option<&Network>,
    gallery: &Gallery,
    data: &[(Raster, WaterClass)],
    k: usize,
) -> Result<Vec<WaterClass>> {
    data.iter()
        .map(|(r, _)| {
            let e = model.embed(r)?;
            match head {
                Some(h) => {
                    let z = h.infer(&Tensor::vector(e.vector))?;
                    Ok(if z.data[1] > z.data[0] { WaterClass::Dam } else { WaterClass::Natural })
                }
                None => Ok(gallery.classify(&e.vector, k)?.class),
            }
        })
        .collect()
}

fn evaluate(
    model: &EmbedNetToy,
    head: Option<&Network>,
    train: &[(Raster, WaterClass)],
    val: &[(Raster, WaterClass)],
    k: usize,
) -> Result<(Gallery, f64)> {
    let gallery = Gallery::build(model, train)?;
    if val.is_empty() {
        return Ok((gallery, 0.0));
    }
    let pred = predict_classes(model, head, &gallery, val, k)?;
    let gt: Vec<WaterClass> = val.iter().map(|(_, l)| *l).collect();
    Ok((gallery, accuracy(&pred, &gt)?))
}

/// Splits `n` shuffled indices into batches, folding a remainder too small
/// to cluster into the previous batch.
fn batches(order: &[usize], size: usize, min: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

/// Trains the embedding network. Deterministic in `(data, cfg, seed)`.
pub fn train_cls(
    train: &[(Raster, WaterClass)],
    val: &[(Raster, WaterClass)],
    cfg: &ClsTrainConfig,
    seed: u64,
) -> Result<ClsTrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("classification training split is empty".into()));
    }
    if !train.iter().any(|(_, l)| *l == WaterClass::Dam) || !train.iter().any(|(_, l)| *l == WaterClass::Natural)
    {
        return Err(Error::Data("classification training split needs both classes".into()));
    }
    if train.len() <= cfg.num_clusters && !cfg.ce_baseline {
        return Err(Error::NotEnoughSamples(format!(
            "{} training crops for {} clusters",
            train.len(),
            cfg.num_clusters
        )));
    }
    let channels = train[0].0.channels();
    let mut init = rng::stream(seed, rng::INIT);
    let mut model = EmbedNetToy::new(channels, cfg.embed_dim, cfg.input_size, &mut init)?;
    let mut head = if cfg.ce_baseline {
        Some(Network::new(vec![LayerSpec::dense(cfg.embed_dim, 2)], &mut init)?)
    } else {
        None
    };
    let inputs: Vec<Tensor> = train.iter().map(|(r, _)| model.prepare(r)).collect();

    let (gallery, initial_val_accuracy) = evaluate(&model, head.as_ref(), train, val, cfg.knn_k)?;
    let mut best = (initial_val_accuracy, model.clone(), head.clone(), gallery, 0);
    let mut history = Vec::with_capacity(cfg.epochs);
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let (mut step, mut adam_t) = (0u64, 0u64);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::substream(seed, rng::ORDER, epoch as u64));
        let (mut loss_sum, mut n_trip) = (0.0, 0usize);
        let mut sils = Vec::new();
        let groups = batches(&order, cfg.batch_size, cfg.num_clusters + 1);
        for group in &groups {
            step += 1;
            let batch: Vec<(Tensor, WaterClass)> = group
                .iter()
                .enumerate()
                .map(|(j, &i)| -> Result<(Tensor, WaterClass)> {
                    let x = match &cfg.augment {
                        Some(a) => {
                            let (r, _) = &train[i];
                            let mut ar = rng::substream(seed, rng::AUGMENT, step * cfg.batch_size as u64 + j as u64);
                            let draws = AugmentDraws::sample(a, r.channels(), &mut ar);
                            let blank = LabelMask::zeros(r.width(), r.height(), 2);
                            model.prepare(&apply_augment(r, &blank, &draws)?.0)
                        }
                        None => inputs[i].clone(),
                    };
                    Ok((x, train[i].1))
                })
                .collect::<Result<_>>()?;
            let mut km = rng::substream(seed, rng::KMEANS, step);
            let out = cls_batch(
                &model,
                head.as_ref(),
                &batch,
                cfg,
                BatchMining::Mine(cfg.mining, &mut km),
                true,
            )?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite(format!("classification loss {}", out.loss)));
            }
            loss_sum += out.loss;
            n_trip += out.triplets.len();
            sils.extend(out.silhouette);
            if out.loss == 0.0 {
                continue;
            }
            adam_t += 1;
            let (ge, gh) = out.grads.expect("requested");
            let p = model.net.params_mut();
            p.zero_grad();
            p.accumulate(&ge);
            p.adam_step(&adam, adam_t)?;
            if let (Some(h), Some(gh)) = (head.as_mut(), gh) {
                let p = h.params_mut();
                p.zero_grad();
                p.accumulate(&gh);
                p.adam_step(&adam, adam_t)?;
            }
        }
        let (gallery, val_accuracy) = evaluate(&model, head.as_ref(), train, val, cfg.knn_k)?;
        let msc = (!sils.is_empty()).then(|| sils.iter().sum::<f64>() / sils.len() as f64);
        log::info!(
            "cls epoch {epoch}: loss {:.5} triplets {n_trip} mSC {:?} val acc {:.4}",
            loss_sum / groups.len() as f64,
            msc,
            val_accuracy
        );
        history.push(ClsEpoch {
            epoch,
            loss: loss_sum / groups.len() as f64,
            triplets: n_trip,
            msc,
            val_accuracy,
        });
        if val_accuracy > best.0 {
            best = (val_accuracy, model.clone(), head.clone(), gallery, epoch);
        }
    }
    Ok(ClsTrainOutcome {
        model: best.1,
        head: best.2,
        gallery: best.3,
        history,
        initial_val_accuracy,
        best_epoch: best.4,
    })
}

/// Writes `epoch,loss,triplets,msc,val_accuracy` rows.
pub fn write_history(path: impl AsRef<Path>, history: &[ClsEpoch]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for h in history {
        w.serialize(h)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
