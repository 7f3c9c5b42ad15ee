use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autonet::{poly_lr, AdamConfig, Gradients, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{mean_iou, ClassSelection};
use crate::raster::{apply_augment, AugmentConfig, AugmentDraws, LabelMask, Raster};
use crate::rng;

use super::focal::{focal_loss_logits, FocalConfig};
use super::mining::{build_pools, mine_triplets, plml_loss, seg_total_loss, MiningStrategy, PointTriplet, TripletPools};
use super::net::{mask_from_logits, predict_mask, SegNetToy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegTrainConfig {
    /// Anchors sampled per image.
    pub anchors_per_image: usize,
    pub margin_beta: f64,
    pub loss_weight_sigma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Exponent of the polynomial learning-rate decay.
    pub lr_power: f64,
    pub mining_strategy: MiningStrategy,
    pub focal: FocalConfig,
    pub feat_channels: usize,
    /// Probability threshold of the pseudo-prediction that seeds the pools.
    pub threshold: f64,
    /// Point-level metric term on or off.
    pub plml: bool,
    pub augment: Option<AugmentConfig>,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            anchors_per_image: 50,
            margin_beta: 0.01,
            loss_weight_sigma: 0.01,
            batch_size: 4,
            epochs: 20,
            learning_rate: 3e-4,
            lr_power: 0.9,
            mining_strategy: MiningStrategy::CrossImageRandom,
            focal: FocalConfig::default(),
            feat_channels: 32,
            threshold: 0.5,
            plml: true,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.focal.validate()?;
        if self.anchors_per_image == 0 {
            return Err(Error::Config("anchors_per_image must be >= 1".into()));
        }
        if !(self.margin_beta > 0.0) {
            return Err(Error::Config("margin_beta must be > 0".into()));
        }
        if !(self.loss_weight_sigma >= 0.0) {
            return Err(Error::Config("loss_weight_sigma must be >= 0".into()));
        }
        if self.batch_size == 0 || self.feat_channels == 0 {
            return Err(Error::Config("batch_size and feat_channels must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Losses and gradients of one batch.
#[derive(Clone, Debug)]
pub struct SegBatchResult {
    pub focal: f64,
    pub triplet: f64,
    pub total: f64,
    pub num_triplets: usize,
    /// `[encoder, decoder]`, present when requested.
    pub grads: Option<[Gradients; 2]>,
    /// ReLU and hinge signs.
    pub kinks: Vec<i8>,
}

/// Forward pass, pool construction, mining and composite loss of a batch.
/// `mine` receives the pools and point features and returns the triplets.
pub fn seg_batch(
    model: &SegNetToy,
    batch: &[(Tensor, LabelMask)],
    cfg: &SegTrainConfig,
    mine: &mut dyn FnMut(&[TripletPools], &[Tensor]) -> Result<Vec<PointTriplet>>,
    want_grads: bool,
) -> Result<SegBatchResult> {
    let b = batch.len() as f64;
    let mut fwds = Vec::with_capacity(batch.len());
    let mut pools = Vec::with_capacity(batch.len());
    for (x, gt) in batch {
        let f = model.forward(x)?;
        let pred = mask_from_logits(&f.logits, f.width, f.height, cfg.threshold);
        pools.push(build_pools(&pred, gt)?);
        fwds.push(f);
    }
    let features: Vec<Tensor> = fwds.iter().map(|f| f.features.clone()).collect();
    let triplets = if cfg.plml { mine(&pools, &features)? } else { Vec::new() };

    let mut focal = 0.0;
    let mut focal_grads = Vec::with_capacity(batch.len());
    for (f, (_, gt)) in fwds.iter().zip(batch) {
        let (l, g) = focal_loss_logits(&f.logits, gt, &cfg.focal)?;
        focal += l / b;
        focal_grads.push(g);
    }
    let (triplet, feat_grads, hinge) = plml_loss(&features, &triplets, cfg.margin_beta);
    let total = seg_total_loss(focal, triplet, cfg.loss_weight_sigma);
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("segmentation loss: focal {focal}, triplet {triplet}")));
    }

    let mut kinks = Vec::new();
    for f in &fwds {
        kinks.extend(model.relu_signature(f));
    }
    kinks.extend(hinge);

    let grads = if want_grads {
        let mut enc = Gradients::zeros_like(model.encoder.params());
        let mut dec = Gradients::zeros_like(model.decoder.params());
        for ((f, g), gf) in fwds.iter().zip(&focal_grads).zip(&feat_grads) {
            let g: Vec<f64> = g.iter().map(|v| v / b).collect();
            let mut gf = gf.clone();
            for v in &mut gf.data {
                *v *= cfg.loss_weight_sigma;
            }
            let [e, d] = model.backward(f, &g, Some(&gf))?;
            enc.add(&e);
            dec.add(&d);
        }
        Some([enc, dec])
    } else {
        None
    };
    Ok(SegBatchResult {
        focal,
        triplet,
        total,
        num_triplets: triplets.len(),
        grads,
        kinks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegEpoch {
    pub epoch: usize,
    pub focal_loss: f64,
    pub triplet_loss: f64,
    pub val_iou: f64,
}

#[derive(Clone, Debug)]
pub struct SegTrainOutcome {
    /// Weights with the best validation IoU (the initial weights included).
    pub model: SegNetToy,
    pub history: Vec<SegEpoch>,
    pub initial_val_iou: f64,
    /// Epoch of the kept weights, 0 for the initial ones.
    pub best_epoch: usize,
}

/// Mean per-image water IoU of `model` on `(raster, mask)` pairs. Masks may
/// be 3-class; they are binarised.
pub fn water_iou(model: &SegNetToy, data: &[(Raster, LabelMask)], threshold: f64) -> Result<f64> {
    let mut preds = Vec::with_capacity(data.len());
    let mut gts = Vec::with_capacity(data.len());
    for (r, m) in data {
        preds.push(predict_mask(model, r, threshold)?);
        gts.push(m.to_binary());
    }
    Ok(mean_iou(&preds, &gts, ClassSelection::Water)?.0)
}

/// Trains a segmentation network. Deterministic in `(data, cfg, seed)`.
pub fn train_seg(
    train: &[(Raster, LabelMask)],
    val: &[(Raster, LabelMask)],
    cfg: &SegTrainConfig,
    seed: u64,
) -> Result<SegTrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("segmentation training split is empty".into()));
    }
    let channels = train[0].0.channels();
    let mut model = SegNetToy::new(channels, cfg.feat_channels, &mut rng::stream(seed, rng::INIT))?;
    let eval = |m: &SegNetToy| if val.is_empty() { Ok(0.0) } else { water_iou(m, val, cfg.threshold) };
    let initial_val_iou = eval(&model)?;
    let mut best = (initial_val_iou, model.clone(), 0);
    let mut history = Vec::with_capacity(cfg.epochs);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::substream(seed, rng::ORDER, epoch as u64));
        let (mut focal_sum, mut triplet_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut batch = Vec::with_capacity(chunk.len());
            for (j, &i) in chunk.iter().enumerate() {
                let (r, m) = &train[i];
                let (r, m) = match &cfg.augment {
                    Some(a) => {
                        let mut ar = rng::substream(seed, rng::AUGMENT, (step * cfg.batch_size + j) as u64);
                        let draws = AugmentDraws::sample(a, r.channels(), &mut ar);
                        apply_augment(r, m, &draws)?
                    }
                    None => (r.clone(), m.clone()),
                };
                batch.push((Tensor::from_raster(&r), m.to_binary()));
            }
            let mut mining_rng = rng::substream(seed, rng::MINING, step as u64);
            let strategy = cfg.mining_strategy;
            let k = cfg.anchors_per_image;
            let mut mine = |pools: &[TripletPools], feats: &[Tensor]| {
                mine_triplets(pools, k, strategy, Some(feats), &mut mining_rng)
            };
            let out = seg_batch(&model, &batch, cfg, &mut mine, true)?;
            focal_sum += out.focal;
            triplet_sum += out.triplet;
            let [ge, gd] = out.grads.expect("requested");
            let lr = poly_lr(cfg.learning_rate, step - 1, total_steps, cfg.lr_power);
            let adam = AdamConfig::with_lr(lr);
            for (net, g) in [(&mut model.encoder, &ge), (&mut model.decoder, &gd)] {
                let p = net.params_mut();
                p.zero_grad();
                p.accumulate(g);
                p.adam_step(&adam, step as u64)?;
            }
        }
        let val_iou = eval(&model)?;
        let rec = SegEpoch {
            epoch,
            focal_loss: focal_sum / steps_per_epoch as f64,
            triplet_loss: triplet_sum / steps_per_epoch as f64,
            val_iou,
        };
        log::info!(
            "seg epoch {epoch}: focal {:.5} triplet {:.5} val IoU {:.4}",
            rec.focal_loss,
            rec.triplet_loss,
            val_iou
        );
        history.push(rec);
        if val_iou > best.0 {
            best = (val_iou, model.clone(), epoch);
        }
    }
    Ok(SegTrainOutcome {
        model: best.1,
        history,
        initial_val_iou,
        best_epoch: best.2,
    })
}

/// Writes `epoch,focal_loss,triplet_loss,val_iou` rows.
pub fn write_history(path: impl AsRef<Path>, history: &[SegEpoch]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for h in history {
        w.serialize(h)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
