//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::clsmodel::{ClsMining, ClsTrainConfig};
use crate::error::{Error, Result};
use crate::extract::PipelineConfig;
use crate::raster::{AugmentConfig, DatasetCounts, SceneSpec, ShapeMix};
use crate::segmodel::{FocalConfig, MiningStrategy, SegTrainConfig};

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $key:ident: $ty:ty = $default:expr,)*) => {
        /// Every tunable of a run. Keys are the field names.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($key: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = value
                            .parse()
                            .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))?;
                    })*
                    other => return Err(Error::Config(format!("unknown key '{other}'"))),
                }
                Ok(())
            }

            /// One `key = value` line per field, in declaration order.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(writeln!(s, "{} = {}", stringify!($key), self.$key).expect("string write");)*
                s
            }
        }
    };
}

run_config! {
    seed: u64 = 7,
    data_dir: String = "data".into(),
    out_dir: String = "out".into(),

    width: usize = 64,
    height: usize = 64,
    num_bodies: usize = 2,
    shape_mix_dam: f64 = 0.5,
    shape_mix_lake: f64 = 0.3,
    shape_mix_river: f64 = 0.2,
    noise_level: f64 = 0.03,
    contour_jitter: f64 = 0.25,
    cloud_probability: f64 = 0.1,
    train_scenes: usize = 64,
    val_scenes: usize = 16,
    test_scenes: usize = 16,

    /// Anchors per image (K).
    anchors_per_image: usize = 50,
    margin_beta: f64 = 0.01,
    loss_weight_sigma: f64 = 0.01,
    focal_alpha: f64 = 0.25,
    focal_gamma: f64 = 2.0,
    seg_batch_size: usize = 4,
    seg_epochs: usize = 20,
    seg_learning_rate: f64 = 3e-4,
    lr_power: f64 = 0.9,
    mining_strategy: MiningStrategy = MiningStrategy::CrossImageRandom,
    /// Shorthand for `mining_strategy = within-image`.
    within_image: bool = false,
    plml: bool = true,
    feat_channels: usize = 32,
    threshold: f64 = 0.5,
    seg_augment: bool = true,
    brightness: f64 = 0.2,
    channel_shift: f64 = 0.1,

    /// Clusters per batch (Z).
    num_clusters: usize = 4,
    margin_epsilon: f64 = 0.01,
    cls_batch_size: usize = 64,
    cls_epochs: usize = 30,
    cls_learning_rate: f64 = 1e-3,
    kmeans_iters: usize = 20,
    embed_dim: usize = 64,
    input_size: usize = 32,
    cls_mining: ClsMining = ClsMining::Pgml,
    ce_baseline: bool = false,
    knn_k: usize = 1,
    cls_augment: bool = false,

    min_area: usize = 20,
    expand_factor: f64 = 2.0,

    gradcheck_seeds: u64 = 20,
    gradcheck_step: f64 = 1e-4,
    gradcheck_tolerance: f64 = 1e-4,
    gradcheck_params: usize = 48,
}

/// Sweep parameter names and the keys they set.
pub const SWEEP_ALIASES: &[(&str, &str)] = &[
    ("K", "anchors_per_image"),
    ("beta", "margin_beta"),
    ("sigma", "loss_weight_sigma"),
    ("Z", "num_clusters"),
    ("epsilon", "margin_epsilon"),
    ("seg_batch_size", "seg_batch_size"),
    ("cls_batch_size", "cls_batch_size"),
    ("knn_k", "knn_k"),
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_pairs(&text)?)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            num_bodies: self.num_bodies,
            shape_mix: ShapeMix {
                dam: self.shape_mix_dam,
                lake: self.shape_mix_lake,
                river: self.shape_mix_river,
            },
            noise_level: self.noise_level,
            contour_jitter: self.contour_jitter,
            cloud_probability: self.cloud_probability,
        }
    }

    pub fn counts(&self) -> DatasetCounts {
        DatasetCounts {
            train: self.train_scenes,
            val: self.val_scenes,
            test: self.test_scenes,
        }
    }

    fn augment(&self, on: bool) -> Option<AugmentConfig> {
        on.then_some(AugmentConfig {
            brightness: self.brightness,
            channel_shift: self.channel_shift,
        })
    }

    pub fn seg_config(&self) -> SegTrainConfig {
        SegTrainConfig {
            anchors_per_image: self.anchors_per_image,
            margin_beta: self.margin_beta,
            loss_weight_sigma: self.loss_weight_sigma,
            batch_size: self.seg_batch_size,
            epochs: self.seg_epochs,
            learning_rate: self.seg_learning_rate,
            lr_power: self.lr_power,
            mining_strategy: if self.within_image {
                MiningStrategy::WithinImage
            } else {
                self.mining_strategy
            },
            focal: FocalConfig {
                alpha: self.focal_alpha,
                gamma: self.focal_gamma,
            },
            feat_channels: self.feat_channels,
            threshold: self.threshold,
            plml: self.plml,
            augment: self.augment(self.seg_augment),
        }
    }

    pub fn cls_config(&self) -> ClsTrainConfig {
        ClsTrainConfig {
            num_clusters: self.num_clusters,
            margin_epsilon: self.margin_epsilon,
            batch_size: self.cls_batch_size,
            epochs: self.cls_epochs,
            learning_rate: self.cls_learning_rate,
            kmeans_iters: self.kmeans_iters,
            embed_dim: self.embed_dim,
            input_size: self.input_size,
            mining: self.cls_mining,
            ce_baseline: self.ce_baseline,
            knn_k: self.knn_k,
            augment: self.augment(self.cls_augment),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            threshold: self.threshold,
            min_area: self.min_area,
            expand_factor: self.expand_factor,
        }
    }

    /// Checks every derived configuration; scene errors surface as config
    /// errors.
    pub fn validate(&self) -> Result<()> {
        self.scene_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.seg_config().validate()?;
        self.cls_config().validate()?;
        if self.train_scenes == 0 || self.val_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::Config("every split needs at least one scene".into()));
        }
        if !(self.expand_factor >= 1.0) {
            return Err(Error::Config(format!("expand_factor = {} below 1", self.expand_factor)));
        }
        if !(self.gradcheck_step > 0.0 && self.gradcheck_tolerance > 0.0) {
            return Err(Error::Config("gradcheck step and tolerance must be positive".into()));
        }
        Ok(())
    }
}
