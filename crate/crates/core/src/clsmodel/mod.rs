//! Dam-reservoir recognition: embedding network, per-batch K-means,
//! cluster-constrained triplet mining, nearest-neighbour inference and
//! silhouette diagnostics.

mod gallery;
mod kmeans;
mod net;
mod pgml;
mod train;

pub use gallery::{cosine, nn_infer, Gallery, Neighbour, NnClassifier};
pub use kmeans::{kmeans, silhouette, ClusterAssignment, SilhouetteReport};
pub use net::{EmbedNetToy, Embedding};
pub use pgml::{euclidean, mine_fbml, mine_pgml, pgml_loss, softmax_ce, ClsMining, ImageTriplet};
pub use train::{
    cls_batch, predict_classes, train_cls, write_history, BatchMining, ClsBatchResult, ClsEpoch,
    ClsTrainConfig, ClsTrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DAM, NATURAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WaterClass {
    Natural = 0,
    Dam = 1,
}

impl WaterClass {
    /// Classification label: 0 natural, 1 dam.
    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            0 => Ok(WaterClass::Natural),
            1 => Ok(WaterClass::Dam),
            other => Err(Error::Data(format!("class label {other} is not 0 or 1"))),
        }
    }

    /// Value in a 3-class mask: 1 natural, 2 dam.
    pub fn mask_value(self) -> u8 {
        match self {
            WaterClass::Natural => NATURAL,
            WaterClass::Dam => DAM,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WaterClass::Natural => "natural",
            WaterClass::Dam => "dam",
        }
    }
}
