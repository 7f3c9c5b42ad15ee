//! Water-body segmentation: toy encoder-decoder, focal loss, point-level
//! triplet mining and the training loop.

mod focal;
mod mining;
mod net;
mod train;

pub use focal::{
    focal_loss, focal_loss_batch, focal_loss_logits, focal_point, focal_point_logit_grad, sigmoid,
    FocalConfig, PROB_EPS,
};
pub use mining::{
    build_pools, mine_triplets, plml_loss, seg_total_loss, MiningStrategy, PointRef, PointTriplet,
    TripletPools, FEATURE_STRIDE,
};
pub use net::{mask_from_logits, predict_mask, SegForward, SegNetToy};
pub use train::{seg_batch, train_seg, water_iou, write_history, SegBatchResult, SegEpoch, SegTrainConfig, SegTrainOutcome};
