//! Supervised training of the slice network: class-balanced focal loss with
//! L2 regularization, RMSprop with inverse-time decay, and rotation/flip
//! augmentation.

mod augment;
mod loss;
mod optimizer;
mod trainer;

pub use augment::{augment, flip_horizontal, rotate, AugmentationConfig};
pub use loss::{
    class_weights, focal_loss, focal_loss_on_tape, present_class_weights, FocalLossConfig,
};
pub use optimizer::{RmsProp, RmsPropConfig};
pub use trainer::{
    evaluate, label_counts, predict_all, refs, stratified_split, to_tensor64, train,
    train_with_validation, BatchResult, EpochMetrics, TrainConfig, TrainOutcome, Trainer,
};
