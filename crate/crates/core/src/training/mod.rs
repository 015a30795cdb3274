//! Loss, optimiser, schedule, augmentation, the training loop and the
//! model-level gradient check.

mod augment;
mod gradcheck;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use augment::{augment, FlipAxis};
pub use gradcheck::{gradcheck, gradcheck_model, GradcheckEntry, GradcheckReport};
pub use loss::smoothed_cross_entropy;
pub use optim::{AdamW, OptimizerState};
pub use schedule::cosine_lr;
pub use trainer::{checkpoint_name, EpochLog, TrainConfig, Trainer};
