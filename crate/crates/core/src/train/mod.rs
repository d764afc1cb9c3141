//! Language-modeling objective, optimizer, schedule and the training loop.

mod adamw;
mod config;
mod loss;
mod schedule;
mod trainer;

pub use adamw::{clip_grad_norm, AdamW, ADAM_EPS};
pub use config::TrainConfig;
pub use loss::{lm_loss, vqa_loss_mask, LabelSmoothing, LossMask};
pub use schedule::lr_at;
pub use trainer::{
    evaluate_loss, example_loss, loss_csv, train, write_loss_csv, Example, LossRecord, Trainer,
};
