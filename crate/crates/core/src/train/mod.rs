//! Losses, base-domain training and sequential few-shot transfer.

mod loss;
mod trainer;
mod transfer;

pub use loss::{
    activation_loss, activation_loss_var, reconstruction_loss, reconstruction_loss_var, total_loss,
    total_loss_var, LossWeights,
};
pub use trainer::{
    train_base, train_epochs, ActivationSource, EpochRecord, History, Precision, TrainConfig,
};
pub use transfer::{
    sequence_transfer, sequence_transfer_each, transfer_few_shot, Snapshot, TransferPlan, TransferStage,
};
