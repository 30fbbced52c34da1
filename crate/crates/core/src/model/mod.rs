//! The residual autoencoder: configuration, latent split and classification
//! rule, and the network itself.

mod config;
mod latent;
mod net;

pub use config::{count_conv_layers, ArchConfig, Variant};
pub use latent::{classify, classify_pair, facilitate, per_class_activation, Label, LatentTensor};
pub use net::{
    build_model, decode, encode, facilitate_mask, forward_train, ablation_variant, BnStatsUpdate,
    ModelParams, Mode, Session, TrainOutputs,
};
