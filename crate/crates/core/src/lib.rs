//! Residual-autoencoder deepfake detector.
//!
//! The encoder's latent block is split channel-wise into a "real" half and
//! a "fake" half. During training a label-driven mask zeroes the opposite
//! half before decoding, and an activation loss drives the mean absolute
//! activation of the own-class half toward one and the other toward zero.
//! At test time an image is called fake when its fake-half activation
//! exceeds its real-half activation. Models trained on one manipulation
//! domain are adapted to new domains by sequential few-shot fine-tuning.
//!
//! Everything runs on a small from-scratch tensor and reverse-mode autodiff
//! core ([`tensor`], [`autograd`]) with a finite-difference oracle
//! ([`gradcheck`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Result, TarError};
pub use tensor::{Scalar, Tensor};
