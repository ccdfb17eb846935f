//! Fine-grained cross-modal contextual consistency verification.
//!
//! The crate covers the whole desk-scale pipeline: a synthetic corpus with
//! oracle labels, toy image/text encoders with cross-modal fusion, the
//! per-dimension contextual reasoning stack with its prediction heads, three
//! training paradigms (supervised, policy-gradient and adversarial) and the
//! evaluation harness.

pub mod adv;
pub mod config;
pub mod corpus;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fccr;
pub mod gradcheck;
pub mod grammar;
pub mod model;
pub mod optim;
pub mod rl;
pub mod tensor;
pub mod train;
pub mod types;

pub use error::{Error, Result};
