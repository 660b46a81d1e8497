//! Graph sequential neural ODE processes for link prediction on
//! continuous-time dynamic graphs.
//!
//! A temporal graph encoder turns observed interactions into per-link
//! representations, an aggregator folds them into a global latent state,
//! a neural ODE carries that state forward in time, and a decoder scores
//! candidate links conditioned on a latent sample. Training maximizes an
//! evidence lower bound; evaluation ranks each true link against sampled
//! negatives.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod ctdg;
pub mod decoder_loss;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod latent;
pub mod model;
pub mod odeint;
pub mod train;

pub use error::{Error, Result};
