//! Contrastive deep entity linkage.
//!
//! Record pairs are contrasted token by token into shared and unique groups
//! per attribute, the groups are embedded with frozen word vectors, and a
//! small neural classifier scores the pair as match / non-match.
//!
//! Pipeline: [`data`] → [`lim`] → [`embeddings`] → [`model`] → [`train`] /
//! [`metrics`] / [`explain`]. The [`nn`] module holds the hand-written
//! differentiable building blocks the models are composed from.

pub mod cli;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod explain;
pub mod lim;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
