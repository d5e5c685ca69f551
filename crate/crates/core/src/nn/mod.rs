//! Hand-written differentiable building blocks.
//!
//! Every forward function has a matching backward function returning exact
//! analytic gradients; [`gradcheck`] compares them against central finite
//! differences. Values are `f64` throughout and matrices follow the
//! column-per-token convention (`X` is `d × n`).

pub mod adam;
pub mod attention;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;

pub use adam::{AdamConfig, AdamState};
pub use attention::{AttentionCache, AttentionUnit, Query, SelfAttention, SelfAttentionCache};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layers::Affine;
pub use ops::{cross_entropy, relu, relu_backward, softmax, softmax_backward};
pub use params::{Gradients, ParamId, ParamSet, Parameter};
