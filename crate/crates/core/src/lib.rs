//! Certified robustness verification for LSTM classifiers.
//!
//! The gate products `σ(x)·tanh(y)` and `σ(x)·y` are bounded by pairs of
//! affine planes obtained from small linear programs. Planes are propagated
//! through the unrolled network as symbolic linear bounds and concretized by
//! backsubstitution onto the L∞ input box. Optional multi-plane refinement
//! mixes candidate planes from sub-regions with simplex weights tuned by
//! projected gradient ascent on the certified margin.

pub mod domain;
pub mod error;
pub mod harness;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod refine;
pub mod relax;
pub mod verifier;

pub use error::{Error, Result};
