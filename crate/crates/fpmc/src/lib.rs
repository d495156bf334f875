//! Filtered posterior mean collections: network-free analytical diffusion
//! denoisers built from per-dimension-weighted posterior means over finite
//! image datasets.
//!
//! The crate provides:
//!
//! - the core estimator math: filtered likelihoods, posteriors, posterior
//!   means, and collection aggregation ([`estimator`], [`model`]);
//! - classical baselines: the empirical posterior mean ("optimal") denoiser
//!   and the eigendecomposition-based Wiener filter ([`classical`]);
//! - constructors for the prior patch-based denoiser families
//!   ([`constructors`]);
//! - gradient-based fine-tuning of query precisions and response weights
//!   against a target denoiser ([`finetune`]);
//! - source-distribution augmentation ([`augment`]);
//! - deterministic PF-ODE sampling with the Heun solver ([`sampler`]);
//! - quantitative comparison protocols ([`eval`]).

// Checks like `!(t > 0.0)` are NaN-rejecting by construction; partial_cmp
// would obscure that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod classical;
pub mod cli;
pub mod constructors;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod finetune;
pub mod geometry;
pub mod manifest;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod source;
pub mod tensor_io;

pub use dataset::Dataset;
pub use denoiser::Denoiser;
pub use error::{FpmcError, Result};
pub use geometry::ImageGeometry;
pub use model::FpmcModel;
pub use schedule::DiffusionSchedule;
pub use source::SourceMeasure;
