//! Heterogeneous longitudinal variational autoencoder.
//!
//! A library and CLI for modelling mixed-type tabular time series: amortized
//! inference with a multi-output additive Gaussian-process prior over latent
//! trajectories, per-feature observation likelihoods (Gaussian, log-normal,
//! Poisson, categorical, ordinal) with missing-data masking, a mini-batch
//! upper bound on the prior KL term, and GP-conditioned prediction and
//! imputation.

pub mod book;
pub mod checkpoint;
pub mod data;
pub mod elbo;
pub mod kernel;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod predict;
pub mod synth;
pub mod tensor;
