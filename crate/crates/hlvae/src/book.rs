//! The user guide, bound into the crate docs so that every Rust code sample
//! in `book/` compiles and runs under `cargo test --doc`. One module per
//! chapter keeps doctest failures attributable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/getting-started.md")]
pub mod getting_started {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data_guide {}

#[doc = include_str!("../../../book/src/likelihoods.md")]
pub mod likelihoods_guide {}

#[doc = include_str!("../../../book/src/gp-prior.md")]
pub mod gp_prior_guide {}

#[doc = include_str!("../../../book/src/elbo.md")]
pub mod elbo_guide {}

#[doc = include_str!("../../../book/src/prediction.md")]
pub mod prediction_guide {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation_guide {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff_guide {}
