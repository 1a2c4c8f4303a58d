//! Jacobian-regularized variational autoencoders on a from-scratch
//! reverse-mode autodiff engine, with the datasets, disentanglement
//! metrics and linear baselines needed to evaluate them.

pub mod autodiff;
pub mod datasets;
mod error;
pub mod linear;
pub mod metrics;
pub mod rng;
pub mod train;
pub mod vae;

pub use error::{Error, Result};

/// The guide's chapters, compiled so that their listings run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
