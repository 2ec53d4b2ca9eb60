//! Topology-regularized representation learning for survival prediction
//! from multi-modal 3D MRI.

pub mod attribution;
pub mod config;
pub mod container;
pub mod dataset;
pub mod diffcore;
pub mod error;
pub mod harmonize;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod nifti;
pub mod pipeline;
pub mod recon;
pub mod survival;
pub mod topology;
pub mod train;
pub mod volume;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/volumes.md")]
    struct Volumes;
    #[doc = include_str!("../../../book/src/persistence.md")]
    struct Persistence;
    #[doc = include_str!("../../../book/src/distances.md")]
    struct Distances;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/survival.md")]
    struct Survival;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/attribution.md")]
    struct Attribution;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../README.md")]
    struct Readme;
}
