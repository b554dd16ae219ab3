//! Kernel cross-view collaborative representation matching for person
//! re-identification across two cameras.
//!
//! [`xcrc::TrainedSolver`] is the coupled kernel coder; [`pipeline`] runs
//! it or any of the comparison matchers on a train/test partition and
//! [`eval`] turns rankings into CMC curves over repeated trials. The guide
//! in `book/` walks through each piece.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod linalg;
pub mod pipeline;
pub mod ranking;
pub mod subspace;
pub mod xcrc;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/coupled-coding.md")]
    mod coupled_coding {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/subspaces.md")]
    mod subspaces {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/viper.md")]
    mod viper {}
}
