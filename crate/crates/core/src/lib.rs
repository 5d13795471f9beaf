//! Finite-difference and physics-informed neural network solvers for the 2D
//! advection-diffusion equation, plus the benchmark harness comparing them.

pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod field_io;
pub mod loss;
pub mod network;
pub mod optim;
pub mod real;
pub mod rng;

pub use error::{Error, Result};
pub use real::{Precision, Real};

/// The guide's snippets, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/fdm.md")]
    pub struct Fdm;
    #[doc = include_str!("../../../book/src/network.md")]
    pub struct Network;
    #[doc = include_str!("../../../book/src/loss.md")]
    pub struct Loss;
    #[doc = include_str!("../../../book/src/optimizers.md")]
    pub struct Optimizers;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
