//! Low-rank matrix completion with multi-weight subspace priors.
//!
//! The solver minimizes `‖Q_U Z Q_V‖_*` subject to a data-fit constraint,
//! where `Q_U`, `Q_V` down-weight the directions of prior column and row
//! spaces. [`weights`] picks the weights by minimizing a sample-complexity
//! bound, [`fdd`] derives priors from a time-varying channel model and
//! [`experiments`] runs the success-rate sweeps.

pub mod error;
pub mod experiments;
pub mod fdd;
pub mod linalg;
pub mod sampling;
pub mod seed;
pub mod solver;
pub mod subspaces;
pub mod weights;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SubspaceBasis, SvdResult};

/// Guide chapters, compiled so their snippets run as doc-tests.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/subspaces.md")]
    pub struct Subspaces;
    #[doc = include_str!("../../../book/src/weights.md")]
    pub struct Weights;
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub struct Sampling;
    #[doc = include_str!("../../../book/src/solver.md")]
    pub struct Solver;
    #[doc = include_str!("../../../book/src/fdd.md")]
    pub struct Fdd;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
