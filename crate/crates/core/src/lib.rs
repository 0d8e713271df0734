//! Equilibration of multi-time quantum processes when waiting times are
//! only known up to a finite resolution.
//!
//! Averaging unitary evolution over a waiting-time distribution gives a
//! partial dephasing map ([`PartialDephasingMap`]). This crate builds those
//! maps, propagates processes that interleave them with weighted operations
//! ([`ProcessSpec`]), and evaluates the single-time and multi-time
//! equilibration bounds ([`single_time_bound`], [`theorem_bound`]).
//! Choi process tensors ([`choi`]) and Monte Carlo estimators
//! ([`montecarlo`]) give independent checks. [`experiment`] runs JSON
//! experiment configs.
//!
//! ```
//! use fuzzproc::bounds::theorem_bound;
//! use fuzzproc::dephasing::Family;
//! use fuzzproc::ensemble::ProcessEnsemble;
//! use fuzzproc::rng::seeded_rng;
//!
//! let spec = ProcessEnsemble::new(2, 2, 1, 2, Family::UniformWindow).sample(&mut seeded_rng(1, 0))?;
//! let report = theorem_bound(&spec)?;
//! assert!(report.lhs <= report.rhs);
//! # Ok::<(), fuzzproc::error::Error>(())
//! ```
//!
//! The guide in `book/` walks through each concept; its code blocks run as
//! doctests of this crate.

pub mod bounds;
pub mod choi;
pub mod config;
pub mod dephasing;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod models;
pub mod montecarlo;
pub mod operator;
pub mod process;
pub mod quadrature;
pub mod rng;
pub mod spectral;
pub mod superop;

pub use bounds::{single_time_bound, theorem_bound, BoundReport, SingleTimeBound};
pub use dephasing::{Family, PartialDephasingMap, WaitingTimeDistribution};
pub use error::{Error, Result};
pub use operator::Operator;
pub use process::{ProcessSpec, PropagationMode, Step, WeightedOperation};
pub use spectral::SpectralDecomposition;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dephasing.md")]
    mod dephasing {}
    #[doc = include_str!("../../../book/src/single-time.md")]
    mod single_time {}
    #[doc = include_str!("../../../book/src/processes.md")]
    mod processes {}
    #[doc = include_str!("../../../book/src/multi-time-bound.md")]
    mod multi_time_bound {}
    #[doc = include_str!("../../../book/src/monte-carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
