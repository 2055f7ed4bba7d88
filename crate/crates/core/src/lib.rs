//! Fluid models, divergent fluid constructions and an adversarial
//! fluid-tracking scheduler for multiclass queueing networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`network`]: topologies, validation and derived constants;
//! - [`fluid`]: piecewise-linear fluid solutions, their validators and a
//!   static-priority fluid integrator;
//! - [`divergence`]: linearly divergent fluid solutions built from an
//!   instability witness;
//! - [`fdp`]: finite decomposition of two-station fluid solutions;
//! - [`sim`]: discrete-event simulation under head-of-line policies;
//! - [`tracker`]: the fluid-tracking policy and its restart supervisor;
//! - [`ld`]: large-deviation rates and Monte-Carlo tail estimates;
//! - [`analysis`]: stability, divergence and closeness estimators.

pub mod analysis;
pub mod dist;
pub mod divergence;
pub mod error;
pub mod fdp;
pub mod fixtures;
pub mod fluid;
pub mod ld;
pub mod network;
pub mod sim;
pub mod tracker;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/fluid.md")]
    mod fluid {}
    #[doc = include_str!("../../../book/src/divergence.md")]
    mod divergence {}
    #[doc = include_str!("../../../book/src/fdp.md")]
    mod fdp {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/tracker.md")]
    mod tracker {}
    #[doc = include_str!("../../../book/src/large_deviations.md")]
    mod large_deviations {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
}
