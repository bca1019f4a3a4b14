//! Question-conditioned frame-importance scoring for video question answering.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every pure piece of the
//! pipeline:
//!
//! * [`numerics`]: dense arrays, a reverse-mode gradient tape, a
//!   finite-difference oracle and the Adam optimizer.
//! * [`features`]: frame/question feature containers and their invariants.
//! * [`scorer`]: the cross-attention repeat scoring network.
//! * [`aoi`]: Add-One-In repeat-gain supervision against an [`aoi::Oracle`].
//! * [`losses`]: standardized regression and margin ranking objectives.
//! * [`trainer`]: the training loop and ranking evaluation.
//! * [`planner`]: top-k in-place frame repetition plans.
//! * [`synthetic`]: a seeded dataset generator with a closed-form oracle.
//!
//! File formats, HTTP transport and the command line live in the companion
//! `framerepeat` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod aoi;
mod error;
pub mod features;
pub mod losses;
pub mod numerics;
pub mod planner;
pub mod scorer;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, OracleError, OracleErrorKind, Result};
