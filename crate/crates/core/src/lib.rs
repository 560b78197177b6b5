//! Continual neural architecture search.
//!
//! A task network is trained on a growing, class-incremental dataset. At
//! each step, candidate expansions are produced with function-preserving
//! Net2Net morphisms, sized by two REINFORCE actors, briefly trained, and
//! adopted only when a heuristic gate judges the expansion worthwhile.

pub mod arch;
pub mod config;
pub mod data;
pub mod driver;
pub mod error;
pub mod net2net;
pub mod nn;
pub mod report;
pub mod rl;
pub mod runner;
pub mod search;
pub mod seed;
pub mod stream;

pub use error::{Error, Result};
