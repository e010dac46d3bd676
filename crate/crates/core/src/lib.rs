//! Weighted density ensembles for binned forecasts of seasonal epidemic targets.
//!
//! The crate covers the full path from weekly incidence data to evaluated
//! ensembles:
//!
//! - [`dist`]: bin schemes, binned densities and the log score;
//! - [`season`]: the season calendar, data ingestion and target extraction;
//! - [`components`]: KDE and seasonal AR component models, external densities
//!   and the leave-one-season-out harness;
//! - [`ensemble`]: equal, constant (degenerate EM) and feature-dependent
//!   (softmax-gated boosted trees) weights;
//! - [`evaluation`]: score tables, per-season rankings and exports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod components;
pub mod dist;
pub mod ensemble;
mod error;
pub mod evaluation;
pub mod rng;
pub mod season;

pub use components::{ComponentId, PredictionKey, PredictionSet, Provenance};
pub use dist::{BinScheme, BinnedDensity, Outcome, OutcomeValue, Target};
pub use error::{Error, Result};
pub use season::{DataSplit, Season, SeasonCollection, SeasonSeries, TargetValues};
