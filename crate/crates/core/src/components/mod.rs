//! Component forecast models and the tables of their predictions.

mod external;
mod kde;
mod loso;
mod prediction_set;
mod sar;
mod trajectory;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use external::{external_load, read_component_densities};
pub use kde::{silverman_bandwidth, KdeComponent, KdeModel, DEFAULT_SAMPLES};
pub use loso::{loso_predictions, test_phase_predictions, Component, FoldData, WeekPrediction};
pub use prediction_set::{PredictionKey, PredictionSet, Provenance, RealizedKey};
pub use sar::{SarComponent, SarModel, LOG_OFFSET};
pub use trajectory::{trajectories_to_target_density, TrajectorySample};

/// Name of a component model, e.g. `kde`, `sar`, `ext:kcde`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(String);

impl ComponentId {
    pub fn new(name: impl Into<String>) -> Self {
        ComponentId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId(s.to_string())
    }
}
