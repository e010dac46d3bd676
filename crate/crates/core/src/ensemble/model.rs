use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::boost::{boost_fit, TrainConfig, WeightField};
use super::dataset::TrainingTable;
use super::dem::dem_fit;
use super::features::{FeatureLayout, FeatureVector};
use super::grid::{grid_search, CvLoss, GridSpec};
use super::weights::{check_simplex, mix};
use crate::components::ComponentId;
use crate::dist::{BinnedDensity, Target};
use crate::error::{Error, Result};

/// Ensemble weighting schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Equal weights.
    #[serde(rename = "ew")]
    Ew,
    /// Constant weights fit by degenerate EM.
    #[serde(rename = "cw")]
    Cw,
    /// Week and uncertainty features, no penalties, fixed iterations.
    #[serde(rename = "fw")]
    Fw,
    #[serde(rename = "fw-reg-w")]
    FwRegW,
    #[serde(rename = "fw-reg-wu")]
    FwRegWu,
    #[serde(rename = "fw-reg-wui")]
    FwRegWui,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Ew,
        Scheme::Cw,
        Scheme::Fw,
        Scheme::FwRegW,
        Scheme::FwRegWu,
        Scheme::FwRegWui,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ew => "ew",
            Scheme::Cw => "cw",
            Scheme::Fw => "fw",
            Scheme::FwRegW => "fw-reg-w",
            Scheme::FwRegWu => "fw-reg-wu",
            Scheme::FwRegWui => "fw-reg-wui",
        }
    }

    pub fn component_id(self) -> ComponentId {
        ComponentId::new(self.as_str())
    }

    /// Feature layout for feature-weighted schemes.
    pub fn layout(self, uncertainty_components: &[ComponentId]) -> Option<FeatureLayout> {
        let (use_week, unc, use_wili) = match self {
            Scheme::Ew | Scheme::Cw => return None,
            Scheme::FwRegW => (true, false, false),
            Scheme::Fw | Scheme::FwRegWu => (true, true, false),
            Scheme::FwRegWui => (true, true, true),
        };
        Some(FeatureLayout {
            use_week,
            uncertainty_components: if unc { uncertainty_components.to_vec() } else { Vec::new() },
            use_wili,
        })
    }

    /// Whether iterations and penalties are chosen by grid search.
    pub fn is_searched(self) -> bool {
        matches!(self, Scheme::FwRegW | Scheme::FwRegWu | Scheme::FwRegWui)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scheme::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!("unknown scheme {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelWeights {
    Equal,
    Constant {
        weights: Vec<f64>,
    },
    Feature {
        layout: FeatureLayout,
        field: WeightField,
        config: TrainConfig,
    },
}

/// A trained ensemble for one region and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub scheme: Scheme,
    pub region: String,
    pub target: Target,
    pub components: Vec<ComponentId>,
    pub weights: ModelWeights,
}

impl EnsembleModel {
    pub fn validate(&self) -> Result<()> {
        let m = self.components.len();
        if m == 0 {
            return Err(Error::Contract("ensemble has no components".into()));
        }
        match &self.weights {
            ModelWeights::Equal => {}
            ModelWeights::Constant { weights } => {
                if weights.len() != m {
                    return Err(Error::Contract(format!("{} weights for {m} components", weights.len())));
                }
                check_simplex(weights)?;
            }
            ModelWeights::Feature { layout, field, config } => {
                config.validate()?;
                field.check()?;
                if field.n_components() != m {
                    return Err(Error::Contract(format!(
                        "weight field has {} components, model has {m}",
                        field.n_components()
                    )));
                }
                if field.n_features() != layout.width() {
                    return Err(Error::Contract("weight field and layout widths differ".into()));
                }
            }
        }
        Ok(())
    }

    pub fn predict_weights(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        let m = self.components.len();
        match &self.weights {
            ModelWeights::Equal => Ok(vec![1.0 / m as f64; m]),
            ModelWeights::Constant { weights } => Ok(weights.clone()),
            ModelWeights::Feature { layout, field, .. } => field.weights(&layout.encode(x)?),
        }
    }

    /// Mixes component densities, given in `components` order.
    pub fn predict(&self, densities: &[&BinnedDensity], x: &FeatureVector) -> Result<BinnedDensity> {
        if let Some(d) = densities.iter().find(|d| d.target() != self.target) {
            return Err(Error::Contract(format!("{} model given a {} density", self.target, d.target())));
        }
        mix(densities, &self.predict_weights(x)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: EnsembleModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Shared tree settings; iterations and penalties are overridden per scheme.
    pub base: TrainConfig,
    /// Iterations for the unpenalized feature-weighted scheme.
    pub fw_iterations: usize,
    pub grid: GridSpec,
    pub dem_tolerance: f64,
    pub dem_max_iterations: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            base: TrainConfig::default(),
            fw_iterations: 300,
            grid: GridSpec::default(),
            dem_tolerance: 1e-10,
            dem_max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: EnsembleModel,
    /// Grid-search losses, for searched schemes.
    pub cv_losses: Vec<CvLoss>,
}

/// Trains one scheme on a training table.
pub fn train_model(
    scheme: Scheme,
    table: &TrainingTable,
    uncertainty_components: &[ComponentId],
    options: &TrainOptions,
) -> Result<TrainedModel> {
    if let Some(c) = uncertainty_components.iter().find(|c| !table.components.contains(c)) {
        return Err(Error::Config(format!("uncertainty component {c} is not an ensemble component")));
    }
    let mut cv_losses = Vec::new();
    let weights = match scheme {
        Scheme::Ew => ModelWeights::Equal,
        Scheme::Cw => {
            let fit = dem_fit(&table.floored_densities(), options.dem_tolerance, options.dem_max_iterations)?;
            ModelWeights::Constant { weights: fit.weights }
        }
        _ => {
            let layout = scheme
                .layout(uncertainty_components)
                .ok_or_else(|| Error::Contract(format!("{scheme} has no feature layout")))?;
            let rows = table.stacking_rows(&layout)?;
            let config = if scheme.is_searched() {
                let result = grid_search(&rows, &options.base, &options.grid)?;
                cv_losses = result.losses;
                result.best
            } else {
                TrainConfig {
                    iterations: options.fw_iterations,
                    lambda_leaf: 0.0,
                    lambda_value: 0.0,
                    ..options.base
                }
            };
            let field = boost_fit(&rows, &config)?;
            ModelWeights::Feature { layout, field, config }
        }
    };
    let model = EnsembleModel {
        scheme,
        region: table.region.clone(),
        target: table.target,
        components: table.components.clone(),
        weights,
    };
    model.validate()?;
    Ok(TrainedModel { model, cv_losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!(matches!("fw-reg-wx".parse::<Scheme>(), Err(Error::Config(_))));
        assert!("EW".parse::<Scheme>().is_err());
    }

    #[test]
    fn layouts() {
        let u = vec![ComponentId::from("sar")];
        assert!(Scheme::Cw.layout(&u).is_none());
        assert_eq!(Scheme::FwRegW.layout(&u).unwrap().width(), 1);
        assert_eq!(Scheme::Fw.layout(&u).unwrap().width(), 2);
        assert_eq!(Scheme::FwRegWui.layout(&u).unwrap().names(), ["season_week", "uncertainty_sar", "wili"]);
    }

    #[test]
    fn constant_model_validation() {
        let mut model = EnsembleModel {
            scheme: Scheme::Cw,
            region: "r".into(),
            target: Target::PeakWeek,
            components: vec!["a".into(), "b".into()],
            weights: ModelWeights::Constant { weights: vec![0.25, 0.75] },
        };
        model.validate().unwrap();
        let back = EnsembleModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        model.weights = ModelWeights::Constant { weights: vec![0.5, 0.6] };
        assert!(EnsembleModel::from_json(&model.to_json().unwrap()).is_err());
    }
}
