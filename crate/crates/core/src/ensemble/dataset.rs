//! Assembling training tables from component predictions, and applying
//! trained ensembles back to prediction sets.

use std::collections::{BTreeMap, BTreeSet};

use super::features::{FeatureLayout, FeatureVector};
use super::loss::{StackingRow, DENSITY_FLOOR};
use super::model::EnsembleModel;
use crate::components::{ComponentId, PredictionKey, PredictionSet};
use crate::dist::{uncertainty_90, BinnedDensity, Target};
use crate::error::{Error, Result};
use crate::season::{Season, SeasonCollection};

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub season: Season,
    pub season_week: u32,
    pub features: FeatureVector,
    /// Each component's probability of the realized outcome, unfloored.
    pub densities: Vec<f64>,
}

/// Weight-training rows for one region and target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTable {
    pub region: String,
    pub target: Target,
    pub components: Vec<ComponentId>,
    pub rows: Vec<TableRow>,
}

impl TrainingTable {
    pub fn floored_densities(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.densities.iter().map(|f| f.max(DENSITY_FLOOR)).collect())
            .collect()
    }

    /// Encodes rows for boosting; rows lacking a feature the layout needs
    /// (such as unobserved current wILI) are skipped.
    pub fn stacking_rows(&self, layout: &FeatureLayout) -> Result<Vec<StackingRow>> {
        let rows: Vec<StackingRow> = self
            .rows
            .iter()
            .filter_map(|r| {
                let x = layout.encode(&r.features).ok()?;
                Some(StackingRow::floored(r.season, x, &r.densities))
            })
            .collect();
        if rows.is_empty() {
            return Err(Error::Fit(format!(
                "no usable training rows for {} {}",
                self.region, self.target
            )));
        }
        Ok(rows)
    }
}

/// Observed wILI at season week `week` (1-based), if recorded.
pub fn current_wili(data: &SeasonCollection, region: &str, season: Season, week: u32) -> Option<f64> {
    data.get(&(region.to_string(), season))
        .and_then(|s| s.wili.get(week.checked_sub(1)? as usize).copied().flatten())
}

fn feature_vector(
    densities: &BTreeMap<&ComponentId, &BinnedDensity>,
    uncertainty_components: &[ComponentId],
    data: &SeasonCollection,
    region: &str,
    season: Season,
    week: u32,
) -> Result<FeatureVector> {
    let mut uncertainty = BTreeMap::new();
    for c in uncertainty_components {
        if let Some(d) = densities.get(c) {
            uncertainty.insert(c.clone(), uncertainty_90(d)?);
        }
    }
    Ok(FeatureVector {
        season_week: week,
        uncertainty,
        current_wili: current_wili(data, region, season, week),
    })
}

/// Every `(region, season, week, target)` slot mentioned for any of `components`.
fn slots(set: &PredictionSet, components: &[ComponentId]) -> BTreeSet<(String, Target, Season, u32)> {
    let wanted: BTreeSet<&ComponentId> = components.iter().collect();
    set.densities()
        .map(|(k, _)| k)
        .chain(set.absences().map(|(k, _)| k))
        .filter(|k| wanted.contains(&k.component))
        .map(|k| (k.region.clone(), k.target, k.season, k.season_week))
        .collect()
}

fn lookup<'a>(
    set: &'a PredictionSet,
    components: &'a [ComponentId],
    region: &str,
    season: Season,
    week: u32,
    target: Target,
) -> std::result::Result<BTreeMap<&'a ComponentId, &'a BinnedDensity>, String> {
    let mut out = BTreeMap::new();
    for c in components {
        let key = PredictionKey {
            component: c.clone(),
            region: region.to_string(),
            season,
            season_week: week,
            target,
        };
        match set.density(&key) {
            Some(d) => {
                out.insert(c, d);
            }
            None => {
                let why = set.absence(&key).unwrap_or("no prediction");
                return Err(format!("{c}: {why}"));
            }
        }
    }
    Ok(out)
}

/// Builds one training table per region and target. Rows where any
/// component is absent, or with no realized outcome, are dropped.
pub fn training_tables(
    set: &PredictionSet,
    data: &SeasonCollection,
    components: &[ComponentId],
    uncertainty_components: &[ComponentId],
) -> Result<Vec<TrainingTable>> {
    if components.is_empty() {
        return Err(Error::Config("no ensemble components".into()));
    }
    let mut tables: BTreeMap<(String, Target), TrainingTable> = BTreeMap::new();
    for (region, target, season, week) in slots(set, components) {
        let Some(outcome) = set.realized(&region, season, target) else {
            continue;
        };
        let Ok(found) = lookup(set, components, &region, season, week, target) else {
            continue;
        };
        let densities = components
            .iter()
            .map(|c| found[c].prob_of(outcome))
            .collect::<Result<Vec<f64>>>()?;
        let features = feature_vector(&found, uncertainty_components, data, &region, season, week)?;
        tables
            .entry((region.clone(), target))
            .or_insert_with(|| TrainingTable {
                region: region.clone(),
                target,
                components: components.to_vec(),
                rows: Vec::new(),
            })
            .rows
            .push(TableRow {
                season,
                season_week: week,
                features,
                densities,
            });
    }
    Ok(tables.into_values().collect())
}

/// One component's weight in one ensemble prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTraceRow {
    pub region: String,
    pub target: Target,
    pub scheme: String,
    pub season_week: u32,
    pub uncertainty_sar: Option<u32>,
    pub uncertainty_kcde: Option<u32>,
    pub wili: Option<f64>,
    pub component: ComponentId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppliedEnsembles {
    pub predictions: PredictionSet,
    pub weights: Vec<WeightTraceRow>,
}

fn is_kcde(c: &ComponentId) -> bool {
    c.as_str() == "kcde" || c.as_str().starts_with("ext:")
}

/// Applies each model to every slot of its region and target in `set`,
/// storing the mixtures under the scheme name. Slots where a component
/// is absent, or a required feature is missing, become absent.
pub fn apply_models(
    models: &[EnsembleModel],
    set: &PredictionSet,
    data: &SeasonCollection,
) -> Result<AppliedEnsembles> {
    let mut out = PredictionSet::new(set.provenance());
    let mut weights = Vec::new();
    for model in models {
        model.validate()?;
        let id = model.scheme.component_id();
        let unc_components: Vec<ComponentId> = match &model.weights {
            super::model::ModelWeights::Feature { layout, .. } => layout.uncertainty_components.clone(),
            _ => Vec::new(),
        };
        for (region, target, season, week) in slots(set, &model.components) {
            if region != model.region || target != model.target {
                continue;
            }
            let key = PredictionKey {
                component: id.clone(),
                region: region.clone(),
                season,
                season_week: week,
                target,
            };
            let found = match lookup(set, &model.components, &region, season, week, target) {
                Ok(found) => found,
                Err(why) => {
                    out.mark_absent(key, why)?;
                    continue;
                }
            };
            let x = feature_vector(&found, &unc_components, data, &region, season, week)?;
            let w = match model.predict_weights(&x) {
                Ok(w) => w,
                Err(e) => {
                    out.mark_absent(key, e.to_string())?;
                    continue;
                }
            };
            let ordered: Vec<&BinnedDensity> = model.components.iter().map(|c| found[c]).collect();
            out.insert(key, super::weights::mix(&ordered, &w)?)?;

            let unc_of = |pick: &dyn Fn(&ComponentId) -> bool| -> Result<Option<u32>> {
                model
                    .components
                    .iter()
                    .find(|c| pick(c))
                    .map(|c| uncertainty_90(found[c]))
                    .transpose()
            };
            let uncertainty_sar = unc_of(&|c| c.as_str() == "sar")?;
            let uncertainty_kcde = unc_of(&is_kcde)?;
            for (c, wt) in model.components.iter().zip(&w) {
                weights.push(WeightTraceRow {
                    region: region.clone(),
                    target,
                    scheme: model.scheme.to_string(),
                    season_week: week,
                    uncertainty_sar,
                    uncertainty_kcde,
                    wili: x.current_wili,
                    component: c.clone(),
                    weight: *wt,
                });
            }
        }
        for ((region, season, target), outcome) in set.realized_outcomes() {
            if *region == model.region && *target == model.target && out.realized(region, *season, *target).is_none() {
                out.set_realized(region, *season, outcome.clone())?;
            }
        }
    }
    Ok(AppliedEnsembles {
        predictions: out,
        weights,
    })
}
