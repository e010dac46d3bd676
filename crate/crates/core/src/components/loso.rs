//! Leave-one-season-out and test-phase prediction harness.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::{ComponentId, PredictionKey, PredictionSet, Provenance};
use crate::dist::{BinnedDensity, Outcome, Target};
use crate::error::{Error, Result};
use crate::season::{DataSplit, Season, SeasonCollection, SeasonSeries};

/// What a component sees when fitting for one held-out region-season.
pub struct FoldData<'a> {
    pub region: &'a str,
    /// This region's training seasons, held-out season excluded.
    pub training: Vec<&'a SeasonSeries>,
    /// Share of training region-seasons, pooled over all regions, with no onset.
    pub pooled_no_onset: Option<f64>,
    /// Every observed series, for lagged inputs from earlier seasons.
    pub observed: &'a SeasonCollection,
}

/// One predicted density, or the reason there is none.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekPrediction {
    pub season_week: u32,
    pub target: Target,
    pub density: Result<BinnedDensity, String>,
}

/// A component model that can be refitted per fold.
pub trait Component: Send + Sync {
    fn id(&self) -> ComponentId;

    /// Fits on `fold` and predicts every week of `season` for each target.
    ///
    /// An `Err` means the component cannot predict this season at all.
    fn predict_season(
        &self,
        fold: &FoldData<'_>,
        season: &SeasonSeries,
        targets: &[Target],
        seed: u64,
    ) -> Result<Vec<WeekPrediction>>;
}

struct Unit {
    region: String,
    predict: Season,
    fit_on: Vec<Season>,
}

fn pooled_no_onset(data: &SeasonCollection, seasons: &[Season]) -> Option<f64> {
    let onsets: Vec<Option<u32>> = data
        .values()
        .filter(|s| seasons.contains(&s.season))
        .filter_map(|s| s.onset().ok())
        .collect();
    (!onsets.is_empty())
        .then(|| onsets.iter().filter(|o| o.is_none()).count() as f64 / onsets.len() as f64)
}

fn realized_outcome(series: &SeasonSeries, target: Target) -> Result<Outcome> {
    match target {
        Target::OnsetWeek => Ok(Outcome::onset(series.onset()?)),
        Target::PeakWeek => Outcome::peak_week(series.peak()?.1),
        Target::PeakIncidence => Outcome::peak_incidence(series.peak()?.0),
    }
}

fn run_units(
    components: &[Box<dyn Component>],
    data: &SeasonCollection,
    units: Vec<Unit>,
    targets: &[Target],
    seed: u64,
    provenance: Provenance,
) -> Result<PredictionSet> {
    let ids: Vec<ComponentId> = components.iter().map(|c| c.id()).collect();
    let unique: BTreeSet<&ComponentId> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::Config("component ids must be unique".into()));
    }
    let fragments: Vec<Result<PredictionSet>> = units
        .par_iter()
        .map(|unit| {
            let held = &data[&(unit.region.clone(), unit.predict)];
            let fold = FoldData {
                region: &unit.region,
                training: unit
                    .fit_on
                    .iter()
                    .filter_map(|s| data.get(&(unit.region.clone(), *s)))
                    .collect(),
                pooled_no_onset: pooled_no_onset(data, &unit.fit_on),
                observed: data,
            };
            let mut set = PredictionSet::new(provenance);
            let mut missing_truth = Vec::new();
            for &target in targets {
                match realized_outcome(held, target) {
                    Ok(o) => set.set_realized(&unit.region, unit.predict, o)?,
                    Err(e) => missing_truth.push((target, e.to_string())),
                }
            }
            for (component, id) in components.iter().zip(&ids) {
                let key = |week: u32, target: Target| PredictionKey {
                    component: id.clone(),
                    region: unit.region.clone(),
                    season: unit.predict,
                    season_week: week,
                    target,
                };
                match component.predict_season(&fold, held, targets, seed) {
                    Ok(predictions) => {
                        for p in predictions {
                            let k = key(p.season_week, p.target);
                            let no_truth = missing_truth
                                .iter()
                                .find(|(t, _)| *t == p.target)
                                .map(|(_, e)| e);
                            match (p.density, no_truth) {
                                (_, Some(e)) => {
                                    set.mark_absent(k, format!("no realized outcome: {e}"))?
                                }
                                (Ok(d), None) => set.insert(k, d)?,
                                (Err(e), None) => set.mark_absent(k, e)?,
                            }
                        }
                    }
                    Err(e) => {
                        for week in 1..=held.len() as u32 {
                            for &target in targets {
                                set.mark_absent(key(week, target), e.to_string())?;
                            }
                        }
                    }
                }
            }
            Ok(set)
        })
        .collect();
    let mut out = PredictionSet::new(provenance);
    for fragment in fragments {
        out.merge(fragment?)?;
    }
    Ok(out)
}

/// Cross-validated predictions: each training season is held out in turn,
/// every component is refitted on the rest, and every week of the held-out
/// season is predicted.
pub fn loso_predictions(
    components: &[Box<dyn Component>],
    data: &SeasonCollection,
    training: &[Season],
    targets: &[Target],
    seed: u64,
) -> Result<PredictionSet> {
    let training: BTreeSet<Season> = training.iter().copied().collect();
    if training.len() < 3 {
        return Err(Error::Config(format!(
            "leave-one-season-out needs at least 3 training seasons, got {}",
            training.len()
        )));
    }
    let units = data
        .keys()
        .filter(|(_, s)| training.contains(s))
        .map(|(region, held)| Unit {
            region: region.clone(),
            predict: *held,
            fit_on: training.iter().copied().filter(|s| s != held).collect(),
        })
        .collect();
    run_units(components, data, units, targets, seed, Provenance::CrossValidated)
}

/// Test-phase predictions: components fitted once on all training seasons
/// predict every test season.
pub fn test_phase_predictions(
    components: &[Box<dyn Component>],
    data: &SeasonCollection,
    split: &DataSplit,
    targets: &[Target],
    seed: u64,
) -> Result<PredictionSet> {
    let units = data
        .keys()
        .filter(|(_, s)| split.test().contains(s))
        .map(|(region, season)| Unit {
            region: region.clone(),
            predict: *season,
            fit_on: split.training().to_vec(),
        })
        .collect();
    run_units(components, data, units, targets, seed, Provenance::TestPhase)
}
