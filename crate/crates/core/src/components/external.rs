//! Loader for densities produced outside the toolkit.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::{ComponentId, PredictionKey, PredictionSet, Provenance};
use crate::dist::{BinnedDensity, Target, NORMALIZATION_TOLERANCE};
use crate::error::{Error, Result};
use crate::season::Season;

#[derive(Debug, Deserialize)]
struct DensityRow {
    component: String,
    region: String,
    season: String,
    season_week: u32,
    target: String,
    bin_label: String,
    prob: f64,
}

const HEADER: [&str; 7] = [
    "component",
    "region",
    "season",
    "season_week",
    "target",
    "bin_label",
    "prob",
];

/// Parses component-density rows into normalized densities.
///
/// Bins missing from a group have probability zero. When `only` is given,
/// rows naming another component are rejected.
pub(crate) fn read_density_groups(
    input: impl Read,
    only: Option<&ComponentId>,
) -> Result<Vec<(PredictionKey, BinnedDensity)>, Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    match reader.headers() {
        Ok(h) if h.iter().eq(HEADER) => {}
        Ok(h) => {
            return Err(vec![format!(
                "header is '{}', expected '{}'",
                h.iter().collect::<Vec<_>>().join(","),
                HEADER.join(",")
            )])
        }
        Err(e) => return Err(vec![e.to_string()]),
    }
    let mut problems = Vec::new();
    let mut groups: BTreeMap<PredictionKey, (Vec<f64>, Vec<bool>, usize)> = BTreeMap::new();
    for (i, record) in reader.deserialize::<DensityRow>().enumerate() {
        let line = i + 2;
        let row = match record {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let parsed = (|| -> Result<(PredictionKey, usize)> {
            let component = ComponentId::new(row.component.clone());
            if let Some(expected) = only {
                if component != *expected {
                    return Err(Error::Data(format!(
                        "component '{component}' where '{expected}' was expected"
                    )));
                }
            }
            let season: Season = row.season.parse()?;
            let target: Target = row.target.parse()?;
            let len = season.len()?;
            if !(1..=len).contains(&row.season_week) {
                return Err(Error::Domain(format!(
                    "season week {} outside 1..={len}",
                    row.season_week
                )));
            }
            let bin = target.scheme().index_of_label(&row.bin_label).ok_or_else(|| {
                Error::Data(format!("unknown {target} bin label '{}'", row.bin_label))
            })?;
            if !(row.prob >= 0.0) || !row.prob.is_finite() {
                return Err(Error::Data(format!("invalid probability {}", row.prob)));
            }
            Ok((
                PredictionKey {
                    component,
                    region: row.region.clone(),
                    season,
                    season_week: row.season_week,
                    target,
                },
                bin,
            ))
        })();
        let (key, bin) = match parsed {
            Ok(v) => v,
            Err(e) => {
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let n = key.target.scheme().len();
        let (probs, seen, first_line) = groups
            .entry(key.clone())
            .or_insert_with(|| (vec![0.0; n], vec![false; n], line));
        if seen[bin] {
            problems.push(format!(
                "line {line}: duplicate bin '{}' for a key first seen on line {first_line}",
                row.bin_label
            ));
            continue;
        }
        seen[bin] = true;
        probs[bin] = row.prob;
    }
    let mut out = Vec::with_capacity(groups.len());
    for (key, (probs, _, first_line)) in groups {
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            problems.push(format!(
                "line {first_line}: probabilities for {} {} {} week {} {} sum to {total}",
                key.component, key.region, key.season, key.season_week, key.target
            ));
            continue;
        }
        match BinnedDensity::new(key.target, probs) {
            Ok(d) => out.push((key, d)),
            Err(e) => problems.push(format!("line {first_line}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(problems)
    }
}

/// Reads component densities from any reader into a prediction-set fragment.
pub fn read_component_densities(
    input: impl Read,
    component: &ComponentId,
) -> Result<Vec<(PredictionKey, BinnedDensity)>, Vec<String>> {
    read_density_groups(input, Some(component))
}

/// Loads an externally produced component's densities.
///
/// The returned fragment has no realized outcomes; merge it with a set that does.
pub fn external_load(
    file: &Path,
    component: &ComponentId,
    provenance: Provenance,
) -> Result<PredictionSet> {
    let groups = read_density_groups(std::fs::File::open(file)?, Some(component))
        .map_err(|p| Error::ingest(file, p))?;
    let mut set = PredictionSet::new(provenance);
    for (key, density) in groups {
        set.insert(key, density)?;
    }
    Ok(set)
}
