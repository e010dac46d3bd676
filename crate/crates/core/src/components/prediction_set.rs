use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ComponentId;
use crate::dist::{BinnedDensity, Outcome, OutcomeValue, Target};
use crate::error::{Error, Result};
use crate::season::Season;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    CrossValidated,
    TestPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredictionKey {
    pub component: ComponentId,
    pub region: String,
    pub season: Season,
    pub season_week: u32,
    pub target: Target,
}

/// `(region, season, target)`: realized outcomes are shared by all components.
pub type RealizedKey = (String, Season, Target);

/// Component predictive densities keyed by component, region, season, week
/// and target, with the realized outcome of every region-season-target.
///
/// Keys a component could not predict are kept as absent, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    provenance: Provenance,
    densities: BTreeMap<PredictionKey, BinnedDensity>,
    absent: BTreeMap<PredictionKey, String>,
    realized: BTreeMap<RealizedKey, Outcome>,
}

const DENSITY_HEADER: [&str; 7] = [
    "component",
    "region",
    "season",
    "season_week",
    "target",
    "bin_label",
    "prob",
];
const REALIZED_HEADER: [&str; 5] = ["region", "season", "target", "value", "tied_weeks"];

impl PredictionSet {
    pub fn new(provenance: Provenance) -> Self {
        PredictionSet {
            provenance,
            densities: BTreeMap::new(),
            absent: BTreeMap::new(),
            realized: BTreeMap::new(),
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn insert(&mut self, key: PredictionKey, density: BinnedDensity) -> Result<()> {
        if density.target() != key.target {
            return Err(Error::Contract(format!(
                "{} density stored under a {} key",
                density.target(),
                key.target
            )));
        }
        if self.densities.contains_key(&key) || self.absent.contains_key(&key) {
            return Err(Error::Contract(format!("duplicate prediction key {key:?}")));
        }
        self.densities.insert(key, density);
        Ok(())
    }

    pub fn mark_absent(&mut self, key: PredictionKey, reason: impl Into<String>) -> Result<()> {
        if self.densities.contains_key(&key) || self.absent.contains_key(&key) {
            return Err(Error::Contract(format!("duplicate prediction key {key:?}")));
        }
        self.absent.insert(key, reason.into());
        Ok(())
    }

    /// Records a realized outcome; re-recording must agree with the first value.
    pub fn set_realized(&mut self, region: &str, season: Season, outcome: Outcome) -> Result<()> {
        let key = (region.to_string(), season, outcome.target());
        match self.realized.get(&key) {
            Some(existing) if *existing != outcome => Err(Error::Contract(format!(
                "conflicting realized outcomes for {region} {season} {}",
                outcome.target()
            ))),
            Some(_) => Ok(()),
            None => {
                self.realized.insert(key, outcome);
                Ok(())
            }
        }
    }

    pub fn density(&self, key: &PredictionKey) -> Option<&BinnedDensity> {
        self.densities.get(key)
    }

    pub fn absence(&self, key: &PredictionKey) -> Option<&str> {
        self.absent.get(key).map(String::as_str)
    }

    pub fn realized(&self, region: &str, season: Season, target: Target) -> Option<&Outcome> {
        self.realized.get(&(region.to_string(), season, target))
    }

    /// A density together with its realized outcome.
    pub fn entry(&self, key: &PredictionKey) -> Option<(&BinnedDensity, &Outcome)> {
        let density = self.densities.get(key)?;
        let outcome = self.realized(&key.region, key.season, key.target)?;
        Some((density, outcome))
    }

    pub fn densities(&self) -> impl Iterator<Item = (&PredictionKey, &BinnedDensity)> {
        self.densities.iter()
    }

    pub fn absences(&self) -> impl Iterator<Item = (&PredictionKey, &str)> {
        self.absent.iter().map(|(k, v)| (k, v.as_str()))
    }

    pub fn realized_outcomes(&self) -> impl Iterator<Item = (&RealizedKey, &Outcome)> {
        self.realized.iter()
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn components(&self) -> BTreeSet<ComponentId> {
        self.densities
            .keys()
            .chain(self.absent.keys())
            .map(|k| k.component.clone())
            .collect()
    }

    /// Merges a disjoint set of keys into this one.
    pub fn merge(&mut self, other: PredictionSet) -> Result<()> {
        if other.provenance != self.provenance {
            return Err(Error::Contract(
                "cannot merge cross-validated and test-phase predictions".into(),
            ));
        }
        for (key, density) in other.densities {
            self.insert(key, density)?;
        }
        for (key, reason) in other.absent {
            self.mark_absent(key, reason)?;
        }
        for ((region, season, _), outcome) in other.realized {
            self.set_realized(&region, season, outcome)?;
        }
        Ok(())
    }

    /// Writes densities in the component-density CSV format.
    ///
    /// Only bins with non-zero probability are written; absent bins read back as zero.
    pub fn write_densities(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(DENSITY_HEADER)?;
        for (key, density) in &self.densities {
            let scheme = density.scheme();
            let week = key.season_week.to_string();
            let season = key.season.to_string();
            for (i, p) in density.probs().iter().enumerate() {
                if *p > 0.0 {
                    writer.write_record([
                        key.component.as_str(),
                        &key.region,
                        &season,
                        &week,
                        key.target.as_str(),
                        &scheme.label(i),
                        &p.to_string(),
                    ])?;
                }
            }
        }
        writer.flush()?;
        Ok(())
    }

    /// Writes the realized-outcome sidecar CSV.
    pub fn write_realized(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(REALIZED_HEADER)?;
        for ((region, season, target), outcome) in &self.realized {
            let value = match outcome.value() {
                OutcomeValue::Week(w) => w.to_string(),
                OutcomeValue::NoOnset => "none".to_string(),
                OutcomeValue::Incidence(v) => v.to_string(),
            };
            let tied = outcome
                .tied_peak_weeks()
                .map(|w| w.iter().map(u32::to_string).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            writer.write_record([
                region.as_str(),
                &season.to_string(),
                target.as_str(),
                &value,
                &tied,
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a set written by [`write_densities`](Self::write_densities) and
    /// [`write_realized`](Self::write_realized).
    pub fn read(
        provenance: Provenance,
        densities: impl Read,
        realized: impl Read,
    ) -> Result<PredictionSet> {
        let source = std::path::PathBuf::from("<predictions>");
        let groups = super::external::read_density_groups(densities, None)
            .map_err(|p| Error::ingest(&source, p))?;
        let mut set = PredictionSet::new(provenance);
        for (key, density) in groups {
            set.insert(key, density)?;
        }
        let mut reader = csv::ReaderBuilder::new().from_reader(realized);
        let header = reader.headers()?.clone();
        if header.iter().ne(REALIZED_HEADER) {
            return Err(Error::ingest("<realized>", vec!["bad realized header".into()]));
        }
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let bad = |m: String| Error::ingest("<realized>", vec![format!("line {}: {m}", i + 2)]);
            let season: Season = record[1].parse().map_err(|e: Error| bad(e.to_string()))?;
            let target: Target = record[2].parse().map_err(|e: Error| bad(e.to_string()))?;
            let value = &record[3];
            let outcome = match target {
                Target::OnsetWeek if value == "none" => Outcome::onset(None),
                Target::OnsetWeek => Outcome::onset(Some(
                    value.parse().map_err(|_| bad(format!("bad week '{value}'")))?,
                )),
                Target::PeakWeek => {
                    let weeks: std::result::Result<Vec<u32>, _> =
                        record[4].split(';').map(str::parse).collect();
                    Outcome::peak_week(weeks.map_err(|_| bad("bad tied weeks".into()))?)?
                }
                Target::PeakIncidence => Outcome::peak_incidence(
                    value.parse().map_err(|_| bad(format!("bad incidence '{value}'")))?,
                )?,
            };
            set.set_realized(&record[0], season, outcome)?;
        }
        Ok(set)
    }
}
