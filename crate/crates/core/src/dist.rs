//! Binned predictive distributions and the log score.
//!
//! Every forecast in the toolkit is a [`BinnedDensity`]: a probability vector
//! over the fixed bin scheme of its [`Target`]. Week targets use one bin per
//! possible season week (34, enough for seasons that start in a 53-week MMWR
//! year); onset adds a trailing `none` bin. Peak incidence uses the 132
//! half-open intervals `[0,0.05), [0.05,0.15), ..., [12.95,13.05), [13.05,inf)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest possible season, in weeks (MMWR week 40 through week 20, 53-week year).
pub const MAX_SEASON_WEEKS: u32 = 34;

/// Number of peak-incidence bins.
pub const INCIDENCE_BINS: usize = 132;

/// Upper edge of the last bounded incidence bin.
pub const INCIDENCE_OVERFLOW: f64 = 13.05;

/// Tolerance on the total mass of a density.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Display value for a log score of negative infinity.
pub const NEG_INF_DISPLAY: f64 = -15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    OnsetWeek,
    PeakWeek,
    PeakIncidence,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::OnsetWeek, Target::PeakWeek, Target::PeakIncidence];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::OnsetWeek => "onset",
            Target::PeakWeek => "peak_week",
            Target::PeakIncidence => "peak_incidence",
        }
    }

    pub fn scheme(self) -> BinScheme {
        BinScheme { target: self }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onset" | "onset_week" => Ok(Target::OnsetWeek),
            "peak_week" => Ok(Target::PeakWeek),
            "peak_incidence" => Ok(Target::PeakIncidence),
            other => Err(Error::Config(format!("unknown target '{other}'"))),
        }
    }
}

/// One bin of a scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bin {
    Week(u32),
    NoOnset,
    /// Half-open interval `[lower, upper)`; the overflow bin has `upper = inf`.
    Incidence { lower: f64, upper: f64 },
}

/// The canonical bin partition for one target.
///
/// Schemes carry no data beyond their target; two densities share a scheme
/// exactly when they share a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinScheme {
    target: Target,
}

impl BinScheme {
    pub fn target(&self) -> Target {
        self.target
    }

    pub fn len(&self) -> usize {
        match self.target {
            Target::OnsetWeek => MAX_SEASON_WEEKS as usize + 1,
            Target::PeakWeek => MAX_SEASON_WEEKS as usize,
            Target::PeakIncidence => INCIDENCE_BINS,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bin(&self, index: usize) -> Bin {
        assert!(index < self.len(), "bin {index} out of range");
        match self.target {
            Target::OnsetWeek if index == MAX_SEASON_WEEKS as usize => Bin::NoOnset,
            Target::OnsetWeek | Target::PeakWeek => Bin::Week(index as u32 + 1),
            Target::PeakIncidence => {
                if index == 0 {
                    Bin::Incidence {
                        lower: 0.0,
                        upper: 0.05,
                    }
                } else if index == INCIDENCE_BINS - 1 {
                    Bin::Incidence {
                        lower: INCIDENCE_OVERFLOW,
                        upper: f64::INFINITY,
                    }
                } else {
                    let centre = index as f64 / 10.0;
                    Bin::Incidence {
                        lower: centre - 0.05,
                        upper: centre + 0.05,
                    }
                }
            }
        }
    }

    pub fn bins(&self) -> impl Iterator<Item = Bin> + '_ {
        (0..self.len()).map(move |i| self.bin(i))
    }

    /// Canonical text label of a bin: `"7"`, `"none"`, `"[2.05,2.15)"`, `"[13.05,inf)"`.
    pub fn label(&self, index: usize) -> String {
        match self.bin(index) {
            Bin::Week(w) => w.to_string(),
            Bin::NoOnset => "none".to_string(),
            Bin::Incidence { lower, upper } if upper.is_infinite() => format!("[{lower:.2},inf)"),
            Bin::Incidence { lower, upper } => format!("[{lower:.2},{upper:.2})"),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Inverse of [`BinScheme::label`].
    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        let label = label.trim();
        match self.target {
            Target::OnsetWeek | Target::PeakWeek => {
                if label == "none" {
                    return (self.target == Target::OnsetWeek).then_some(MAX_SEASON_WEEKS as usize);
                }
                let week: u32 = label.parse().ok()?;
                (1..=MAX_SEASON_WEEKS)
                    .contains(&week)
                    .then_some(week as usize - 1)
            }
            Target::PeakIncidence => {
                let lower: f64 = label.strip_prefix('[')?.split(',').next()?.parse().ok()?;
                let guess = ((lower + 0.05) * 10.0 + 0.25).floor() as usize;
                (guess < self.len() && self.label(guess) == label).then_some(guess)
            }
        }
    }

    /// Position of the bin that contains `value`.
    pub fn bin_index(&self, value: &OutcomeValue) -> Result<usize> {
        match (self.target, value) {
            (Target::OnsetWeek | Target::PeakWeek, OutcomeValue::Week(w)) => {
                if (1..=MAX_SEASON_WEEKS).contains(w) {
                    Ok(*w as usize - 1)
                } else {
                    Err(Error::Domain(format!(
                        "season week {w} outside 1..={MAX_SEASON_WEEKS}"
                    )))
                }
            }
            (Target::OnsetWeek, OutcomeValue::NoOnset) => Ok(MAX_SEASON_WEEKS as usize),
            (Target::PeakIncidence, OutcomeValue::Incidence(v)) => incidence_bin(*v),
            (target, value) => Err(Error::Contract(format!(
                "outcome {value:?} does not belong to target {target}"
            ))),
        }
    }
}

/// Bin position of an incidence value on the peak-incidence scheme.
pub fn incidence_bin(value: f64) -> Result<usize> {
    if !(value >= 0.0) {
        return Err(Error::Domain(format!("incidence {value} is negative or NaN")));
    }
    if value >= INCIDENCE_OVERFLOW {
        return Ok(INCIDENCE_BINS - 1);
    }
    // Bin k (k >= 1) is [k/10 - 0.05, k/10 + 0.05).
    let k = (value * 10.0 + 0.5).floor() as usize;
    Ok(k.min(INCIDENCE_BINS - 2))
}

/// A realized target value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutcomeValue {
    Week(u32),
    NoOnset,
    Incidence(f64),
}

/// The realized outcome a density is scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    target: Target,
    value: OutcomeValue,
    tied_peak_weeks: Option<Vec<u32>>,
}

impl Outcome {
    pub fn onset(week: Option<u32>) -> Self {
        Outcome {
            target: Target::OnsetWeek,
            value: week.map_or(OutcomeValue::NoOnset, OutcomeValue::Week),
            tied_peak_weeks: None,
        }
    }

    /// A peak-week outcome; `weeks` lists every week attaining the rounded peak.
    pub fn peak_week(weeks: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut weeks: Vec<u32> = weeks.into_iter().collect();
        weeks.sort_unstable();
        weeks.dedup();
        let first = *weeks
            .first()
            .ok_or_else(|| Error::Contract("peak-week outcome needs at least one week".into()))?;
        Ok(Outcome {
            target: Target::PeakWeek,
            value: OutcomeValue::Week(first),
            tied_peak_weeks: Some(weeks),
        })
    }

    pub fn peak_incidence(value: f64) -> Result<Self> {
        if !(value >= 0.0) {
            return Err(Error::Domain(format!("incidence {value} is negative or NaN")));
        }
        Ok(Outcome {
            target: Target::PeakIncidence,
            value: OutcomeValue::Incidence(value),
            tied_peak_weeks: None,
        })
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn value(&self) -> &OutcomeValue {
        &self.value
    }

    pub fn tied_peak_weeks(&self) -> Option<&[u32]> {
        self.tied_peak_weeks.as_deref()
    }

    /// Bin positions that count as "the truth" when scoring.
    pub fn covering_bins(&self) -> Result<Vec<usize>> {
        let scheme = self.target.scheme();
        match &self.tied_peak_weeks {
            Some(weeks) => weeks
                .iter()
                .map(|&w| scheme.bin_index(&OutcomeValue::Week(w)))
                .collect(),
            None => Ok(vec![scheme.bin_index(&self.value)?]),
        }
    }
}

/// A probability vector over a target's bin scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedDensity {
    target: Target,
    probs: Vec<f64>,
}

impl BinnedDensity {
    /// Builds a density, renormalizing when the mass is within tolerance of 1.
    pub fn new(target: Target, probs: Vec<f64>) -> Result<Self> {
        let scheme = target.scheme();
        if probs.len() != scheme.len() {
            return Err(Error::Contract(format!(
                "{target} density needs {} probabilities, got {}",
                scheme.len(),
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::Contract(format!("invalid probability {bad}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Contract(format!(
                "{target} probabilities sum to {total}, not 1"
            )));
        }
        // Exact sums are kept bit-for-bit so exported densities read back unchanged.
        let probs = if (total - 1.0).abs() <= 1e-12 {
            probs
        } else {
            probs.into_iter().map(|p| p / total).collect()
        };
        Ok(BinnedDensity { target, probs })
    }

    /// Empirical frequencies from per-bin counts.
    pub fn from_counts(target: Target, counts: &[f64]) -> Result<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Contract("cannot normalize zero counts".into()));
        }
        Self::new(target, counts.iter().map(|c| c / total).collect())
    }

    /// All mass on one bin.
    pub fn point_mass(target: Target, index: usize) -> Result<Self> {
        let mut probs = vec![0.0; target.scheme().len()];
        *probs
            .get_mut(index)
            .ok_or_else(|| Error::Contract(format!("bin {index} out of range for {target}")))? = 1.0;
        Ok(BinnedDensity { target, probs })
    }

    pub fn uniform(target: Target) -> Self {
        let n = target.scheme().len();
        BinnedDensity {
            target,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn scheme(&self) -> BinScheme {
        self.target.scheme()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability assigned to the bins covering `outcome`.
    pub fn prob_of(&self, outcome: &Outcome) -> Result<f64> {
        if outcome.target() != self.target {
            return Err(Error::Contract(format!(
                "cannot score a {} density against a {} outcome",
                self.target,
                outcome.target()
            )));
        }
        Ok(outcome
            .covering_bins()?
            .into_iter()
            .map(|i| self.probs[i])
            .sum::<f64>()
            .min(1.0))
    }

    pub(crate) fn from_raw(target: Target, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), target.scheme().len());
        BinnedDensity { target, probs }
    }
}

/// Natural log of the probability assigned to the realized outcome.
///
/// Tied peak weeks are scored on the summed probability of every tied week.
/// Returns negative infinity when that probability is zero.
pub fn log_score(density: &BinnedDensity, outcome: &Outcome) -> Result<f64> {
    Ok(density.prob_of(outcome)?.ln())
}

/// Smallest number of bins whose probabilities cover at least 90% of the mass.
pub fn uncertainty_90(density: &BinnedDensity) -> Result<u32> {
    let total: f64 = density.probs.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Contract(format!("density sums to {total}, not 1")));
    }
    let mut sorted = density.probs.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut covered = 0.0;
    for (k, p) in sorted.iter().enumerate() {
        covered += p;
        // Accumulated rounding must not push an exact 90% over to the next bin.
        if covered >= 0.9 - 1e-12 {
            return Ok(k as u32 + 1);
        }
    }
    Ok(sorted.len() as u32)
}

/// Replaces negative infinity with [`NEG_INF_DISPLAY`] for display and export.
pub fn clamp_display(score: f64) -> f64 {
    if score == f64::NEG_INFINITY {
        NEG_INF_DISPLAY
    } else {
        score
    }
}
