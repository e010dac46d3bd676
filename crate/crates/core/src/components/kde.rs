//! Seasonal-average component: a Gaussian KDE over each target's past values.
//!
//! Predictions resample the historical values with replacement, jitter each
//! draw with a Gaussian of the KDE bandwidth truncated to the target's range,
//! and bin the results. They do not depend on the week of the season.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Component, ComponentId, FoldData, WeekPrediction};
use crate::dist::{incidence_bin, BinnedDensity, Target, MAX_SEASON_WEEKS};
use crate::error::{Error, Result};
use crate::rng;
use crate::season::{SeasonSeries, TargetValues};

/// Monte Carlo sample size per predictive density.
pub const DEFAULT_SAMPLES: usize = 100_000;

/// Peak incidence is modelled on the log scale, bounded below by the first bin's edge.
const LOG_INCIDENCE_FLOOR: f64 = -2.995_732_273_553_991; // ln(0.05)

/// Reference-rule bandwidth `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
///
/// Falls back to the standard deviation when the IQR is zero but the data
/// still vary; identical observations give a bandwidth of zero.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let mut spread = sd.min(iqr / 1.34);
    if spread <= 0.0 {
        spread = sd;
    }
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Linear-interpolation sample quantile (type 7).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    target: Target,
    observations: Vec<f64>,
    bandwidth: f64,
    no_onset_probability: f64,
}

impl KdeModel {
    /// Fits to one region's history. The no-onset probability defaults to the
    /// share of `history` without an onset.
    pub fn fit(history: &[TargetValues], target: Target) -> Result<Self> {
        let observations: Vec<f64> = match target {
            Target::OnsetWeek => history
                .iter()
                .filter_map(|t| t.onset_week.map(f64::from))
                .collect(),
            Target::PeakWeek => history.iter().map(|t| f64::from(t.first_peak_week())).collect(),
            Target::PeakIncidence => history
                .iter()
                .map(|t| t.peak_incidence.ln().max(LOG_INCIDENCE_FLOOR))
                .collect(),
        };
        if observations.len() < 2 {
            return Err(Error::Fit(format!(
                "KDE for {target} needs at least 2 observations, got {}",
                observations.len()
            )));
        }
        let no_onset_probability = match target {
            Target::OnsetWeek => {
                history.iter().filter(|t| t.onset_week.is_none()).count() as f64
                    / history.len() as f64
            }
            _ => 0.0,
        };
        Ok(KdeModel {
            target,
            bandwidth: silverman_bandwidth(&observations),
            observations,
            no_onset_probability,
        })
    }

    /// Replaces the no-onset probability, e.g. with a proportion pooled across regions.
    pub fn with_no_onset_probability(mut self, p: f64) -> Result<Self> {
        if self.target != Target::OnsetWeek {
            return Err(Error::Contract(format!(
                "no-onset probability only applies to onset, not {}",
                self.target
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!("no-onset probability {p} outside [0, 1]")));
        }
        self.no_onset_probability = p;
        Ok(self)
    }

    pub fn target(&self) -> Target {
        self.target
    }

    /// Observations on the modelling scale (log scale for peak incidence).
    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn no_onset_probability(&self) -> f64 {
        self.no_onset_probability
    }

    fn bounds(&self, season_len: u32) -> (f64, f64) {
        match self.target {
            Target::OnsetWeek | Target::PeakWeek => (1.0, f64::from(season_len)),
            Target::PeakIncidence => (LOG_INCIDENCE_FLOOR, f64::INFINITY),
        }
    }

    /// Empirical predictive density from `n` bootstrap-and-jitter draws.
    pub fn predict(&self, n: usize, season_len: u32, rng: &mut impl Rng) -> Result<BinnedDensity> {
        if n == 0 {
            return Err(Error::Contract("KDE prediction needs n >= 1".into()));
        }
        if !(3..=MAX_SEASON_WEEKS).contains(&season_len) {
            return Err(Error::Contract(format!("season length {season_len} is invalid")));
        }
        let (lower, upper) = self.bounds(season_len);
        let scheme = self.target.scheme();
        let mut counts = vec![0.0; scheme.len()];
        for _ in 0..n {
            let centre = self.observations[rng.random_range(0..self.observations.len())];
            let x = truncated_normal(centre.clamp(lower, upper), self.bandwidth, lower, upper, rng);
            let bin = match self.target {
                Target::OnsetWeek | Target::PeakWeek => {
                    (x.round().clamp(lower, upper) as usize) - 1
                }
                Target::PeakIncidence => incidence_bin(x.exp())?,
            };
            counts[bin] += 1.0;
        }
        if self.target == Target::OnsetWeek {
            let p_none = self.no_onset_probability;
            let scale = (1.0 - p_none) / n as f64;
            counts.iter_mut().for_each(|c| *c *= scale);
            counts[MAX_SEASON_WEEKS as usize] = p_none;
        }
        BinnedDensity::from_counts(self.target, &counts)
    }
}

fn truncated_normal(mean: f64, sd: f64, lower: f64, upper: f64, rng: &mut impl Rng) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    // The mean lies inside the bounds, so acceptance is at least about one half
    // unless the interval is narrow relative to sd.
    for _ in 0..10_000 {
        let z: f64 = StandardNormal.sample(rng);
        let x = mean + sd * z;
        if x >= lower && x <= upper {
            return x;
        }
    }
    rng.random_range(lower..=upper.min(mean + 10.0 * sd))
}

/// KDE component for the leave-one-season-out harness.
#[derive(Debug, Clone)]
pub struct KdeComponent {
    pub samples: usize,
}

impl Default for KdeComponent {
    fn default() -> Self {
        KdeComponent {
            samples: DEFAULT_SAMPLES,
        }
    }
}

impl Component for KdeComponent {
    fn id(&self) -> ComponentId {
        ComponentId::new("kde")
    }

    fn predict_season(
        &self,
        fold: &FoldData<'_>,
        season: &SeasonSeries,
        targets: &[Target],
        seed: u64,
    ) -> Result<Vec<WeekPrediction>> {
        // Peak targets only need complete data; the onset field is unused for them.
        let history: Vec<TargetValues> = fold
            .training
            .iter()
            .filter_map(|s| s.peak().ok())
            .map(|(peak_incidence, peak_weeks)| TargetValues {
                onset_week: None,
                peak_incidence,
                peak_weeks,
            })
            .collect();
        // Seasons without a usable onset (no threshold, gaps) must not count as "no onset".
        let onset_history: Vec<TargetValues> = fold
            .training
            .iter()
            .filter_map(|s| s.target_values().ok())
            .collect();
        let season_label = season.season.to_string();
        let mut out = Vec::new();
        for &target in targets {
            let fitted = match target {
                Target::OnsetWeek => KdeModel::fit(&onset_history, target).and_then(|m| {
                    match fold.pooled_no_onset {
                        Some(p) => m.with_no_onset_probability(p),
                        None => Ok(m),
                    }
                }),
                _ => KdeModel::fit(&history, target),
            };
            let density = fitted.and_then(|model| {
                let mut rng = rng::stream(
                    seed,
                    &["kde", fold.region, &season_label, target.as_str()],
                );
                model.predict(self.samples, season.len() as u32, &mut rng)
            });
            let density = density.map_err(|e| e.to_string());
            for week in 1..=season.len() as u32 {
                out.push(WeekPrediction {
                    season_week: week,
                    target,
                    density: density.clone(),
                });
            }
        }
        Ok(out)
    }
}
