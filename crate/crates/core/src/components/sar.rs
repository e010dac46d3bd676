//! Seasonal autoregressive component.
//!
//! wILI is log-transformed as `ln(wili + 0.05)` and differenced against the
//! same season week of the previous season. An AR(p) model with intercept is
//! fitted to the differenced series by least squares, and season completions
//! are simulated by running the recursion forward with Gaussian innovations.
//! Lags never cross a season boundary; lags before week 1 are taken as zero.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    trajectories_to_target_density, Component, ComponentId, FoldData, TrajectorySample,
    WeekPrediction, DEFAULT_SAMPLES,
};
use crate::dist::Target;
use crate::error::{Error, Result};
use crate::rng;
use crate::season::{Season, SeasonSeries};

/// Offset inside the log transform, half the smallest incidence bin width.
pub const LOG_OFFSET: f64 = 0.05;

fn to_log(v: f64) -> f64 {
    (v + LOG_OFFSET).ln()
}

fn from_log(y: f64) -> f64 {
    (y.exp() - LOG_OFFSET).max(0.0)
}

/// Value of the previous season aligned to season week `i` (0-based). A
/// 34-week season differenced against a 33-week one reuses the last week.
fn aligned(prev: &[f64], i: usize) -> f64 {
    prev[i.min(prev.len() - 1)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarModel {
    intercept: f64,
    coefficients: Vec<f64>,
    innovation_sd: f64,
}

impl SarModel {
    /// Fits AR(`order`) to the seasonally differenced log series of one region.
    ///
    /// Only seasons whose predecessor is also in `training` and complete
    /// contribute.
    pub fn fit(training: &[&SeasonSeries], order: usize) -> Result<Self> {
        let by_season: BTreeMap<Season, Vec<f64>> = training
            .iter()
            .filter_map(|s| Some((s.season, s.complete_values().ok()?)))
            .collect();
        let differenced: Vec<Vec<f64>> = by_season
            .iter()
            .filter_map(|(season, values)| {
                let prev = by_season.get(&season.previous())?;
                Some(
                    values
                        .iter()
                        .enumerate()
                        .map(|(i, v)| to_log(*v) - to_log(aligned(prev, i)))
                        .collect(),
                )
            })
            .collect();
        if differenced.is_empty() {
            return Err(Error::Fit(
                "seasonal differencing needs two consecutive complete training seasons".into(),
            ));
        }
        Self::fit_differenced(&differenced, order)
    }

    /// Least-squares AR fit to already-differenced per-season series.
    pub fn fit_differenced(series: &[Vec<f64>], order: usize) -> Result<Self> {
        let rows: Vec<(Vec<f64>, f64)> = series
            .iter()
            .flat_map(|z| {
                (order..z.len()).map(move |t| {
                    let mut x = Vec::with_capacity(order + 1);
                    x.push(1.0);
                    x.extend((1..=order).map(|lag| z[t - lag]));
                    (x, z[t])
                })
            })
            .collect();
        let k = order + 1;
        if rows.len() <= k {
            return Err(Error::Fit(format!(
                "AR({order}) needs more than {k} lagged observations, got {}",
                rows.len()
            )));
        }
        let design = DMatrix::from_fn(rows.len(), k, |i, j| rows[i].0[j]);
        let response = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let beta = design
            .clone()
            .svd(true, true)
            .solve(&response, 1e-12)
            .map_err(|e| Error::Fit(format!("least squares failed: {e}")))?;
        let residuals = &response - &design * &beta;
        let innovation_sd = (residuals.norm_squared() / (rows.len() - k) as f64).sqrt();
        Ok(SarModel {
            intercept: beta[0],
            coefficients: beta.iter().skip(1).copied().collect(),
            innovation_sd,
        })
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn innovation_sd(&self) -> f64 {
        self.innovation_sd
    }

    /// Simulates `n` completions of a season given its observed prefix.
    ///
    /// `previous` is the complete previous season, needed to undo the
    /// seasonal differencing.
    pub fn simulate(
        &self,
        prefix: &[f64],
        previous: &[f64],
        season_len: usize,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<TrajectorySample> {
        if previous.is_empty() {
            return Err(Error::Fit("missing lagged season for differencing".into()));
        }
        if prefix.len() > season_len {
            return Err(Error::Contract(format!(
                "prefix of {} weeks exceeds the {season_len}-week season",
                prefix.len()
            )));
        }
        let t = prefix.len();
        let width = season_len - t;
        let observed: Vec<f64> = prefix
            .iter()
            .enumerate()
            .map(|(i, v)| to_log(*v) - to_log(aligned(previous, i)))
            .collect();
        let base: Vec<f64> = (t..season_len).map(|i| to_log(aligned(previous, i))).collect();
        let p = self.order();
        let mut values = Vec::with_capacity(n * width);
        let mut z = observed.clone();
        for _ in 0..n {
            z.truncate(t);
            for (j, b) in base.iter().enumerate() {
                let w = t + j;
                let mut next = self.intercept;
                for lag in 1..=p.min(w) {
                    next += self.coefficients[lag - 1] * z[w - lag];
                }
                let eps: f64 = StandardNormal.sample(rng);
                next += self.innovation_sd * eps;
                z.push(next);
                values.push(from_log(next + b));
            }
        }
        TrajectorySample::new(n, width, values)
    }
}

/// Seasonal AR component for the leave-one-season-out harness.
#[derive(Debug, Clone)]
pub struct SarComponent {
    pub order: usize,
    pub samples: usize,
}

impl Default for SarComponent {
    fn default() -> Self {
        SarComponent {
            order: 2,
            samples: DEFAULT_SAMPLES,
        }
    }
}

impl Component for SarComponent {
    fn id(&self) -> ComponentId {
        ComponentId::new("sar")
    }

    fn predict_season(
        &self,
        fold: &FoldData<'_>,
        season: &SeasonSeries,
        targets: &[Target],
        seed: u64,
    ) -> Result<Vec<WeekPrediction>> {
        let model = SarModel::fit(&fold.training, self.order)?;
        let previous = fold
            .observed
            .get(&(season.region.clone(), season.season.previous()))
            .ok_or_else(|| {
                Error::Fit(format!(
                    "missing lags: no {} data for {}",
                    season.region,
                    season.season.previous()
                ))
            })?
            .complete_values()
            .map_err(|e| Error::Fit(format!("missing lags: {e}")))?;
        let season_label = season.season.to_string();
        let len = season.len();
        let mut out = Vec::with_capacity(len * targets.len());
        for week in 1..=len {
            let prefix: Option<Vec<f64>> = season.wili[..week].iter().copied().collect();
            let sample = match prefix {
                Some(prefix) => {
                    let mut rng = rng::stream(
                        seed,
                        &["sar", &season.region, &season_label, &week.to_string()],
                    );
                    model
                        .simulate(&prefix, &previous, len, self.samples, &mut rng)
                        .map(|s| (prefix, s))
                        .map_err(|e| e.to_string())
                }
                None => Err(format!("missing wILI before season week {week}")),
            };
            for &target in targets {
                let density = sample.clone().and_then(|(prefix, s)| {
                    trajectories_to_target_density(
                        &s,
                        &prefix,
                        len as u32,
                        target,
                        season.onset_threshold,
                    )
                    .map_err(|e| e.to_string())
                });
                out.push(WeekPrediction {
                    season_week: week as u32,
                    target,
                    density,
                });
            }
        }
        Ok(out)
    }
}
