//! Leave-one-season-out selection of boosting iterations and penalties.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boost::{boost_fit_traced, TrainConfig};
use super::loss::StackingRow;
use crate::error::{Error, Result};
use crate::season::Season;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub iterations: Vec<usize>,
    pub lambda_leaf: Vec<f64>,
    pub lambda_value: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            iterations: vec![10, 50, 100, 300],
            lambda_leaf: vec![0.0, 0.1, 1.0],
            lambda_value: vec![0.0, 1.0, 10.0],
        }
    }
}

fn dedup_f64(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.iterations.is_empty() || self.lambda_leaf.is_empty() || self.lambda_value.is_empty() {
            return Err(Error::Config("grid has an empty axis".into()));
        }
        if let Some(v) = self
            .lambda_leaf
            .iter()
            .chain(&self.lambda_value)
            .find(|v| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config(format!("grid penalty {v} is not a finite non-negative number")));
        }
        Ok(())
    }
}

/// Cross-validated loss for one grid point, summed over held-out seasons
/// (each season's mean row loss weighted by its row count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvLoss {
    pub iterations: usize,
    pub lambda_leaf: f64,
    pub lambda_value: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: TrainConfig,
    pub losses: Vec<CvLoss>,
}

/// Evaluates every grid point by leave-one-season-out over the seasons
/// present in `rows` and returns the lowest-loss configuration.
///
/// Ties go to fewer iterations, then larger `lambda_leaf`, then larger
/// `lambda_value`. Boosting is deterministic, so one fit at the largest
/// iteration count yields the held-out loss at every smaller count.
pub fn grid_search(rows: &[StackingRow], base: &TrainConfig, grid: &GridSpec) -> Result<GridResult> {
    grid.validate()?;
    base.validate()?;
    let seasons: BTreeSet<Season> = rows.iter().map(|r| r.season).collect();
    if seasons.len() < 2 {
        return Err(Error::Config(format!(
            "grid search needs at least two seasons of training rows, found {}",
            seasons.len()
        )));
    }
    let mut iterations = grid.iterations.clone();
    iterations.sort_unstable();
    iterations.dedup();
    let max_b = *iterations.last().unwrap_or(&0);
    let leaf = dedup_f64(&grid.lambda_leaf);
    let value = dedup_f64(&grid.lambda_value);
    let mut jobs: Vec<(f64, f64, Season)> = Vec::new();
    for &ll in &leaf {
        for &lv in &value {
            jobs.extend(seasons.iter().map(|&s| (ll, lv, s)));
        }
    }
    let traces: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(ll, lv, season)| {
            let (train, held): (Vec<StackingRow>, Vec<StackingRow>) =
                rows.iter().cloned().partition(|r| r.season != season);
            let config = TrainConfig {
                iterations: max_b,
                lambda_leaf: ll,
                lambda_value: lv,
                ..*base
            };
            let n = held.len() as f64;
            let (_, trace) = boost_fit_traced(&train, &config, &held)?;
            Ok(trace.into_iter().map(|l| l * n).collect())
        })
        .collect::<Result<_>>()?;

    let mut losses = Vec::new();
    for (ll_i, &ll) in leaf.iter().enumerate() {
        for (lv_i, &lv) in value.iter().enumerate() {
            let start = (ll_i * value.len() + lv_i) * seasons.len();
            let folds = &traces[start..start + seasons.len()];
            for &b in &iterations {
                let loss = folds.iter().map(|t| t[b]).sum::<f64>() / rows.len() as f64;
                losses.push(CvLoss {
                    iterations: b,
                    lambda_leaf: ll,
                    lambda_value: lv,
                    loss,
                });
            }
        }
    }
    let mut order: Vec<&CvLoss> = losses.iter().collect();
    order.sort_by(|a, b| {
        a.iterations
            .cmp(&b.iterations)
            .then(b.lambda_leaf.total_cmp(&a.lambda_leaf))
            .then(b.lambda_value.total_cmp(&a.lambda_value))
    });
    let mut best = order[0];
    for c in &order[1..] {
        if c.loss < best.loss {
            best = c;
        }
    }
    if !best.loss.is_finite() {
        return Err(Error::Fit("no grid point produced a finite cross-validated loss".into()));
    }
    let best = TrainConfig {
        iterations: best.iterations,
        lambda_leaf: best.lambda_leaf,
        lambda_value: best.lambda_value,
        ..*base
    };
    Ok(GridResult { best, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::boost::boost_fit;
    use crate::ensemble::loss::stacking_loss;

    fn rows() -> Vec<StackingRow> {
        (0..4)
            .flat_map(|s| {
                (1..=20).map(move |w| {
                    let f = if w <= 8 { [0.5, 0.2] } else { [0.2, 0.5] };
                    StackingRow::floored(Season::starting(2000 + s), vec![w as f64], &f)
                })
            })
            .collect()
    }

    #[test]
    fn losses_match_direct_refits() {
        let data = rows();
        let grid = GridSpec {
            iterations: vec![3, 1],
            lambda_leaf: vec![0.0],
            lambda_value: vec![0.0, 0.5],
        };
        let base = TrainConfig::default();
        let result = grid_search(&data, &base, &grid).unwrap();
        assert_eq!(result.losses.len(), 4);
        for cv in &result.losses {
            let mut total = 0.0;
            for s in 2000..2004 {
                let season = Season::starting(s);
                let train: Vec<_> = data.iter().filter(|r| r.season != season).cloned().collect();
                let held: Vec<_> = data.iter().filter(|r| r.season == season).cloned().collect();
                let config = TrainConfig {
                    iterations: cv.iterations,
                    lambda_leaf: cv.lambda_leaf,
                    lambda_value: cv.lambda_value,
                    ..base
                };
                let field = boost_fit(&train, &config).unwrap();
                let latent: Vec<Vec<f64>> = held.iter().map(|r| field.latent(&r.features).unwrap()).collect();
                let dens: Vec<Vec<f64>> = held.iter().map(|r| r.densities.clone()).collect();
                total += stacking_loss(&latent, &dens).unwrap() * held.len() as f64;
            }
            assert!((cv.loss - total / data.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_prefer_simpler_models() {
        // Identical components make every grid point equally good.
        let data: Vec<StackingRow> = (0..3)
            .flat_map(|s| (1..=10).map(move |w| StackingRow::floored(Season::starting(2000 + s), vec![w as f64], &[0.3, 0.3])))
            .collect();
        let result = grid_search(&data, &TrainConfig::default(), &GridSpec::default()).unwrap();
        assert_eq!(result.best.iterations, 10);
        assert_eq!(result.best.lambda_leaf, 1.0);
        assert_eq!(result.best.lambda_value, 10.0);
    }

    #[test]
    fn config_errors() {
        let data = rows();
        let empty = GridSpec { iterations: vec![], ..Default::default() };
        assert!(matches!(grid_search(&data, &TrainConfig::default(), &empty), Err(Error::Config(_))));
        let one: Vec<_> = data.iter().filter(|r| r.season == Season::starting(2000)).cloned().collect();
        assert!(matches!(
            grid_search(&one, &TrainConfig::default(), &GridSpec::default()),
            Err(Error::Config(_))
        ));
    }
}
