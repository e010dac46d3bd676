//! Gradient tree boosting of latent component weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{row_grad_hess, stacking_loss, StackingRow};
use super::tree::{fit_tree, RegressionTree};
use super::weights::softmax_weights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Boosting iterations; each fits one tree per component.
    pub iterations: usize,
    pub learning_rate: f64,
    /// Minimum score gain a split must exceed.
    pub lambda_leaf: f64,
    /// Soft threshold applied to summed leaf gradients.
    pub lambda_value: f64,
    pub max_depth: usize,
    pub min_obs_per_leaf: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100,
            learning_rate: 0.1,
            lambda_leaf: 0.0,
            lambda_value: 0.0,
            max_depth: 3,
            min_obs_per_leaf: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        for (name, v) in [("lambda_leaf", self.lambda_leaf), ("lambda_value", self.lambda_value)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if self.min_obs_per_leaf == 0 {
            return Err(Error::Config("min_obs_per_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// A fitted map from features to component weights: one sequence of trees
/// per component, summed to latent weights and passed through softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightField {
    n_features: usize,
    trees: Vec<Vec<RegressionTree>>,
}

impl WeightField {
    /// The field with no trees, which yields equal weights everywhere.
    pub fn zero(n_components: usize, n_features: usize) -> Self {
        WeightField {
            n_features,
            trees: vec![Vec::new(); n_components],
        }
    }

    pub fn n_components(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn iterations(&self) -> usize {
        self.trees.first().map_or(0, Vec::len)
    }

    pub fn trees(&self) -> &[Vec<RegressionTree>] {
        &self.trees
    }

    /// The field after only the first `b` iterations.
    pub fn truncated(&self, b: usize) -> Self {
        WeightField {
            n_features: self.n_features,
            trees: self.trees.iter().map(|t| t[..b.min(t.len())].to_vec()).collect(),
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::Contract("weight field has no components".into()));
        }
        let b = self.iterations();
        if self.trees.iter().any(|t| t.len() != b) {
            return Err(Error::Contract("components have different numbers of trees".into()));
        }
        if let Some(f) = self.trees.iter().flatten().filter_map(RegressionTree::max_feature).max() {
            if f >= self.n_features {
                return Err(Error::Contract(format!(
                    "tree splits on feature {f} but the field has {} features",
                    self.n_features
                )));
            }
        }
        Ok(())
    }

    pub fn latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::Contract(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(self
            .trees
            .iter()
            .map(|ts| ts.iter().fold(0.0, |acc, t| acc + t.predict(x)))
            .collect())
    }

    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax_weights(&self.latent(x)?))
    }
}

fn check_rows(rows: &[StackingRow]) -> Result<(usize, usize)> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Fit("no training rows".into()))?;
    let (m, d) = (first.densities.len(), first.features.len());
    if m == 0 {
        return Err(Error::Fit("no components".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.densities.len() != m || r.features.len() != d {
            return Err(Error::Contract(format!("row {i} has a different shape")));
        }
        if r.densities.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::Fit(format!("row {i} has a non-positive density; floor before training")));
        }
    }
    Ok((m, d))
}

fn loss_at(field_latent: &[Vec<f64>], rows: &[StackingRow]) -> Result<f64> {
    let densities: Vec<Vec<f64>> = rows.iter().map(|r| r.densities.clone()).collect();
    stacking_loss(field_latent, &densities)
}

/// Boosts from zero latent weights for `config.iterations` rounds.
pub fn boost_fit(rows: &[StackingRow], config: &TrainConfig) -> Result<WeightField> {
    Ok(boost_fit_traced(rows, config, &[])?.0)
}

/// Like [`boost_fit`], also returning the stacking loss on `holdout` before
/// the first iteration and after each one (empty when `holdout` is empty).
pub fn boost_fit_traced(
    rows: &[StackingRow],
    config: &TrainConfig,
    holdout: &[StackingRow],
) -> Result<(WeightField, Vec<f64>)> {
    config.validate()?;
    let (m, d) = check_rows(rows)?;
    if !holdout.is_empty() {
        let (hm, hd) = check_rows(holdout)?;
        if (hm, hd) != (m, d) {
            return Err(Error::Contract("held-out rows have a different shape".into()));
        }
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features.clone()).collect();
    let mut rho = vec![vec![0.0; m]; rows.len()];
    let mut held_rho = vec![vec![0.0; m]; holdout.len()];
    let mut trace = Vec::new();
    if !holdout.is_empty() {
        trace.push(loss_at(&held_rho, holdout)?);
    }
    let mut field = WeightField::zero(m, d);
    for b in 0..config.iterations {
        let (gs, hs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rho
            .iter()
            .zip(rows)
            .map(|(r, row)| row_grad_hess(r, &row.densities))
            .unzip();
        let trees: Vec<RegressionTree> = (0..m)
            .into_par_iter()
            .map(|c| {
                let g: Vec<f64> = gs.iter().map(|v| v[c]).collect();
                let h: Vec<f64> = hs.iter().map(|v| v[c]).collect();
                fit_tree(&x, &g, &h, config)
            })
            .collect::<Result<_>>()?;
        for (c, tree) in trees.into_iter().enumerate() {
            for (r, xi) in rho.iter_mut().zip(&x) {
                r[c] += tree.predict(xi);
            }
            for (r, row) in held_rho.iter_mut().zip(holdout) {
                r[c] += tree.predict(&row.features);
            }
            field.trees[c].push(tree);
        }
        if rho.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Fit(format!("latent weights diverged at iteration {}", b + 1)));
        }
        if !holdout.is_empty() {
            trace.push(loss_at(&held_rho, holdout)?);
        }
    }
    Ok((field, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::season::Season;

    fn rows(n: usize) -> Vec<StackingRow> {
        (0..n)
            .map(|i| {
                let week = (i % 30 + 1) as f64;
                let f = if week <= 10.0 { [0.6, 0.1] } else { [0.1, 0.6] };
                StackingRow::floored(Season::starting(2000 + (i / 30) as i32), vec![week], &f)
            })
            .collect()
    }

    #[test]
    fn zero_iterations_is_equal_weights() {
        let field = boost_fit(&rows(60), &TrainConfig { iterations: 0, ..Default::default() }).unwrap();
        assert_eq!(field.iterations(), 0);
        assert_eq!(field.weights(&[3.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn learns_a_week_regime_and_reduces_loss() {
        let data = rows(120);
        let config = TrainConfig { iterations: 50, ..Default::default() };
        let (field, trace) = boost_fit_traced(&data, &config, &data).unwrap();
        assert!(field.weights(&[5.0]).unwrap()[0] > 0.8);
        assert!(field.weights(&[20.0]).unwrap()[1] > 0.8);
        assert_eq!(trace.len(), 51);
        assert!(trace.last().unwrap() < &trace[0]);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn one_iteration_matches_hand_newton_step() {
        // Single leaf: G = sum(pi - r), H = sum(pi(1-pi) - r(1-r)).
        let data: Vec<StackingRow> = [[0.8, 0.2], [0.6, 0.4]]
            .iter()
            .map(|f| StackingRow::floored(Season::starting(2000), vec![1.0], f))
            .collect();
        let config = TrainConfig {
            iterations: 1,
            learning_rate: 0.1,
            max_depth: 0,
            ..Default::default()
        };
        let field = boost_fit(&data, &config).unwrap();
        let g0 = (0.5 - 0.8) + (0.5 - 0.6);
        let h0 = (0.25 - 0.16) + (0.25 - 0.24);
        let latent = field.latent(&[1.0]).unwrap();
        assert!((latent[0] - 0.1 * (-g0 / h0)).abs() < 1e-12);
        assert!((latent[1] - 0.1 * (g0 / h0)).abs() < 1e-12);
    }

    #[test]
    fn truncation_is_a_prefix() {
        let data = rows(60);
        let config = TrainConfig { iterations: 20, ..Default::default() };
        let full = boost_fit(&data, &config).unwrap();
        let short = boost_fit(&data, &TrainConfig { iterations: 7, ..config }).unwrap();
        assert_eq!(full.truncated(7), short);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(boost_fit(&[], &TrainConfig::default()).is_err());
        let mut data = rows(10);
        data[3].densities[0] = 0.0;
        assert!(boost_fit(&data, &TrainConfig::default()).is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(matches!(boost_fit(&rows(10), &bad), Err(Error::Config(_))));
        let field = boost_fit(&rows(10), &TrainConfig { iterations: 1, ..Default::default() }).unwrap();
        assert!(field.weights(&[1.0, 2.0]).is_err());
    }
}
