//! Constant mixture weights by degenerate EM.
//!
//! Component densities at the realized outcomes are held fixed; only the
//! mixing weights are updated. Each iteration averages the responsibilities
//! `r[t][m] = w[m] f[t][m] / sum_k w[k] f[t][k]` over rows.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DemFit {
    pub weights: Vec<f64>,
    /// Log-likelihood at the start and after every iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn log_likelihood(table: &[Vec<f64>], weights: &[f64]) -> f64 {
    table
        .iter()
        .map(|row| row.iter().zip(weights).map(|(f, w)| f * w).sum::<f64>().ln())
        .sum()
}

/// Runs degenerate EM from equal weights until the log-likelihood gain
/// drops below `tol` or `max_iter` iterations have run. The returned trace
/// never decreases.
///
/// Rows with an absent component must be removed by the caller.
pub fn dem_fit(table: &[Vec<f64>], tol: f64, max_iter: usize) -> Result<DemFit> {
    let m = table
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Data("degenerate EM needs at least one row".into()))?;
    if m == 0 {
        return Err(Error::Data("degenerate EM needs at least one component".into()));
    }
    for (t, row) in table.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Data(format!("row {t} has {} entries, expected {m}", row.len())));
        }
        if row.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::Data(format!("row {t} has an invalid density value")));
        }
        if row.iter().all(|f| *f == 0.0) {
            return Err(Error::Data(format!("row {t} is zero for every component")));
        }
    }
    let mut weights = vec![1.0 / m as f64; m];
    let mut trace = vec![log_likelihood(table, &weights)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let mut next = vec![0.0; m];
        for row in table {
            let s: f64 = row.iter().zip(&weights).map(|(f, w)| f * w).sum();
            for ((acc, f), w) in next.iter_mut().zip(row).zip(&weights) {
                *acc += w * f / s;
            }
        }
        next.iter_mut().for_each(|w| *w /= table.len() as f64);
        let ll = log_likelihood(table, &next);
        let gain = ll - trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        // Past convergence a step can lose likelihood to rounding; keep the
        // previous weights then.
        if gain < 0.0 {
            converged = true;
            break;
        }
        weights = next;
        iterations += 1;
        trace.push(ll);
        if gain < tol {
            converged = true;
            break;
        }
    }
    Ok(DemFit {
        weights,
        log_likelihood: trace,
        iterations,
        converged,
    })
}
