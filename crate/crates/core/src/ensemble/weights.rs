use crate::dist::BinnedDensity;
use crate::error::{Error, Result};

/// Softmax of latent weights, computed with the maximum subtracted.
pub fn softmax_weights(rho: &[f64]) -> Vec<f64> {
    let max = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rho.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Checks that `weights` lie on the probability simplex.
pub fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Contract("empty weight vector".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Contract(format!("negative or NaN weight in {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Binwise weighted sum of component densities.
pub fn mix(densities: &[&BinnedDensity], weights: &[f64]) -> Result<BinnedDensity> {
    check_simplex(weights)?;
    if densities.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} densities but {} weights",
            densities.len(),
            weights.len()
        )));
    }
    let target = densities[0].target();
    if let Some(d) = densities.iter().find(|d| d.target() != target) {
        return Err(Error::Contract(format!(
            "cannot mix {target} with {} densities",
            d.target()
        )));
    }
    let mut probs = vec![0.0; target.scheme().len()];
    for (d, w) in densities.iter().zip(weights) {
        for (acc, p) in probs.iter_mut().zip(d.probs()) {
            *acc += w * p;
        }
    }
    Ok(BinnedDensity::from_raw(target, probs))
}
