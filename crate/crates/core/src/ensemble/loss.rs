//! Stacking loss and its per-row derivatives in the latent weights.

use super::weights::softmax_weights;
use crate::error::{Error, Result};
use crate::season::Season;

/// Lower bound applied to component densities at the realized outcome
/// while training weights.
pub const DENSITY_FLOOR: f64 = 1e-10;

/// One training row: encoded features plus each component's probability
/// of the realized outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct StackingRow {
    pub season: Season,
    pub features: Vec<f64>,
    pub densities: Vec<f64>,
}

impl StackingRow {
    /// Builds a row with densities floored at [`DENSITY_FLOOR`].
    pub fn floored(season: Season, features: Vec<f64>, densities: &[f64]) -> Self {
        StackingRow {
            season,
            features,
            densities: densities.iter().map(|f| f.max(DENSITY_FLOOR)).collect(),
        }
    }
}

/// Negative mean log mixture density, with one latent weight vector per row.
pub fn stacking_loss(rho: &[Vec<f64>], densities: &[Vec<f64>]) -> Result<f64> {
    if rho.len() != densities.len() || rho.is_empty() {
        return Err(Error::Contract(format!(
            "{} latent rows for {} density rows",
            rho.len(),
            densities.len()
        )));
    }
    let mut total = 0.0;
    for (r, f) in rho.iter().zip(densities) {
        total += row_log_density(r, f)?;
    }
    Ok(-total / rho.len() as f64)
}

fn row_log_density(rho: &[f64], f: &[f64]) -> Result<f64> {
    if rho.len() != f.len() {
        return Err(Error::Contract(format!(
            "{} latent weights for {} components",
            rho.len(),
            f.len()
        )));
    }
    let pi = softmax_weights(rho);
    Ok(pi.iter().zip(f).map(|(p, x)| p * x).sum::<f64>().ln())
}

/// Gradient and diagonal Hessian of one row's contribution
/// `-ln sum_m pi_m f_m` with respect to the latent weights.
///
/// With responsibilities `r_m = pi_m f_m / s`, the gradient is
/// `pi_m - r_m` and the diagonal Hessian is `pi_m(1-pi_m) - r_m(1-r_m)`.
pub fn row_grad_hess(rho: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pi = softmax_weights(rho);
    let s: f64 = pi.iter().zip(f).map(|(p, x)| p * x).sum();
    let mut g = Vec::with_capacity(pi.len());
    let mut h = Vec::with_capacity(pi.len());
    for (p, x) in pi.iter().zip(f) {
        let r = p * x / s;
        g.push(p - r);
        h.push(p * (1.0 - p) - r * (1.0 - r));
    }
    (g, h)
}

/// Per-row gradients and diagonal Hessians for a batch, laid out
/// `[row][component]`.
#[allow(clippy::type_complexity)]
pub fn loss_grad_hess(rho: &[Vec<f64>], densities: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if rho.len() != densities.len() {
        return Err(Error::Contract(format!(
            "{} latent rows for {} density rows",
            rho.len(),
            densities.len()
        )));
    }
    let mut gs = Vec::with_capacity(rho.len());
    let mut hs = Vec::with_capacity(rho.len());
    for (r, f) in rho.iter().zip(densities) {
        if r.len() != f.len() {
            return Err(Error::Contract("latent and density widths differ".into()));
        }
        let (g, h) = row_grad_hess(r, f);
        gs.push(g);
        hs.push(h);
    }
    Ok((gs, hs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row_loss(rho: &[f64], f: &[f64]) -> f64 {
        -row_log_density(rho, f).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn equal_densities_give_zero_gradient() {
        let (g, h) = row_grad_hess(&[0.3, -1.0, 2.0], &[0.2, 0.2, 0.2]);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        assert!(h.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn hand_computed_two_component_row() {
        // pi = (1/2, 1/2), f = (0.8, 0.2): s = 0.5, r = (0.8, 0.2).
        let (g, h) = row_grad_hess(&[0.0, 0.0], &[0.8, 0.2]);
        assert!((g[0] - (0.5 - 0.8)).abs() < 1e-15);
        assert!((g[1] - (0.5 - 0.2)).abs() < 1e-15);
        assert!((h[0] - (0.25 - 0.16)).abs() < 1e-15);
        let loss = stacking_loss(&[vec![0.0, 0.0]], &[vec![0.8, 0.2]]).unwrap();
        assert!((loss + 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn floor_applies_only_below() {
        let row = StackingRow::floored(Season::starting(2000), vec![], &[0.0, 0.5, 1e-12]);
        assert_eq!(row.densities, vec![DENSITY_FLOOR, 0.5, DENSITY_FLOOR]);
    }

    proptest! {
        #[test]
        fn matches_finite_differences(
            rho in prop::collection::vec(-3.0f64..3.0, 2..5),
            raw in prop::collection::vec(0.01f64..1.0, 5),
        ) {
            let f = &raw[..rho.len()];
            let (g, h) = row_grad_hess(&rho, f);
            let step = 1e-5;
            for m in 0..rho.len() {
                let mut up = rho.clone();
                let mut down = rho.clone();
                up[m] += step;
                down[m] -= step;
                let fd_g = (row_loss(&up, f) - row_loss(&down, f)) / (2.0 * step);
                prop_assert!(rel(g[m], fd_g) < 1e-6, "g {} vs {}", g[m], fd_g);
                let fd_h = (row_grad_hess(&up, f).0[m] - row_grad_hess(&down, f).0[m]) / (2.0 * step);
                prop_assert!(rel(h[m], fd_h) < 1e-6, "h {} vs {}", h[m], fd_h);
            }
            prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
