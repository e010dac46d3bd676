use crate::dist::{incidence_bin, BinnedDensity, Target, MAX_SEASON_WEEKS};
use crate::error::{Error, Result};
use crate::season::{onset_week, peak};

/// Simulated completions of a season, one row per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    n: usize,
    width: usize,
    values: Vec<f64>,
}

impl TrajectorySample {
    /// `values` is row-major with `width` weeks per trajectory.
    pub fn new(n: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * width {
            return Err(Error::Contract(format!(
                "{} values cannot form {n} trajectories of {width} weeks",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Contract(format!("negative simulated incidence {v}")));
        }
        Ok(TrajectorySample { n, width, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Weeks per trajectory.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }
}

/// Target density implied by splicing each trajectory onto the observed prefix.
///
/// A trajectory whose peak is tied across `k` weeks contributes `1/k` to each.
pub fn trajectories_to_target_density(
    sample: &TrajectorySample,
    observed_prefix: &[f64],
    season_len: u32,
    target: Target,
    threshold: Option<f64>,
) -> Result<BinnedDensity> {
    if observed_prefix.len() + sample.width() != season_len as usize {
        return Err(Error::Contract(format!(
            "prefix of {} weeks plus {}-week trajectories does not cover a {season_len}-week season",
            observed_prefix.len(),
            sample.width()
        )));
    }
    if !(3..=MAX_SEASON_WEEKS).contains(&season_len) {
        return Err(Error::Contract(format!("season length {season_len} is invalid")));
    }
    if sample.n() == 0 {
        return Err(Error::Contract("no trajectories".into()));
    }
    let threshold = match (target, threshold) {
        (Target::OnsetWeek, None) => {
            return Err(Error::Config("onset density needs a threshold".into()))
        }
        (_, t) => t.unwrap_or(0.0),
    };
    let scheme = target.scheme();
    let mut counts = vec![0.0; scheme.len()];
    let mut spliced = observed_prefix.to_vec();
    for row in sample.rows() {
        spliced.truncate(observed_prefix.len());
        spliced.extend_from_slice(row);
        match target {
            Target::OnsetWeek => {
                let bin = match onset_week(&spliced, threshold) {
                    Some(w) => w as usize - 1,
                    None => MAX_SEASON_WEEKS as usize,
                };
                counts[bin] += 1.0;
            }
            Target::PeakWeek => {
                let (_, weeks) = peak(&spliced)?;
                let share = 1.0 / weeks.len() as f64;
                for w in weeks {
                    counts[w as usize - 1] += share;
                }
            }
            Target::PeakIncidence => {
                let (value, _) = peak(&spliced)?;
                counts[incidence_bin(value)?] += 1.0;
            }
        }
    }
    BinnedDensity::from_counts(target, &counts)
}
