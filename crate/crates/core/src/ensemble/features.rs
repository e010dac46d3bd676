use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::components::ComponentId;
use crate::error::{Error, Result};

/// Observable covariates at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub season_week: u32,
    /// Bins needed to hold 90% of each component's predictive mass.
    pub uncertainty: BTreeMap<ComponentId, u32>,
    pub current_wili: Option<f64>,
}

/// Which covariates a feature-weighted model uses, and in what order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub use_week: bool,
    /// Components whose uncertainty enters as a feature (empty for none).
    pub uncertainty_components: Vec<ComponentId>,
    pub use_wili: bool,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        usize::from(self.use_week) + self.uncertainty_components.len() + usize::from(self.use_wili)
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.use_week {
            out.push("season_week".to_string());
        }
        for c in &self.uncertainty_components {
            out.push(format!("uncertainty_{c}"));
        }
        if self.use_wili {
            out.push("wili".to_string());
        }
        out
    }

    /// Encodes `x` as a dense row; errors if a required feature is missing.
    pub fn encode(&self, x: &FeatureVector) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.width());
        if self.use_week {
            out.push(f64::from(x.season_week));
        }
        for c in &self.uncertainty_components {
            let u = x
                .uncertainty
                .get(c)
                .ok_or_else(|| Error::Contract(format!("feature vector lacks uncertainty for {c}")))?;
            out.push(f64::from(*u));
        }
        if self.use_wili {
            let w = x
                .current_wili
                .ok_or_else(|| Error::Contract("feature vector lacks current wILI".into()))?;
            if !w.is_finite() {
                return Err(Error::Contract(format!("current wILI is {w}")));
            }
            out.push(w);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> FeatureVector {
        FeatureVector {
            season_week: 12,
            uncertainty: [(ComponentId::from("sar"), 7), (ComponentId::from("kde"), 20)]
                .into_iter()
                .collect(),
            current_wili: Some(3.4),
        }
    }

    #[test]
    fn encodes_in_layout_order() {
        let layout = FeatureLayout {
            use_week: true,
            uncertainty_components: vec!["sar".into(), "kde".into()],
            use_wili: true,
        };
        assert_eq!(layout.encode(&x()).unwrap(), vec![12.0, 7.0, 20.0, 3.4]);
        assert_eq!(layout.width(), 4);
        assert_eq!(layout.names()[1], "uncertainty_sar");
    }

    #[test]
    fn missing_features_error() {
        let layout = FeatureLayout {
            use_week: false,
            uncertainty_components: vec!["ext:a".into()],
            use_wili: false,
        };
        assert!(layout.encode(&x()).is_err());
        let layout = FeatureLayout {
            use_week: true,
            uncertainty_components: vec![],
            use_wili: true,
        };
        let mut v = x();
        v.current_wili = None;
        assert!(matches!(layout.encode(&v), Err(Error::Contract(_))));
    }
}
