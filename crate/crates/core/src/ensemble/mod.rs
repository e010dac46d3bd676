//! Ensemble weighting: equal, constant and feature-dependent weights.
//!
//! Feature-dependent weights are a softmax over latent weights, each latent
//! weight a sum of regression trees boosted on the stacking loss.

mod boost;
mod dataset;
mod dem;
mod features;
mod grid;
mod loss;
mod model;
mod tree;
mod weights;

pub use boost::{boost_fit, boost_fit_traced, TrainConfig, WeightField};
pub use dataset::{
    apply_models, current_wili, training_tables, AppliedEnsembles, TableRow, TrainingTable, WeightTraceRow,
};
pub use dem::{dem_fit, DemFit};
pub use features::{FeatureLayout, FeatureVector};
pub use grid::{grid_search, CvLoss, GridResult, GridSpec};
pub use loss::{loss_grad_hess, row_grad_hess, stacking_loss, StackingRow, DENSITY_FLOOR};
pub use model::{train_model, EnsembleModel, ModelWeights, Scheme, TrainOptions, TrainedModel};
pub use tree::{fit_tree, Node, RegressionTree, HESSIAN_EPSILON};
pub use weights::{check_simplex, mix, softmax_weights};
