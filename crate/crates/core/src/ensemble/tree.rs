//! Regression trees grown greedily on per-row gradients and Hessians.

use serde::{Deserialize, Serialize};

use super::boost::TrainConfig;
use crate::error::{Error, Result};

/// Summed Hessians at or below this are treated as non-positive, and the
/// leaf falls back to a plain gradient step.
pub const HESSIAN_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    /// Largest feature index used by any split.
    pub(crate) fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

pub(crate) fn soft_threshold(g: f64, alpha: f64) -> f64 {
    g.signum() * (g.abs() - alpha).max(0.0)
}

/// Loss decrease credited to a node with summed gradient `g` and Hessian `h`.
pub(crate) fn node_score(g: f64, h: f64, lambda_value: f64) -> f64 {
    let s = soft_threshold(g, lambda_value);
    if h > HESSIAN_EPSILON {
        s * s / (2.0 * h)
    } else {
        s * s
    }
}

/// Leaf value before the learning rate is applied.
pub(crate) fn raw_leaf_value(g: f64, h: f64, lambda_value: f64) -> f64 {
    let s = soft_threshold(g, lambda_value);
    if h > HESSIAN_EPSILON {
        -s / h
    } else {
        -s
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    g: &'a [f64],
    h: &'a [f64],
    config: &'a TrainConfig,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn sums(&self, rows: &[usize]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(g, h), &i| (g + self.g[i], h + self.h[i]))
    }

    fn best_split(&self, sorted: &[Vec<usize>], g_total: f64, h_total: f64) -> Option<BestSplit> {
        let n = sorted[0].len();
        let min = self.config.min_obs_per_leaf;
        if n < 2 * min {
            return None;
        }
        let lv = self.config.lambda_value;
        let parent = node_score(g_total, h_total, lv);
        let mut best: Option<BestSplit> = None;
        for (feature, order) in sorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..n - 1 {
                let i = order[k];
                gl += self.g[i];
                hl += self.h[i];
                let left_n = k + 1;
                if left_n < min || n - left_n < min {
                    continue;
                }
                let a = self.x[i][feature];
                let b = self.x[order[k + 1]][feature];
                if a == b {
                    continue;
                }
                let gain = node_score(gl, hl, lv) + node_score(g_total - gl, h_total - hl, lv) - parent;
                if best.as_ref().is_none_or(|s| gain > s.gain) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid > a { mid } else { b };
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best.filter(|s| s.gain > self.config.lambda_leaf)
    }

    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let (g_total, h_total) = self.sums(&sorted[0]);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.config.max_depth {
            self.best_split(&sorted, g_total, h_total)
        } else {
            None
        };
        match split {
            None => {
                let raw = raw_leaf_value(g_total, h_total, self.config.lambda_value);
                self.nodes[at] = Node::Leaf {
                    value: self.config.learning_rate * raw,
                };
            }
            Some(BestSplit {
                feature, threshold, ..
            }) => {
                let goes_left = |i: &usize| self.x[*i][feature] < threshold;
                let left: Vec<Vec<usize>> =
                    sorted.iter().map(|o| o.iter().copied().filter(goes_left).collect()).collect();
                let right: Vec<Vec<usize>> = sorted
                    .iter()
                    .map(|o| o.iter().copied().filter(|i| !goes_left(i)).collect())
                    .collect();
                let l = self.grow(left, depth + 1);
                let r = self.grow(right, depth + 1);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left: l,
                    right: r,
                };
            }
        }
        at
    }
}

/// Fits one tree to gradients `g` and Hessians `h` over feature rows `x`.
///
/// Splits are exhaustive over midpoints between adjacent distinct values.
/// A split is kept when its score gain exceeds `lambda_leaf` and both
/// children keep at least `min_obs_per_leaf` rows. Leaf values are
/// Newton steps on the soft-thresholded gradient sum, scaled by the
/// learning rate.
pub fn fit_tree(x: &[Vec<f64>], g: &[f64], h: &[f64], config: &TrainConfig) -> Result<RegressionTree> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::Fit("cannot fit a tree to zero rows".into()));
    }
    if g.len() != x.len() || h.len() != x.len() {
        return Err(Error::Contract("feature, gradient and Hessian lengths differ".into()));
    }
    let width = x[0].len();
    if x.iter().any(|r| r.len() != width) {
        return Err(Error::Contract("feature rows have different widths".into()));
    }
    if x.iter().flatten().chain(g).chain(h).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite feature, gradient or Hessian".into()));
    }
    let mut sorted: Vec<Vec<usize>> = (0..width)
        .map(|f| {
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            order
        })
        .collect();
    if width == 0 {
        sorted.push((0..x.len()).collect());
    }
    let mut builder = Builder {
        x,
        g,
        h,
        config,
        nodes: Vec::new(),
    };
    if width == 0 {
        let (gs, hs) = builder.sums(&sorted[0]);
        let raw = raw_leaf_value(gs, hs, config.lambda_value);
        return Ok(RegressionTree::constant(config.learning_rate * raw));
    }
    builder.grow(sorted, 0);
    Ok(RegressionTree { nodes: builder.nodes })
}
