//! Gradient boosting on the binomial deviance.
//!
//! Each stage fits a squared-error regression tree to the residuals
//! `y - sigmoid(F)` and then replaces every leaf value with one Newton step,
//! `sum(r) / sum(p (1 - p))` over the rows in that leaf.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::{sigmoid, softplus};
use super::tree::{DecisionTree, Presorted, TreeBuilder, TreeParams, Targets};
use super::{check_labels, check_width, ensemble_importances};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MIN_DENOMINATOR: f64 = 1e-150;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
        }
    }
}

impl BoostParams {
    fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::config("gb.max_depth", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::config("gb.learning_rate", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub n_features: usize,
    /// Log-odds of the training base rate.
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
}

/// Mean binomial deviance `2 * mean(log(1 + e^F) - y F)`.
pub fn deviance(y: &[bool], f: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(f)
        .map(|(&l, &v)| softplus(v) - if l { v } else { 0.0 })
        .sum();
    2.0 * total / y.len() as f64
}

pub fn fit_gb(x: &Matrix, y: &[bool], params: &BoostParams) -> Result<GradientBoosting> {
    fit_gb_traced(x, y, params).map(|(m, _)| m)
}

/// Fits and also returns the training deviance before the first stage and
/// after each stage (`n_estimators + 1` values).
pub fn fit_gb_traced(x: &Matrix, y: &[bool], params: &BoostParams) -> Result<(GradientBoosting, Vec<f64>)> {
    check_labels(x, y)?;
    params.validate()?;
    let n = x.rows();
    let pos = y.iter().filter(|&&l| l).count() as f64;
    let rate = pos / n as f64;
    let init = (rate / (1.0 - rate)).ln();
    let pre = Presorted::new(x);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        max_features: None,
    };

    let mut f = vec![init; n];
    let mut trace = Vec::with_capacity(params.n_estimators + 1);
    trace.push(deviance(y, &f));
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_estimators {
        for i in 0..n {
            residual[i] = y[i] as u8 as f64 - sigmoid(f[i]);
        }
        let (mut tree, leaf_of) =
            TreeBuilder::new::<ChaCha8Rng>(&pre, Targets::Values(&residual), None, tree_params, None).build();

        let mut num = vec![0.0; tree.nodes.len()];
        let mut den = vec![0.0; tree.nodes.len()];
        for i in 0..n {
            let leaf = leaf_of[i] as usize;
            let p = y[i] as u8 as f64 - residual[i];
            num[leaf] += residual[i];
            den[leaf] += p * (1.0 - p);
        }
        for leaf in 0..tree.nodes.len() {
            let step = if den[leaf].abs() < MIN_DENOMINATOR { 0.0 } else { num[leaf] / den[leaf] };
            tree.set_leaf_value(leaf, step);
        }
        for (fi, row) in f.iter_mut().zip(x.iter_rows()) {
            *fi += params.learning_rate * tree.value(row);
        }
        trace.push(deviance(y, &f));
        trees.push(tree);
    }
    let model = GradientBoosting {
        n_features: x.cols(),
        init,
        learning_rate: params.learning_rate,
        trees,
    };
    Ok((model, trace))
}

impl GradientBoosting {
    pub fn decision_row(&self, row: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.value(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<bool>> {
        check_width(self.n_features, x)?;
        Ok(x.iter_rows().map(|r| self.decision_row(r) > 0.0).collect())
    }

    /// Predictions after each of the given stage counts, in one pass.
    pub fn staged_predict(&self, x: &Matrix, stages: &[usize]) -> Result<Vec<Vec<bool>>> {
        check_width(self.n_features, x)?;
        if let Some(&s) = stages.iter().find(|&&s| s > self.trees.len()) {
            return Err(Error::config("gb.n_estimators", format!("stage {s} beyond {} fitted trees", self.trees.len())));
        }
        let mut f = vec![self.init; x.rows()];
        let mut out = vec![Vec::new(); stages.len()];
        let snapshot = |f: &[f64]| f.iter().map(|&v| v > 0.0).collect::<Vec<bool>>();
        for (slot, &s) in out.iter_mut().zip(stages) {
            if s == 0 {
                *slot = snapshot(&f);
            }
        }
        for (k, tree) in self.trees.iter().enumerate() {
            for (v, r) in f.iter_mut().zip(x.iter_rows()) {
                *v += self.learning_rate * tree.value(r);
            }
            for (slot, &s) in out.iter_mut().zip(stages) {
                if s == k + 1 {
                    *slot = snapshot(&f);
                }
            }
        }
        Ok(out)
    }

    pub fn truncated(&self, k: usize) -> GradientBoosting {
        GradientBoosting {
            trees: self.trees[..k.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn feature_importances(&self) -> Vec<f64> {
        ensemble_importances(&self.trees, self.n_features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noisy(n: usize, seed: u64) -> (Matrix, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y = rows.iter().map(|r| r[0] + 0.3 * rng.random::<f64>() > 0.65).collect();
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn zero_stages_predict_majority() {
        let (x, y) = noisy(100, 1);
        let m = fit_gb(&x, &y, &BoostParams { n_estimators: 0, ..Default::default() }).unwrap();
        let majority = y.iter().filter(|&&l| l).count() * 2 > y.len();
        assert!(m.predict(&x).unwrap().iter().all(|&p| p == majority));
    }

    #[test]
    fn deviance_never_increases() {
        let (x, y) = noisy(200, 2);
        let (_, trace) = fit_gb_traced(&x, &y, &BoostParams { n_estimators: 50, max_depth: 2, learning_rate: 0.1 }).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn staged_matches_truncated() {
        let (x, y) = noisy(150, 3);
        let m = fit_gb(&x, &y, &BoostParams { n_estimators: 20, max_depth: 2, learning_rate: 0.1 }).unwrap();
        let staged = m.staged_predict(&x, &[0, 7, 20]).unwrap();
        assert_eq!(staged[1], m.truncated(7).predict(&x).unwrap());
        assert_eq!(staged[2], m.predict(&x).unwrap());
    }

    #[test]
    fn stump_importance_concentrates() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| (0..9).map(|j| if j == 7 { i as f64 } else { 1.0 }).collect()).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let m = fit_gb(&Matrix::from_rows(&rows), &y, &BoostParams { n_estimators: 1, max_depth: 1, learning_rate: 0.1 }).unwrap();
        let imp = m.feature_importances();
        assert_eq!(imp[7], 1.0);
        assert_eq!(imp.iter().sum::<f64>(), 1.0);
    }
}
