//! Random forest of Gini CART trees with majority voting.
//!
//! Tree `i` draws its bootstrap sample and per-split feature subsets from a
//! stream seeded by `(seed, i)` alone, so the first `k` trees of a larger
//! forest are exactly the forest of size `k`. Cutting every tree at depth
//! `d` likewise gives exactly the forest fitted with `max_depth = d`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, Presorted, TreeBuilder, TreeParams, Targets};
use super::{check_labels, check_width, ensemble_importances};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `floor(sqrt(p))`.
    pub max_features: Option<usize>,
    pub seed: u64,
    /// When false every tree sees every row once.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 10,
            max_features: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::config("rf.n_estimators", "must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::config("rf.max_depth", "must be at least 1"));
        }
        if self.max_features == Some(0) {
            return Err(Error::config("rf.max_features", "must be at least 1"));
        }
        Ok(())
    }

    pub fn features_per_split(&self, p: usize) -> usize {
        self.max_features.unwrap_or_else(|| (p as f64).sqrt().floor() as usize).clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

pub fn fit_rf(x: &Matrix, y: &[bool], params: &ForestParams) -> Result<RandomForest> {
    check_labels(x, y)?;
    params.validate()?;
    let pre = Presorted::new(x);
    let n = x.rows();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        max_features: Some(params.features_per_split(x.cols())),
    };
    let trees = (0..params.n_estimators)
        .map(|i| {
            let mut rng = rng_for(params.seed, &["tree", &i.to_string()]);
            let weights = params.bootstrap.then(|| {
                let mut w = vec![0u32; n];
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1;
                }
                w
            });
            TreeBuilder::new(&pre, Targets::Classes(y), weights.as_deref(), tree_params, Some(&mut rng))
                .build()
                .0
        })
        .collect();
    Ok(RandomForest {
        n_features: x.cols(),
        trees,
    })
}

impl RandomForest {
    /// Positive votes per row over the first `k` trees.
    fn votes(&self, x: &Matrix, k: usize) -> Vec<u32> {
        x.iter_rows()
            .map(|r| self.trees[..k].iter().filter(|t| t.predict_class(r)).count() as u32)
            .collect()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<bool>> {
        check_width(self.n_features, x)?;
        let k = self.trees.len();
        Ok(self.votes(x, k).into_iter().map(|v| 2 * v as usize > k).collect())
    }

    /// Predictions of each prefix forest of the given sizes, in one pass
    /// over the trees.
    pub fn staged_predict(&self, x: &Matrix, sizes: &[usize]) -> Result<Vec<Vec<bool>>> {
        check_width(self.n_features, x)?;
        let mut votes = vec![0usize; x.rows()];
        let mut out = vec![Vec::new(); sizes.len()];
        for (k, tree) in self.trees.iter().enumerate() {
            for (v, r) in votes.iter_mut().zip(x.iter_rows()) {
                *v += tree.predict_class(r) as usize;
            }
            for (slot, &s) in out.iter_mut().zip(sizes) {
                if s == k + 1 {
                    *slot = votes.iter().map(|&v| 2 * v > s).collect();
                }
            }
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0 || s > self.trees.len()) {
            return Err(Error::config("rf.n_estimators", format!("prefix size {} outside 1..={}", sizes[i], self.trees.len())));
        }
        Ok(out)
    }

    /// The forest made of the first `k` trees.
    pub fn truncated(&self, k: usize) -> RandomForest {
        RandomForest {
            n_features: self.n_features,
            trees: self.trees[..k.min(self.trees.len())].to_vec(),
        }
    }

    /// Every tree cut at `max_depth`.
    pub fn with_max_depth(&self, max_depth: usize) -> RandomForest {
        RandomForest {
            n_features: self.n_features,
            trees: self.trees.iter().map(|t| t.truncated(max_depth)).collect(),
        }
    }

    pub fn feature_importances(&self) -> Vec<f64> {
        ensemble_importances(&self.trees, self.n_features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn planted(n: usize, p: usize, seed: u64) -> (Matrix, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random::<f64>()).collect()).collect();
        let y = rows.iter().map(|r| r[3] > 0.5).collect();
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn single_unbootstrapped_tree_equals_cart() {
        let (x, y) = planted(60, 4, 1);
        let params = ForestParams {
            n_estimators: 1,
            max_depth: 4,
            max_features: Some(4),
            seed: 5,
            bootstrap: false,
        };
        let forest = fit_rf(&x, &y, &params).unwrap();
        let tree = super::super::tree::fit_tree::<ChaCha8Rng>(
            &x,
            Targets::Classes(&y),
            None,
            TreeParams { max_depth: 4, max_features: None },
            None,
        );
        assert_eq!(forest.trees[0].nodes, tree.nodes);
    }

    #[test]
    fn planted_column_dominates_importance() {
        let (x, y) = planted(400, 11, 2);
        let params = ForestParams {
            n_estimators: 30,
            max_depth: 5,
            seed: 7,
            ..Default::default()
        };
        let forest = fit_rf(&x, &y, &params).unwrap();
        let imp = forest.feature_importances();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let top = (0..imp.len()).max_by(|&a, &b| imp[a].total_cmp(&imp[b])).unwrap();
        assert_eq!(top, 3);
    }

    #[test]
    fn seeded_and_prefix_exact() {
        let (x, y) = planted(120, 6, 3);
        let params = ForestParams {
            n_estimators: 12,
            max_depth: 4,
            seed: 9,
            ..Default::default()
        };
        let a = fit_rf(&x, &y, &params).unwrap();
        assert_eq!(a, fit_rf(&x, &y, &params).unwrap());
        let small = fit_rf(&x, &y, &ForestParams { n_estimators: 5, ..params }).unwrap();
        assert_eq!(small, a.truncated(5));
        let staged = a.staged_predict(&x, &[5, 12]).unwrap();
        assert_eq!(staged[0], small.predict(&x).unwrap());
        assert_eq!(staged[1], a.predict(&x).unwrap());
    }

    #[test]
    fn vote_ties_go_negative() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        let forest = RandomForest {
            n_features: 1,
            trees: vec![
                DecisionTree {
                    nodes: vec![super::super::tree::Node::Leaf { value: 1.0 }],
                    n_features: 1,
                    importance: vec![0.0],
                },
                DecisionTree {
                    nodes: vec![super::super::tree::Node::Leaf { value: 0.0 }],
                    n_features: 1,
                    importance: vec![0.0],
                },
            ],
        };
        assert_eq!(forest.predict(&x).unwrap(), vec![false, false]);
    }

    #[test]
    fn depth_cut_equals_shallow_fit() {
        let (x, y) = planted(300, 9, 4);
        let deep = ForestParams {
            n_estimators: 8,
            max_depth: 12,
            seed: 11,
            ..Default::default()
        };
        let forest = fit_rf(&x, &y, &deep).unwrap();
        for d in [1, 2, 4, 7] {
            let shallow = fit_rf(&x, &y, &ForestParams { max_depth: d, ..deep }).unwrap();
            assert_eq!(forest.with_max_depth(d), shallow, "depth {d}");
        }
    }
}
