//! Per-individual train/test split, resampled validation folds, and
//! negative downsampling to class balance.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::seed::rng_for;

pub const FOLD_COUNT: usize = 5;
pub const VALIDATION_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: Vec<String>,
    pub valid_ids: Vec<String>,
}

/// Which participants train, validate and test. Id lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub train_participants: Vec<String>,
    pub test_participants: Vec<String>,
    pub folds: Vec<Fold>,
}

/// Shuffles participants into `train_count` training and the rest test
/// individuals, then draws each fold's validation set independently from
/// the training individuals. Folds may overlap.
pub fn make_split(participant_ids: &[String], train_count: usize, seed: u64) -> Result<SplitPlan> {
    let mut ids: Vec<String> = participant_ids.to_vec();
    ids.sort();
    ids.dedup();
    if train_count > ids.len() {
        return Err(Error::config(
            "train_count",
            format!("{train_count} training individuals requested but only {} available", ids.len()),
        ));
    }
    if train_count < 2 {
        return Err(Error::config("train_count", "at least 2 training individuals are needed"));
    }
    ids.shuffle(&mut rng_for(seed, &["split"]));
    let mut train: Vec<String> = ids[..train_count].to_vec();
    let mut test: Vec<String> = ids[train_count..].to_vec();
    train.sort();
    test.sort();

    let n_valid = validation_size(train_count);
    let folds = (0..FOLD_COUNT)
        .map(|f| {
            let mut rng = rng_for(seed, &["split", "fold", &f.to_string()]);
            let picked: BTreeSet<usize> = index::sample(&mut rng, train.len(), n_valid).into_iter().collect();
            let (valid_ids, train_ids) = train
                .iter()
                .enumerate()
                .fold((Vec::new(), Vec::new()), |(mut v, mut t), (i, id)| {
                    if picked.contains(&i) {
                        v.push(id.clone());
                    } else {
                        t.push(id.clone());
                    }
                    (v, t)
                });
            Fold { train_ids, valid_ids }
        })
        .collect();
    Ok(SplitPlan {
        seed,
        train_participants: train,
        test_participants: test,
        folds,
    })
}

/// ceil(0.25 n), kept below n so every fold trains on someone.
pub fn validation_size(train_count: usize) -> usize {
    ((VALIDATION_FRACTION * train_count as f64).ceil() as usize).clamp(1, train_count.saturating_sub(1).max(1))
}

impl SplitPlan {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// All rows whose participant is in `ids`, in matrix order.
pub fn rows_for(matrix: &FeatureMatrix, ids: &[String]) -> Vec<usize> {
    let wanted: Vec<bool> = matrix.participants.iter().map(|p| ids.contains(p)).collect();
    (0..matrix.len()).filter(|&i| wanted[matrix.groups[i] as usize]).collect()
}

/// Every positive row in scope plus an equal number of uniformly sampled
/// negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalancedSample {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl BalancedSample {
    /// Row indices in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.positives.iter().chain(&self.negatives).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shrinks to at most `max_rows` rows (half per class) by uniform
    /// sampling within each class.
    pub fn capped(&self, max_rows: usize, seed: u64) -> BalancedSample {
        let per_class = (max_rows / 2).max(1);
        if self.positives.len() <= per_class {
            return self.clone();
        }
        let mut rng = rng_for(seed, &["cap"]);
        let mut take = |from: &[usize]| {
            let mut v: Vec<usize> = index::sample(&mut rng, from.len(), per_class).into_iter().map(|i| from[i]).collect();
            v.sort_unstable();
            v
        };
        BalancedSample {
            positives: take(&self.positives),
            negatives: take(&self.negatives),
        }
    }
}

/// Class-balanced sample of the rows belonging to `scope`.
pub fn balance(matrix: &FeatureMatrix, scope: &[String], seed: u64) -> Result<BalancedSample> {
    balance_rows(&matrix.labels, &rows_for(matrix, scope), seed)
}

/// Class-balanced sample drawn from the given candidate rows.
pub fn balance_rows(labels: &[bool], rows: &[usize], seed: u64) -> Result<BalancedSample> {
    let (positives, negatives): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| labels[i]);
    if positives.is_empty() {
        return Err(Error::Sampling("task has no positive examples in scope".into()));
    }
    if negatives.len() < positives.len() {
        return Err(Error::Sampling(format!(
            "only {} negatives for {} positives in scope",
            negatives.len(),
            positives.len()
        )));
    }
    let mut rng = rng_for(seed, &["balance"]);
    let mut chosen: Vec<usize> = index::sample(&mut rng, negatives.len(), positives.len())
        .into_iter()
        .map(|i| negatives[i])
        .collect();
    chosen.sort_unstable();
    Ok(BalancedSample {
        positives,
        negatives: chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Problem, TaskSpec};
    use crate::matrix::Matrix;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn paper_sized_split() {
        let plan = make_split(&ids(81), 60, 42).unwrap();
        assert_eq!(plan.train_participants.len(), 60);
        assert_eq!(plan.test_participants.len(), 21);
        assert_eq!(plan.folds.len(), 5);
        for f in &plan.folds {
            assert_eq!(f.valid_ids.len(), 15);
            assert_eq!(f.train_ids.len(), 45);
            for id in f.valid_ids.iter().chain(&f.train_ids) {
                assert!(plan.train_participants.contains(id));
            }
        }
        let train: BTreeSet<_> = plan.train_participants.iter().collect();
        assert!(plan.test_participants.iter().all(|t| !train.contains(t)));
        assert_eq!(plan, make_split(&ids(81), 60, 42).unwrap());
        assert_ne!(plan, make_split(&ids(81), 60, 43).unwrap());
    }

    #[test]
    fn small_split_uses_quarter_validation() {
        let plan = make_split(&ids(10), 8, 1).unwrap();
        for f in &plan.folds {
            assert_eq!((f.train_ids.len(), f.valid_ids.len()), (6, 2));
        }
    }

    #[test]
    fn oversized_train_count_rejected() {
        assert!(make_split(&ids(5), 6, 1).is_err());
    }

    fn toy_matrix(labels: Vec<bool>, groups: Vec<u32>, participants: usize) -> FeatureMatrix {
        let n = labels.len();
        FeatureMatrix {
            task: TaskSpec::new(Problem::Eating, 0).unwrap(),
            values: Matrix::zeros(n, 1),
            labels,
            groups,
            participants: ids(participants),
            timestamps: vec![chrono::NaiveDateTime::default(); n],
        }
    }

    #[test]
    fn balance_fifty_fifty() {
        let labels: Vec<bool> = (0..5050).map(|i| i % 101 == 0).collect();
        let m = toy_matrix(labels, vec![0; 5050], 1);
        let s = balance(&m, &ids(1), 9).unwrap();
        assert_eq!(s.positives.len(), 50);
        assert_eq!(s.negatives.len(), 50);
        assert_eq!(s.len(), 100);
        assert!(s.negatives.iter().all(|&i| !m.labels[i]));
        let again = balance(&m, &ids(1), 9).unwrap();
        assert_eq!(s, again);
        let other = balance(&m, &ids(1), 10).unwrap();
        assert_eq!(s.positives, other.positives);
        assert_ne!(s.negatives, other.negatives);
    }

    #[test]
    fn balance_errors() {
        let m = toy_matrix(vec![false; 10], vec![0; 10], 1);
        let err = balance(&m, &ids(1), 0).unwrap_err().to_string();
        assert!(err.contains("no positive examples"));
        let m = toy_matrix(vec![true, true, false], vec![0; 3], 1);
        assert!(balance(&m, &ids(1), 0).is_err());
    }

    #[test]
    fn rows_for_set_algebra() {
        let m = toy_matrix(vec![false; 9], vec![0, 1, 2, 0, 1, 2, 2, 2, 0], 3);
        assert!(rows_for(&m, &[]).is_empty());
        assert_eq!(rows_for(&m, &ids(3)), (0..9).collect::<Vec<_>>());
        let a = rows_for(&m, &ids(3)[..1]);
        let b = rows_for(&m, &ids(3)[1..]);
        assert!(a.iter().all(|i| !b.contains(i)));
        let mut union: Vec<usize> = a.into_iter().chain(b).collect();
        union.sort();
        assert_eq!(union, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn cap_keeps_balance() {
        let s = BalancedSample {
            positives: (0..100).collect(),
            negatives: (100..200).collect(),
        };
        let c = s.capped(50, 3);
        assert_eq!((c.positives.len(), c.negatives.len()), (25, 25));
        assert_eq!(s.capped(1000, 3), s);
    }
}
