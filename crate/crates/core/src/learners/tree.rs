//! CART decision trees shared by the forest and boosting learners.
//!
//! Each feature's rows are sorted once ([`Presorted`]) and every node keeps
//! its rows in that order per feature, so a split search is a linear scan.
//! Candidate thresholds are midpoints between consecutive distinct values;
//! rows with `x <= threshold` go left. Among equally good splits the lowest
//! feature index wins, then the lowest threshold.
//!
//! Classification nodes compare Gini scores exactly in integer arithmetic,
//! so split choice never depends on rounding.
//!
//! Per-node feature subsets are drawn from a generator keyed by the node's
//! path from the root. A tree grown to depth `d` is therefore exactly the
//! deeper tree with the same seed cut at depth `d` ([`DecisionTree::truncated`]).

use std::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Column-major copy of the training matrix plus per-feature row orders.
#[derive(Debug, Clone)]
pub struct Presorted {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &Matrix) -> Self {
        let columns: Vec<Vec<f64>> = (0..x.cols()).map(|j| x.column(j)).collect();
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { columns, order }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn features(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// What the node would predict as a leaf.
        value: f64,
        /// Impurity decrease credited to `feature`.
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// A fitted tree. Classification leaves hold the weighted positive
/// fraction; regression leaves hold whatever value the fitter assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
    /// Unnormalized impurity decrease per feature.
    pub importance: Vec<f64>,
}

impl DecisionTree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn value(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    /// Hard class of a classification tree; an even split is negative.
    pub fn predict_class(&self, row: &[f64]) -> bool {
        self.value(row) > 0.5
    }

    pub fn set_leaf_value(&mut self, node: usize, v: f64) {
        if let Node::Leaf { value } = &mut self.nodes[node] {
            *value = v;
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn split_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    /// The tree cut at `max_depth`: splits at that depth become leaves
    /// holding their node value, and importances drop the removed gains.
    pub fn truncated(&self, max_depth: usize) -> DecisionTree {
        fn copy(src: &[Node], at: usize, depth: usize, max_depth: usize, out: &mut Vec<Node>, imp: &mut [f64]) -> usize {
            let id = out.len();
            match src[at] {
                Node::Leaf { value } => out.push(Node::Leaf { value }),
                Node::Split { value, .. } if depth >= max_depth => out.push(Node::Leaf { value }),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    value,
                    gain,
                } => {
                    imp[feature] += gain;
                    out.push(Node::Leaf { value });
                    let l = copy(src, left, depth + 1, max_depth, out, imp);
                    let r = copy(src, right, depth + 1, max_depth, out, imp);
                    out[id] = Node::Split {
                        feature,
                        threshold,
                        left: l,
                        right: r,
                        value,
                        gain,
                    };
                }
            }
            id
        }
        let mut nodes = Vec::new();
        let mut importance = vec![0.0; self.n_features];
        if !self.nodes.is_empty() {
            copy(&self.nodes, 0, 0, max_depth, &mut nodes, &mut importance);
        }
        DecisionTree {
            nodes,
            n_features: self.n_features,
            importance,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [bool]),
    Values(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

/// Best split found in a node.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    score: Score,
}

#[derive(Debug, Clone, Copy)]
enum Score {
    /// Gini: `num / den` where larger means purer children.
    Exact { num: u128, den: u128 },
    Real(f64),
}

impl Score {
    fn cmp(&self, other: &Score) -> Ordering {
        match (self, other) {
            (Score::Exact { num: a, den: b }, Score::Exact { num: c, den: d }) => (a * d).cmp(&(c * b)),
            (Score::Real(a), Score::Real(b)) => a.total_cmp(b),
            _ => unreachable!("scores of one tree share a criterion"),
        }
    }

    fn as_f64(&self) -> f64 {
        match *self {
            Score::Exact { num, den } => num as f64 / den as f64,
            Score::Real(v) => v,
        }
    }
}

/// Gini split score `(l0^2 + l1^2)/nl + (r0^2 + r1^2)/nr` as an exact
/// fraction. Maximizing it minimizes the weighted child impurity.
pub fn gini_score(left: (u64, u64), right: (u64, u64)) -> (u128, u128) {
    let sq = |(a, b): (u64, u64)| (a as u128) * (a as u128) + (b as u128) * (b as u128);
    let nl = (left.0 + left.1) as u128;
    let nr = (right.0 + right.1) as u128;
    (sq(left) * nr + sq(right) * nl, nl * nr)
}

/// Midpoint threshold between two consecutive distinct values, falling back
/// to the lower value when the midpoint rounds up to the upper one.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || !mid.is_finite() {
        lo
    } else {
        mid
    }
}

#[derive(Clone, Copy)]
enum NodeStats {
    Class { neg: u64, pos: u64 },
    Value { count: u64, sum: f64, min: f64, max: f64 },
}

pub(crate) struct TreeBuilder<'a> {
    pre: &'a Presorted,
    targets: Targets<'a>,
    weights: Option<&'a [u32]>,
    params: TreeParams,
    feature_seed: Option<u64>,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    goes_left: Vec<bool>,
    leaf_of: Vec<u32>,
}

/// Key of a child node given its parent's key.
fn child_key(parent: u64, right: bool) -> u64 {
    // splitmix64 finalizer
    let mut z = parent.wrapping_mul(2).wrapping_add(1 + right as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<'a> TreeBuilder<'a> {
    /// `weights` are per-row multiplicities (bootstrap counts); rows of
    /// weight 0 are ignored. One draw from `rng` seeds per-node feature
    /// sampling; it is required when `max_features` is below the feature
    /// count.
    pub fn new<R: Rng>(
        pre: &'a Presorted,
        targets: Targets<'a>,
        weights: Option<&'a [u32]>,
        params: TreeParams,
        rng: Option<&mut R>,
    ) -> Self {
        let feature_seed = rng.map(|r| r.random::<u64>());
        let n = pre.rows();
        Self {
            pre,
            targets,
            weights,
            params,
            feature_seed,
            nodes: Vec::new(),
            importance: vec![0.0; pre.features()],
            goes_left: vec![false; n],
            leaf_of: vec![u32::MAX; n],
        }
    }

    /// Grows the tree. Also returns each training row's leaf (`u32::MAX`
    /// for rows of weight 0).
    pub fn build(mut self) -> (DecisionTree, Vec<u32>) {
        let lists: Vec<Vec<u32>> = match self.weights {
            None => self.pre.order.clone(),
            Some(w) => self
                .pre
                .order
                .iter()
                .map(|o| o.iter().copied().filter(|&r| w[r as usize] > 0).collect())
                .collect(),
        };
        self.grow(lists, 0, 0);
        let tree = DecisionTree {
            nodes: self.nodes,
            n_features: self.pre.features(),
            importance: self.importance,
        };
        (tree, self.leaf_of)
    }

    #[inline]
    fn weight(&self, r: u32) -> u64 {
        self.weights.map_or(1, |w| w[r as usize] as u64)
    }

    fn stats(&self, rows: &[u32]) -> NodeStats {
        match self.targets {
            Targets::Classes(y) => {
                let (mut neg, mut pos) = (0, 0);
                for &r in rows {
                    if y[r as usize] {
                        pos += self.weight(r);
                    } else {
                        neg += self.weight(r);
                    }
                }
                NodeStats::Class { neg, pos }
            }
            Targets::Values(t) => {
                let (mut count, mut sum) = (0, 0.0);
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for &r in rows {
                    let w = self.weight(r);
                    let v = t[r as usize];
                    count += w;
                    sum += w as f64 * v;
                    min = min.min(v);
                    max = max.max(v);
                }
                NodeStats::Value { count, sum, min, max }
            }
        }
    }

    fn node_value(stats: &NodeStats) -> f64 {
        match *stats {
            NodeStats::Class { neg, pos } => {
                if neg + pos == 0 {
                    0.0
                } else {
                    pos as f64 / (neg + pos) as f64
                }
            }
            NodeStats::Value { count, sum, .. } => {
                if count == 0 {
                    0.0
                } else {
                    sum / count as f64
                }
            }
        }
    }

    fn make_leaf(&mut self, at: usize, rows: &[u32], stats: &NodeStats) {
        self.nodes[at] = Node::Leaf {
            value: Self::node_value(stats),
        };
        for &r in rows {
            self.leaf_of[r as usize] = at as u32;
        }
    }

    fn candidate_features(&self, key: u64) -> Vec<usize> {
        let p = self.pre.features();
        match (self.params.max_features, self.feature_seed) {
            (Some(k), Some(seed)) if k < p => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key);
                let mut f: Vec<usize> = index::sample(&mut rng, p, k.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn grow(&mut self, lists: Vec<Vec<u32>>, depth: usize, key: u64) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let rows = &lists[0];
        let stats = self.stats(rows);
        let (total, pure) = match stats {
            NodeStats::Class { neg, pos } => (neg + pos, neg == 0 || pos == 0),
            NodeStats::Value { count, min, max, .. } => (count, min == max),
        };
        if depth >= self.params.max_depth || total < 2 || pure {
            let rows = lists.into_iter().next().unwrap_or_default();
            self.make_leaf(at, &rows, &stats);
            return at;
        }

        let mut best: Option<Candidate> = None;
        for f in self.candidate_features(key) {
            if let Some(c) = self.best_split_on(f, &lists[f], &stats) {
                if best.as_ref().is_none_or(|b| c.score.cmp(&b.score) == Ordering::Greater) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best else {
            let rows = lists.into_iter().next().unwrap_or_default();
            self.make_leaf(at, &rows, &stats);
            return at;
        };

        let parent_score = match stats {
            NodeStats::Class { neg, pos } => (neg * neg + pos * pos) as f64 / (neg + pos) as f64,
            NodeStats::Value { count, sum, .. } => sum * sum / count as f64,
        };
        let gain = (best.score.as_f64() - parent_score).max(0.0);
        self.importance[best.feature] += gain;

        let col = &self.pre.columns[best.feature];
        for &r in &lists[0] {
            self.goes_left[r as usize] = col[r as usize] <= best.threshold;
        }
        let mut left_lists = Vec::with_capacity(lists.len());
        let mut right_lists = Vec::with_capacity(lists.len());
        for list in lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&r| self.goes_left[r as usize]);
            left_lists.push(l);
            right_lists.push(r);
        }
        let left = self.grow(left_lists, depth + 1, child_key(key, false));
        let right = self.grow(right_lists, depth + 1, child_key(key, true));
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            value: Self::node_value(&stats),
            gain,
        };
        at
    }

    fn best_split_on(&self, f: usize, order: &[u32], stats: &NodeStats) -> Option<Candidate> {
        let col = &self.pre.columns[f];
        let mut best: Option<Candidate> = None;
        let mut consider = |k: usize, score: Score| {
            if best.as_ref().is_none_or(|b| score.cmp(&b.score) == Ordering::Greater) {
                let lo = col[order[k] as usize];
                let hi = col[order[k + 1] as usize];
                best = Some(Candidate {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    score,
                });
            }
        };
        match (*stats, self.targets) {
            (NodeStats::Class { neg, pos }, Targets::Classes(y)) => {
                let (mut l0, mut l1) = (0u64, 0u64);
                for k in 0..order.len().saturating_sub(1) {
                    let r = order[k];
                    if y[r as usize] {
                        l1 += self.weight(r);
                    } else {
                        l0 += self.weight(r);
                    }
                    if col[r as usize] < col[order[k + 1] as usize] {
                        let (num, den) = gini_score((l0, l1), (neg - l0, pos - l1));
                        consider(k, Score::Exact { num, den });
                    }
                }
            }
            (NodeStats::Value { count, sum, .. }, Targets::Values(t)) => {
                let (mut nl, mut sl) = (0u64, 0.0f64);
                for k in 0..order.len().saturating_sub(1) {
                    let r = order[k];
                    let w = self.weight(r);
                    nl += w;
                    sl += w as f64 * t[r as usize];
                    if col[r as usize] < col[order[k + 1] as usize] {
                        let sr = sum - sl;
                        let score = sl * sl / nl as f64 + sr * sr / (count - nl) as f64;
                        consider(k, Score::Real(score));
                    }
                }
            }
            _ => unreachable!("stats follow the target kind"),
        }
        best
    }
}

/// Fits a single tree on all rows of `x`.
pub fn fit_tree<R: Rng>(
    x: &Matrix,
    targets: Targets<'_>,
    weights: Option<&[u32]>,
    params: TreeParams,
    rng: Option<&mut R>,
) -> DecisionTree {
    let pre = Presorted::new(x);
    TreeBuilder::new(&pre, targets, weights, params, rng).build().0
}
