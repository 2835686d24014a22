//! Brute-force references and end-to-end checks shared by the test targets.
//! Every check returns a one-line summary on success and the first
//! discrepancy on failure.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use forage_core::config::RunConfig;
use forage_core::data::{Cohort, LatLon, Outlet, OutletCategory};
use forage_core::evaluation::{Audit, Stage};
use forage_core::features::FeatureMatrix;
use forage_core::geo::{dbscan, haversine, infer_homes, ClockWindow, DbscanParams, OutletIndex, NOISE};
use forage_core::learners::logistic::LogisticObjective;
use forage_core::learners::svm::{dual_objective, solve_smo, SvmParams};
use forage_core::learners::tree::{fit_tree, Node, TreeParams, Targets};
use forage_core::learners::{fit_gb_traced, BoostParams, ModelKind};
use forage_core::metrics::{balanced_accuracy, Confusion};
use forage_core::split::{rows_for, SplitPlan};
use forage_core::synth::{generate, SynthCohort, SynthConfig};
use forage_core::{Execution, Matrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- metrics

/// Rank AUC of hard predictions used as scores, ties counted half.
/// Mathematically equal to balanced accuracy.
fn rank_auc(truth: &[bool], score: &[bool]) -> f64 {
    let mut doubled = 0u64;
    let mut pairs = 0u64;
    for (i, _) in truth.iter().enumerate().filter(|(_, &t)| t) {
        for (j, _) in truth.iter().enumerate().filter(|(_, &t)| !t) {
            pairs += 1;
            doubled += match (score[i], score[j]) {
                (true, false) => 2,
                (false, true) => 0,
                _ => 1,
            };
        }
    }
    doubled as f64 / (2 * pairs) as f64
}

pub fn metric_oracle(instances: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = rng.random_range(2..=200);
        let base = rng.random_range(0.01..0.99);
        let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(base)).collect();
        truth[0] = true;
        truth[1] = false;
        let skill = rng.random::<f64>();
        let pred: Vec<bool> = truth.iter().map(|&t| if rng.random_bool(skill) { t } else { !t }).collect();

        let c = Confusion::from_labels(&truth, &pred).map_err(|e| format!("instance {k}: {e}"))?;
        let count = |t: bool, p: bool| truth.iter().zip(&pred).filter(|&(&a, &b)| a == t && b == p).count() as u64;
        if (c.tp, c.fn_, c.tn, c.fp) != (count(true, true), count(true, false), count(false, false), count(false, true)) {
            return Err(format!("instance {k}: confusion counts {c:?} disagree with a direct count"));
        }
        let ba = balanced_accuracy(&truth, &pred).map_err(|e| format!("instance {k}: {e}"))?;
        let auc = rank_auc(&truth, &pred);
        let gap = (ba - auc).abs();
        worst = worst.max(gap);
        if gap > 1e-12 {
            return Err(format!("instance {k}: balanced accuracy {ba} but rank AUC {auc}"));
        }
    }
    if balanced_accuracy(&[true, true], &[true, false]).is_ok() {
        return Err("single-class truth must be rejected".into());
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 1.0 {
        return Err(format!("{instances} instances took {elapsed:.2} s"));
    }
    Ok(format!("{instances} instances, max |BA - AUC| = {worst:.1e}, {:.0} ms", elapsed * 1e3))
}

// ---------------------------------------------------------------- learners

pub fn lr_gradient_oracle(points: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let (n, p) = (40, 6);
    let x = Matrix::new(n, p, (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect());
    let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { -1.0 }).collect();
    let mut worst = 0.0f64;
    for k in 0..points {
        let c = [0.1, 1.0, 10.0, 1000.0][k % 4];
        let obj = LogisticObjective::new(&x, &y, c);
        let theta: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g = obj.gradient(&theta);
        let mut diff2 = 0.0;
        for j in 0..obj.dim() {
            let h = 1e-5 * theta[j].abs().max(1.0);
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (obj.value(&up) - obj.value(&down)) / (2.0 * h);
            diff2 += (fd - g[j]).powi(2);
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        let rel = diff2.sqrt() / norm;
        worst = worst.max(rel);
        if rel >= 1e-5 {
            return Err(format!("point {k} (C = {c}): relative gradient error {rel:.2e}"));
        }
    }
    Ok(format!("{points} points, max relative error {worst:.1e}"))
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-gamma * d).exp()
}

/// Exact dual optimum by enumerating which multipliers sit at 0, at C, or
/// strictly inside, and solving the equality-constrained KKT system of
/// every pattern. The problem is convex, so the optimum is the best
/// feasible stationary point over all patterns.
pub fn brute_force_dual(x: &Matrix, y: &[f64], c: f64, gamma: f64) -> f64 {
    let n = x.rows();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * rbf(x.row(i), x.row(j), gamma));
    let mut best = f64::NEG_INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut alpha = vec![0.0; n];
        let mut free = Vec::new();
        let mut rest = code;
        for (i, a) in alpha.iter_mut().enumerate() {
            match rest % 3 {
                1 => *a = c,
                2 => free.push(i),
                _ => {}
            }
            rest /= 3;
        }
        let balance: f64 = alpha.iter().zip(y).map(|(a, t)| a * t).sum();
        if free.is_empty() {
            if balance.abs() > 1e-9 * c.max(1.0) {
                continue;
            }
        } else {
            let m = free.len();
            let mut kkt = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    kkt[(a, b)] = q[(i, j)];
                }
                kkt[(a, m)] = y[i];
                kkt[(m, a)] = y[i];
                rhs[a] = 1.0 - (0..n).map(|j| q[(i, j)] * alpha[j]).sum::<f64>();
            }
            rhs[m] = -balance;
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            if (0..m).any(|a| !(sol[a] >= -1e-12 && sol[a] <= c + 1e-12)) {
                continue;
            }
            for (a, &i) in free.iter().enumerate() {
                alpha[i] = sol[a].clamp(0.0, c);
            }
        }
        let quad: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| alpha[i] * alpha[j] * q[(i, j)]).sum();
        best = best.max(alpha.iter().sum::<f64>() - 0.5 * quad);
    }
    best
}

pub fn svm_oracle(instances: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let n = rng.random_range(2..=8);
        let x = Matrix::new(n, 2, (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let c = [0.1, 1.0, 10.0][k % 3];
        let gamma = [0.5, 1.0, 4.0][(k / 3) % 3];
        let params = SvmParams {
            c,
            gamma,
            max_iter: 100_000,
            tol: 1e-8,
            standardize: false,
            cache_mb: 1,
        };
        let sol = solve_smo(&x, &y, &params, false);
        if !sol.converged {
            return Err(format!("instance {k}: SMO did not converge"));
        }
        if let Some(a) = sol.alpha.iter().find(|&&a| !(a >= 0.0 && a <= c)) {
            return Err(format!("instance {k}: multiplier {a} outside [0, {c}]"));
        }
        let balance: f64 = sol.alpha.iter().zip(&y).map(|(a, t)| a * t).sum();
        if balance.abs() > 1e-10 * c.max(1.0) {
            return Err(format!("instance {k}: sum(a y) = {balance:e}"));
        }
        let got = dual_objective(&x, &y, &sol.alpha, gamma);
        let best = brute_force_dual(&x, &y, c, gamma);
        let gap = (got - best).abs();
        worst = worst.max(gap);
        if gap > 1e-4 {
            return Err(format!("instance {k} (n = {n}, C = {c}, gamma = {gamma}): SMO {got} vs optimum {best}"));
        }
    }
    Ok(format!("{instances} instances, max dual gap {worst:.1e}"))
}

fn class_counts(y: &[bool], rows: &[usize]) -> (u64, u64) {
    let pos = rows.iter().filter(|&&r| y[r]).count() as u64;
    (rows.len() as u64 - pos, pos)
}

/// `(num, den)` of `sum over children of (n0^2 + n1^2) / n`.
fn gini_fraction(left: (u64, u64), right: (u64, u64)) -> (u128, u128) {
    let sq = |(a, b): (u64, u64)| (a as u128).pow(2) + (b as u128).pow(2);
    let (nl, nr) = ((left.0 + left.1) as u128, (right.0 + right.1) as u128);
    (sq(left) * nr + sq(right) * nl, nl * nr)
}

/// Best split of `rows` over every feature and every cut between two
/// consecutive distinct values. Ties go to the lower feature, then the
/// lower cut. Returns `(feature, lower value, upper value, score)`.
fn exhaustive_split(x: &Matrix, y: &[bool], rows: &[usize]) -> Option<(usize, f64, f64, (u128, u128))> {
    let mut best: Option<(usize, f64, f64, (u128, u128))> = None;
    for f in 0..x.cols() {
        let values: BTreeSet<u64> = rows.iter().map(|&r| x.get(r, f).to_bits()).collect();
        let mut values: Vec<f64> = values.into_iter().map(f64::from_bits).collect();
        values.sort_by(f64::total_cmp);
        for w in values.windows(2) {
            let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x.get(r, f) <= w[0]);
            let s = gini_fraction(class_counts(y, &left), class_counts(y, &right));
            if best.is_none_or(|(_, _, _, b)| s.0 * b.1 > b.0 * s.1) {
                best = Some((f, w[0], w[1], s));
            }
        }
    }
    best
}

fn check_cart_node(tree: &[Node], at: usize, x: &Matrix, y: &[bool], rows: &[usize], depth: usize, max_depth: usize) -> Result<(), String> {
    let (neg, pos) = class_counts(y, rows);
    let best = exhaustive_split(x, y, rows);
    match tree[at] {
        Node::Leaf { value } => {
            if value != pos as f64 / (neg + pos) as f64 {
                return Err(format!("leaf {at} holds {value}, positive fraction is {pos}/{}", neg + pos));
            }
            if depth < max_depth && neg > 0 && pos > 0 && best.is_some() {
                return Err(format!("node {at} stopped at depth {depth} with a split available"));
            }
            Ok(())
        }
        Node::Split { feature, threshold, left, right, .. } => {
            let Some((f, lo, hi, score)) = best else {
                return Err(format!("node {at} split although every feature is constant"));
            };
            if feature != f || !(threshold >= lo && threshold < hi) {
                return Err(format!("node {at} splits feature {feature} at {threshold}, exhaustive search picks {f} in [{lo}, {hi})"));
            }
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, feature) <= threshold);
            if gini_fraction(class_counts(y, &l), class_counts(y, &r)) != score {
                return Err(format!("node {at}: partition does not reach the best score"));
            }
            check_cart_node(tree, left, x, y, &l, depth + 1, max_depth)?;
            check_cart_node(tree, right, x, y, &r, depth + 1, max_depth)
        }
    }
}

pub fn cart_oracle(instances: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut splits = 0;
    for k in 0..instances {
        let n = rng.random_range(2..=50);
        let p = rng.random_range(1..=4);
        // few levels means many ties
        let levels = rng.random_range(2..=12) as f64;
        let x = Matrix::new(n, p, (0..n * p).map(|_| (rng.random::<f64>() * levels).floor() * 0.5).collect());
        let base = rng.random_range(0.1..0.9);
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(base)).collect();
        let max_depth = rng.random_range(1..=4);
        let params = TreeParams { max_depth, max_features: None };
        let tree = fit_tree::<ChaCha8Rng>(&x, Targets::Classes(&y), None, params, None);
        let rows: Vec<usize> = (0..n).collect();
        check_cart_node(&tree.nodes, 0, &x, &y, &rows, 0, max_depth).map_err(|e| format!("instance {k}: {e}"))?;
        splits += tree.split_count();
    }
    Ok(format!("{instances} trees, {splits} splits all optimal"))
}

pub fn gb_deviance_oracle(stages: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let (n, p) = (300, 5);
    let x = Matrix::new(n, p, (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect());
    // noisy labels so the fit never becomes perfect
    let y: Vec<bool> = (0..n)
        .map(|i| {
            let s = x.get(i, 0) + 0.5 * x.get(i, 1) * x.get(i, 2);
            rng.random_bool(if s > 0.0 { 0.8 } else { 0.25 })
        })
        .collect();
    let params = BoostParams {
        n_estimators: stages,
        max_depth: 3,
        learning_rate: 0.1,
    };
    let (_, trace) = fit_gb_traced(&x, &y, &params).map_err(|e| e.to_string())?;
    if trace.len() != stages + 1 {
        return Err(format!("{} deviance values for {stages} stages", trace.len()));
    }
    for (s, w) in trace.windows(2).enumerate() {
        if w[1] > w[0] * (1.0 + 1e-12) {
            return Err(format!("deviance rose at stage {}: {} -> {}", s + 1, w[0], w[1]));
        }
    }
    Ok(format!("{stages} stages, deviance {:.4} -> {:.4}", trace[0], trace[stages]))
}

// ---------------------------------------------------------------- geospatial

const ORIGIN: LatLon = LatLon { lat: 32.75, lon: -117.05 };

fn shifted(p: LatLon, north_m: f64, east_m: f64) -> LatLon {
    let m_per_deg = 111_195.0;
    LatLon::new(p.lat + north_m / m_per_deg, p.lon + east_m / (m_per_deg * p.lat.to_radians().cos()))
}

/// Reference DBSCAN facts: which points are core and the connected
/// components of the core graph.
struct DbscanReference {
    neighbors: Vec<Vec<usize>>,
    core: Vec<bool>,
    component: Vec<Option<usize>>,
}

fn dbscan_reference(points: &[LatLon], params: &DbscanParams) -> DbscanReference {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| haversine(points[i], points[j]) <= params.eps_m).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|v| v.len() >= params.min_pts).collect();
    let mut component = vec![None; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || component[s].is_some() {
            continue;
        }
        let mut stack = vec![s];
        component[s] = Some(next);
        while let Some(i) = stack.pop() {
            for &j in &neighbors[i] {
                if core[j] && component[j].is_none() {
                    component[j] = Some(next);
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    DbscanReference { neighbors, core, component }
}

fn compare_dbscan(points: &[LatLon], labels: &[i32], params: &DbscanParams) -> Result<usize, String> {
    let reference = dbscan_reference(points, params);
    let mut to_label: BTreeMap<usize, i32> = BTreeMap::new();
    let mut to_component: BTreeMap<i32, usize> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if let Some(c) = reference.component[i] {
            if l == NOISE {
                return Err(format!("core point {i} labeled noise"));
            }
            if *to_label.entry(c).or_insert(l) != l || *to_component.entry(l).or_insert(c) != c {
                return Err(format!("core point {i}: clusters are not a relabeling of the core components"));
            }
        }
    }
    for i in (0..points.len()).filter(|&i| !reference.core[i]) {
        let reachable: BTreeSet<i32> = reference.neighbors[i]
            .iter()
            .filter_map(|&j| reference.component[j])
            .map(|c| to_label[&c])
            .collect();
        match (labels[i], reachable.is_empty()) {
            (NOISE, true) => {}
            (l, false) if reachable.contains(&l) => {}
            (l, _) => return Err(format!("non-core point {i} labeled {l}, reachable clusters {reachable:?}")),
        }
    }
    let found: BTreeSet<i32> = labels.iter().copied().filter(|&l| l != NOISE).collect();
    if found.len() != to_component.len() {
        return Err(format!("{} labels for {} core components", found.len(), to_component.len()));
    }
    Ok(found.len())
}

pub fn dbscan_oracle(instances: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut clusters = 0;
    for k in 0..instances {
        let centers: Vec<LatLon> = (0..rng.random_range(1..=5))
            .map(|_| shifted(ORIGIN, rng.random_range(-800.0..800.0), rng.random_range(-800.0..800.0)))
            .collect();
        let n = rng.random_range(1..=200);
        let spread = rng.random_range(10.0..120.0);
        let points: Vec<LatLon> = (0..n)
            .map(|_| {
                if rng.random_bool(0.15) {
                    shifted(ORIGIN, rng.random_range(-2000.0..2000.0), rng.random_range(-2000.0..2000.0))
                } else {
                    let c = centers[rng.random_range(0..centers.len())];
                    shifted(c, rng.random_range(-spread..spread), rng.random_range(-spread..spread))
                }
            })
            .collect();
        let params = DbscanParams {
            eps_m: rng.random_range(20.0..80.0),
            min_pts: rng.random_range(1..=8),
        };
        let labels = dbscan(&points, &params);
        clusters += compare_dbscan(&points, &labels, &params).map_err(|e| format!("instance {k}: {e}"))?;
    }
    Ok(format!("{instances} instances, {clusters} clusters matched"))
}

pub fn outlet_oracle(queries: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut outlets = Vec::new();
    for (c, count) in OutletCategory::ALL.into_iter().zip([300, 40, 7, 1, 0]) {
        for _ in 0..count {
            let position = shifted(ORIGIN, rng.random_range(-20_000.0..20_000.0), rng.random_range(-20_000.0..20_000.0));
            outlets.push(Outlet { category: c, position });
        }
    }
    let index = OutletIndex::new(&outlets);
    for k in 0..queries {
        let reach = if k % 10 == 0 { 200_000.0 } else { 25_000.0 };
        let q = shifted(ORIGIN, rng.random_range(-reach..reach), rng.random_range(-reach..reach));
        let got = index.distances(q);
        for (slot, c) in OutletCategory::ALL.into_iter().enumerate() {
            let brute = outlets
                .iter()
                .filter(|o| o.category == c)
                .map(|o| haversine(q, o.position))
                .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
            let expected = brute.unwrap_or(forage_core::geo::MISSING_OUTLET_DISTANCE_M);
            if got[slot] != expected {
                return Err(format!("query {k}, category {c:?}: index {} vs brute force {expected}", got[slot]));
            }
        }
    }
    Ok(format!("{queries} queries x 5 categories exact"))
}

pub fn home_recovery_check(synth: &SynthCohort, tolerance_m: f64) -> Check {
    let cohort = Cohort::from_rows(synth.records.clone(), synth.events.clone()).map_err(|e| e.to_string())?;
    let cohort = cohort.drop_out_of_bounds(&synth.truth.config.bbox);
    let homes = infer_homes(&cohort, &ClockWindow::default(), &DbscanParams::default(), Execution::default());
    let mut worst = 0.0f64;
    for truth in &synth.truth.homes {
        let at = cohort
            .participants
            .iter()
            .position(|p| p.id == truth.participant_id)
            .ok_or_else(|| format!("participant {} missing from the cohort", truth.participant_id))?;
        let home = homes[at].as_ref().ok_or_else(|| format!("no home inferred for {}", truth.participant_id))?;
        let d = haversine(home.position(), LatLon::new(truth.lat, truth.lon));
        worst = worst.max(d);
        if d > tolerance_m {
            return Err(format!("home of {} off by {d:.1} m", truth.participant_id));
        }
    }
    Ok(format!("{} homes, worst error {worst:.1} m", synth.truth.homes.len()))
}

// ---------------------------------------------------------------- synthetic data

pub fn small_synth(n_participants: usize, days: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_participants,
        days,
        ..SynthConfig::default()
    }
}

/// Event counts inside and outside each planted rule agree with the
/// configured rates within three standard deviations.
pub fn event_rate_check(synth: &SynthCohort) -> Check {
    let truth = &synth.truth;
    let eligible = synth.records.len() - truth.missing_gps.len() - truth.outliers.len();
    let mut out = Vec::new();
    for (name, rule) in [("eating", &truth.config.eating), ("purchasing", &truth.config.purchasing)] {
        let (held, fired_held) = truth.rule_rows[name];
        let total = truth.event_counts.get(name).copied().unwrap_or(0);
        let within = |events: usize, rows: usize, p: f64, what: &str| -> Result<f64, String> {
            let mean = rows as f64 * p;
            let sd = (rows as f64 * p * (1.0 - p)).sqrt();
            let z = (events as f64 - mean) / sd.max(1e-12);
            if z.abs() > 3.0 {
                Err(format!("{name} {what}: {events} events over {rows} rows, expected {mean:.1} (z = {z:.2})"))
            } else {
                Ok(z)
            }
        };
        let z_high = within(fired_held, held, rule.p_high, "rule held")?;
        let z_low = within(total - fired_held, eligible - held, rule.p_low, "rule idle")?;
        out.push(format!("{name} z = {z_high:+.2}/{z_low:+.2}"));
    }
    Ok(out.join(", "))
}

/// Balanced accuracy of predicting an event exactly where the planted
/// rule holds, evaluated on the featurized rows.
pub fn bayes_rule_ba(matrix: &FeatureMatrix, rule: &forage_core::synth::EventRule, distance_col: usize) -> f64 {
    let pred: Vec<bool> = matrix
        .values
        .iter_rows()
        .map(|row| rule.holds(row[20], row[distance_col]))
        .collect();
    balanced_accuracy(&matrix.labels, &pred).unwrap_or(0.0)
}

/// Writes a generated cohort to the input paths of `cfg`.
pub fn write_inputs(cfg: &RunConfig) -> Result<SynthCohort, String> {
    let synth = generate(&cfg.synth).map_err(|e| e.to_string())?;
    synth
        .write_to(&cfg.records, &cfg.events, &cfg.outlets, &cfg.ground_truth)
        .map_err(|e| e.to_string())?;
    Ok(synth)
}

/// Run configuration rooted in `dir`.
pub fn config_in(dir: &Path, synth: SynthConfig, train_count: usize) -> RunConfig {
    let data = dir.join("data");
    RunConfig {
        records: data.join("records.csv"),
        events: data.join("events.csv"),
        outlets: data.join("outlets.csv"),
        ground_truth: data.join("ground_truth.json"),
        out_dir: dir.join("reports"),
        train_count,
        synth,
        ..RunConfig::default()
    }
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap_or_default());
            }
        }
    }
    out
}

// ---------------------------------------------------------------- protocol audit

#[derive(Default)]
struct AuditLog {
    fits: usize,
    scores: usize,
    largest_svm_fit: usize,
    violations: Vec<String>,
    /// Training rows per (task, stage, model).
    fit_rows: BTreeMap<(String, Stage), BTreeMap<ModelKind, Vec<usize>>>,
}

/// Checks every row set the evaluation hands to a fit or a score against
/// the split: no test individual reaches a fit or a validation score,
/// fits see exactly balanced classes, and validation scores cover the
/// whole fold.
pub struct ProtocolAudit {
    split: SplitPlan,
    svm_cap: Option<usize>,
    log: Mutex<AuditLog>,
}

impl ProtocolAudit {
    pub fn new(split: SplitPlan, svm_cap: Option<usize>) -> Self {
        Self {
            split,
            svm_cap,
            log: Mutex::new(AuditLog::default()),
        }
    }

    fn ids(matrix: &FeatureMatrix, rows: &[usize]) -> BTreeSet<String> {
        rows.iter().map(|&r| matrix.participant_of(r).to_string()).collect()
    }

    fn violation(&self, msg: String) {
        self.log.lock().unwrap().violations.push(msg);
    }

    /// Summary, or the violations found.
    pub fn verdict(&self) -> Check {
        let log = self.log.lock().unwrap();
        let mut violations = log.violations.clone();
        for ((task, stage), by_model) in &log.fit_rows {
            let shared: Vec<&Vec<usize>> = by_model.iter().filter(|(m, _)| **m != ModelKind::Svm).map(|(_, r)| r).collect();
            if shared.windows(2).any(|w| w[0] != w[1]) {
                violations.push(format!("{task} {stage:?}: models trained on different balanced samples"));
            }
            if let (Some(svm), Some(first)) = (by_model.get(&ModelKind::Svm), shared.first()) {
                let pool: BTreeSet<usize> = first.iter().copied().collect();
                if !svm.iter().all(|r| pool.contains(r)) {
                    violations.push(format!("{task} {stage:?}: SVM rows outside the shared sample"));
                }
            }
        }
        if log.fits == 0 {
            violations.push("no fits observed".into());
        }
        match violations.first() {
            Some(v) => Err(format!("{} violations, first: {v}", violations.len())),
            None => Ok(format!(
                "{} fits and {} scoring calls checked, largest SVM fit {} rows",
                log.fits, log.scores, log.largest_svm_fit
            )),
        }
    }
}

impl Audit for ProtocolAudit {
    fn on_fit(&self, matrix: &FeatureMatrix, model: ModelKind, stage: Stage, rows: &[usize]) {
        let task = matrix.task;
        let ids = Self::ids(matrix, rows);
        let allowed: BTreeSet<&String> = match stage {
            Stage::Fold(f) => self.split.folds[f].train_ids.iter().collect(),
            Stage::Final => self.split.train_participants.iter().collect(),
        };
        if let Some(id) = ids.iter().find(|id| !allowed.contains(id)) {
            let kind = if self.split.test_participants.contains(id) { "test" } else { "held-out" };
            self.violation(format!("{task} {model} {stage:?}: fit uses {kind} individual {id}"));
        }
        let pos = rows.iter().filter(|&&r| matrix.labels[r]).count();
        if pos * 2 != rows.len() {
            self.violation(format!("{task} {model} {stage:?}: {pos} positives among {} fit rows", rows.len()));
        }
        if model == ModelKind::Svm {
            if let Some(cap) = self.svm_cap.filter(|&c| rows.len() > c) {
                self.violation(format!("{task} {stage:?}: SVM fit on {} rows, cap {cap}", rows.len()));
            }
        }
        let mut log = self.log.lock().unwrap();
        log.fits += 1;
        if model == ModelKind::Svm {
            log.largest_svm_fit = log.largest_svm_fit.max(rows.len());
        }
        let mut sorted = rows.to_vec();
        sorted.sort_unstable();
        log.fit_rows.entry((task.to_string(), stage)).or_default().insert(model, sorted);
    }

    fn on_score(&self, matrix: &FeatureMatrix, model: ModelKind, stage: Stage, rows: &[usize]) {
        let task = matrix.task;
        let expected = match stage {
            Stage::Fold(f) => rows_for(matrix, &self.split.folds[f].valid_ids),
            Stage::Final => rows_for(matrix, &self.split.test_participants),
        };
        let mut sorted = rows.to_vec();
        sorted.sort_unstable();
        if sorted != expected {
            self.violation(format!(
                "{task} {model} {stage:?}: scored {} rows, the full set has {}",
                rows.len(),
                expected.len()
            ));
        }
        if let Stage::Fold(_) = stage {
            if let Some(id) = Self::ids(matrix, rows).iter().find(|id| self.split.test_participants.contains(id)) {
                self.violation(format!("{task} {model} {stage:?}: validation uses test individual {id}"));
            }
        }
        self.log.lock().unwrap().scores += 1;
    }
}

