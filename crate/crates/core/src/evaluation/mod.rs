//! Grid search over per-individual folds, final fits and test scoring.
//!
//! Every fit sees a class-balanced sample of training individuals only;
//! every score is computed on all rows of the scored individuals. Forests
//! and boosted ensembles are fitted once per (depth, fold) at the largest
//! tree count and scored at each smaller count from the same fit.

mod report;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use report::{emit_reports, REPORT_DECIMALS};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::{FeatureMatrix, Problem};
use crate::learners::{
    fit_gb, fit_lr, fit_rf, fit_svm, BoostParams, ForestParams, LrParams, ModelKind, SvmParams, TrainedModel,
};
use crate::matrix::Matrix;
use crate::metrics::balanced_accuracy;
use crate::seed::derive_seed;
use crate::split::{balance_rows, rows_for, BalancedSample, SplitPlan, FOLD_COUNT};

/// One hyperparameter setting. Serialized without a tag, so SVM must stay
/// ahead of LR (an SVM object also carries `c`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperParams {
    Svm { gamma: f64, c: f64 },
    Lr { c: f64 },
    Trees { n_estimators: usize, max_depth: usize },
}

impl HyperParams {
    /// Column names and values in grid-axis order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        match *self {
            HyperParams::Lr { c } => vec![("c", fmt_param(c))],
            HyperParams::Svm { gamma, c } => vec![("gamma", fmt_param(gamma)), ("c", fmt_param(c))],
            HyperParams::Trees {
                n_estimators,
                max_depth,
            } => vec![("n_estimators", n_estimators.to_string()), ("max_depth", max_depth.to_string())],
        }
    }
}

impl fmt::Display for HyperParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.fields().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

fn fmt_param(v: f64) -> String {
    format!("{v}")
}

/// Axis values of the four grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridAxes {
    pub lr_c: Vec<f64>,
    pub svm_gamma: Vec<f64>,
    pub svm_c: Vec<f64>,
    pub rf_trees: Vec<usize>,
    pub rf_depth: Vec<usize>,
    pub gb_trees: Vec<usize>,
    pub gb_depth: Vec<usize>,
}

impl Default for GridAxes {
    fn default() -> Self {
        let c = vec![1000.0, 100.0, 10.0, 1.0, 0.1];
        let trees = vec![10, 30, 50, 100, 200];
        Self {
            lr_c: c.clone(),
            svm_gamma: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            svm_c: c,
            rf_trees: trees.clone(),
            rf_depth: vec![2, 5, 10, 15, 20],
            gb_trees: trees,
            gb_depth: vec![1, 2, 3, 4, 5],
        }
    }
}

impl GridAxes {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: &[f64]| {
            if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                Err(Error::config(format!("grid.{name}"), "must be a non-empty list of positive numbers"))
            } else {
                Ok(())
            }
        };
        let counts = |name: &str, v: &[usize]| {
            if v.is_empty() || v.contains(&0) {
                Err(Error::config(format!("grid.{name}"), "must be a non-empty list of positive integers"))
            } else {
                Ok(())
            }
        };
        positive("lr_c", &self.lr_c)?;
        positive("svm_gamma", &self.svm_gamma)?;
        positive("svm_c", &self.svm_c)?;
        counts("rf_trees", &self.rf_trees)?;
        counts("rf_depth", &self.rf_depth)?;
        counts("gb_trees", &self.gb_trees)?;
        counts("gb_depth", &self.gb_depth)
    }
}

/// Grid points in iteration order: the first listed axis is the outer
/// loop. Ties in mean validation score go to the earliest point.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub kind: ModelKind,
    pub points: Vec<HyperParams>,
}

impl Grid {
    pub fn new(kind: ModelKind, axes: &GridAxes) -> Self {
        let trees = |n: &[usize], d: &[usize]| {
            n.iter()
                .flat_map(|&n_estimators| {
                    d.iter().map(move |&max_depth| HyperParams::Trees {
                        n_estimators,
                        max_depth,
                    })
                })
                .collect()
        };
        let points = match kind {
            ModelKind::Lr => axes.lr_c.iter().map(|&c| HyperParams::Lr { c }).collect(),
            ModelKind::Svm => axes
                .svm_gamma
                .iter()
                .flat_map(|&gamma| axes.svm_c.iter().map(move |&c| HyperParams::Svm { gamma, c }))
                .collect(),
            ModelKind::Rf => trees(&axes.rf_trees, &axes.rf_depth),
            ModelKind::Gb => trees(&axes.gb_trees, &axes.gb_depth),
        };
        Grid { kind, points }
    }

    pub fn single(kind: ModelKind, point: HyperParams) -> Self {
        Grid { kind, points: vec![point] }
    }
}

/// Knobs shared by every fit in an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub seed: u64,
    pub standardize: bool,
    /// Balanced rows kept for each SVM fit; `None` keeps all.
    pub svm_max_train_rows: Option<usize>,
    /// SMO budget for cross-validation fits on the eating problem.
    pub svm_cv_max_iter_eating: usize,
    /// SMO budget for every other SVM fit.
    pub svm_max_iter: usize,
    pub gb_learning_rate: f64,
    pub rf_max_features: Option<usize>,
    pub exec: Execution,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            standardize: true,
            svm_max_train_rows: Some(5000),
            svm_cv_max_iter_eating: 1000,
            svm_max_iter: 10_000,
            gb_learning_rate: 0.1,
            rf_max_features: None,
            exec: Execution::default(),
        }
    }
}

/// Where in the protocol a fit or score happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Fold(usize),
    Final,
}

/// Observer of every row set handed to a fit or a scoring call. Rows are
/// indices into the task's feature matrix.
pub trait Audit: Sync {
    fn on_fit(&self, _matrix: &FeatureMatrix, _model: ModelKind, _stage: Stage, _rows: &[usize]) {}
    fn on_score(&self, _matrix: &FeatureMatrix, _model: ModelKind, _stage: Stage, _rows: &[usize]) {}
}

pub struct NoAudit;

impl Audit for NoAudit {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointScores {
    pub params: HyperParams,
    /// `(train, valid)` balanced accuracy per fold.
    pub folds: Vec<(f64, f64)>,
    pub mean_train: f64,
    pub mean_valid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub kind: ModelKind,
    pub points: Vec<PointScores>,
    pub best: usize,
}

impl GridOutcome {
    pub fn best_params(&self) -> HyperParams {
        self.points[self.best].params
    }
}

/// Result of one (problem, offset, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub problem: Problem,
    pub offset: u32,
    pub model: ModelKind,
    pub chosen_params: HyperParams,
    pub fold_scores: Vec<(f64, f64)>,
    pub mean_train: f64,
    pub mean_valid: f64,
    pub final_train: f64,
    pub test: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importances: Option<Vec<f64>>,
    #[serde(skip)]
    pub cv: Vec<PointScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub problem: Problem,
    pub offset: u32,
    pub model: ModelKind,
    pub skipped: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellOutcome {
    Done(ExperimentResult),
    Skipped(SkippedCell),
}

impl CellOutcome {
    pub fn key(&self) -> (Problem, u32, ModelKind) {
        match self {
            CellOutcome::Done(r) => (r.problem, r.offset, r.model),
            CellOutcome::Skipped(s) => (s.problem, s.offset, s.model),
        }
    }

    pub fn result(&self) -> Option<&ExperimentResult> {
        match self {
            CellOutcome::Done(r) => Some(r),
            CellOutcome::Skipped(_) => None,
        }
    }
}

/// Rows of one sample, copied out at the width a model kind uses.
struct View {
    x: Matrix,
    y: Vec<bool>,
}

impl View {
    fn new(matrix: &FeatureMatrix, rows: &[usize], width: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(&matrix.values.row(r)[..width]);
        }
        let y = rows.iter().map(|&r| matrix.labels[r]).collect();
        View {
            x: Matrix::new(rows.len(), width, data),
            y,
        }
    }
}

fn task_seed(root: u64, matrix: &FeatureMatrix, what: &str, stage: Stage) -> u64 {
    let stage = match stage {
        Stage::Fold(f) => format!("fold{f}"),
        Stage::Final => "final".to_string(),
    };
    derive_seed(
        root,
        &[what, matrix.task.problem.as_str(), &matrix.task.offset_minutes.to_string(), &stage],
    )
}

/// Balanced training sample for one stage, shared by all models.
fn stage_sample(matrix: &FeatureMatrix, ids: &[String], settings: &EvalSettings, stage: Stage) -> Result<BalancedSample> {
    balance_rows(
        &matrix.labels,
        &rows_for(matrix, ids),
        task_seed(settings.seed, matrix, "balance", stage),
    )
}

fn training_rows(kind: ModelKind, sample: &BalancedSample, matrix: &FeatureMatrix, settings: &EvalSettings, stage: Stage) -> Vec<usize> {
    match (kind, settings.svm_max_train_rows) {
        (ModelKind::Svm, Some(cap)) => sample.capped(cap, task_seed(settings.seed, matrix, "svm-cap", stage)).indices(),
        _ => sample.indices(),
    }
}

fn svm_budget(matrix: &FeatureMatrix, settings: &EvalSettings, stage: Stage) -> usize {
    match (matrix.task.problem, stage) {
        (Problem::Eating, Stage::Fold(_)) => settings.svm_cv_max_iter_eating,
        _ => settings.svm_max_iter,
    }
}

/// Fits one grid point on a view.
fn fit_point(
    kind: ModelKind,
    point: HyperParams,
    view: &View,
    settings: &EvalSettings,
    seed: u64,
    svm_max_iter: usize,
) -> Result<TrainedModel> {
    match (kind, point) {
        (ModelKind::Lr, HyperParams::Lr { c }) => {
            let params = LrParams {
                c,
                standardize: settings.standardize,
                ..Default::default()
            };
            Ok(TrainedModel::Lr {
                params,
                model: fit_lr(&view.x, &view.y, &params)?,
            })
        }
        (ModelKind::Svm, HyperParams::Svm { gamma, c }) => {
            let params = SvmParams {
                c,
                gamma,
                max_iter: svm_max_iter,
                standardize: settings.standardize,
                ..Default::default()
            };
            Ok(TrainedModel::Svm {
                params,
                model: fit_svm(&view.x, &view.y, &params)?,
            })
        }
        (
            ModelKind::Rf,
            HyperParams::Trees {
                n_estimators,
                max_depth,
            },
        ) => {
            let params = ForestParams {
                n_estimators,
                max_depth,
                max_features: settings.rf_max_features,
                seed,
                bootstrap: true,
            };
            Ok(TrainedModel::Rf {
                params,
                model: fit_rf(&view.x, &view.y, &params)?,
            })
        }
        (
            ModelKind::Gb,
            HyperParams::Trees {
                n_estimators,
                max_depth,
            },
        ) => {
            let params = BoostParams {
                n_estimators,
                max_depth,
                learning_rate: settings.gb_learning_rate,
            };
            Ok(TrainedModel::Gb {
                params,
                model: fit_gb(&view.x, &view.y, &params)?,
            })
        }
        _ => Err(Error::Validation(format!("grid point {point} does not belong to {kind}"))),
    }
}

/// A set of grid points answered by one fit per fold.
struct Unit {
    /// `(grid index, tree count, depth)`; counts and depths are unused for
    /// LR/SVM.
    points: Vec<(usize, usize, usize)>,
}

/// LR and SVM fit every point. Boosting fits once per depth and stages the
/// tree counts. A forest fits once at the deepest depth and is cut down to
/// every other depth.
fn units(grid: &Grid) -> Vec<Unit> {
    let trees = |p: &HyperParams| match *p {
        HyperParams::Trees {
            n_estimators,
            max_depth,
        } => (n_estimators, max_depth),
        _ => (0, 0),
    };
    match grid.kind {
        ModelKind::Lr | ModelKind::Svm => (0..grid.points.len()).map(|i| Unit { points: vec![(i, 0, 0)] }).collect(),
        ModelKind::Rf => vec![Unit {
            points: grid
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let (n, d) = trees(p);
                    (i, n, d)
                })
                .collect(),
        }],
        ModelKind::Gb => {
            let mut by_depth: BTreeMap<usize, Vec<(usize, usize, usize)>> = BTreeMap::new();
            for (i, p) in grid.points.iter().enumerate() {
                let (n, d) = trees(p);
                by_depth.entry(d).or_default().push((i, n, d));
            }
            by_depth.into_values().map(|points| Unit { points }).collect()
        }
    }
}

struct FoldViews<'a> {
    train: &'a View,
    valid: &'a View,
}

/// Scores one unit on one fold: `(grid index, train, valid)` per point.
fn score_unit(
    grid: &Grid,
    unit: &Unit,
    fold: usize,
    views: &FoldViews<'_>,
    matrix: &FeatureMatrix,
    settings: &EvalSettings,
) -> Result<Vec<(usize, f64, f64)>> {
    let stage = Stage::Fold(fold);
    let seed = task_seed(settings.seed, matrix, grid.kind.as_str(), stage);
    let (first, _, _) = unit.points[0];
    let annotate = |e: Error| e.context(format!("{} fold {} grid point {}", grid.kind, fold + 1, grid.points[first]));
    match grid.kind {
        ModelKind::Lr | ModelKind::Svm => {
            let model = fit_point(
                grid.kind,
                grid.points[first],
                views.train,
                settings,
                seed,
                svm_budget(matrix, settings, stage),
            )
            .map_err(annotate)?;
            let train = balanced_accuracy(&views.train.y, &model.predict(&views.train.x)?).map_err(annotate)?;
            let valid = balanced_accuracy(&views.valid.y, &model.predict(&views.valid.x)?).map_err(annotate)?;
            Ok(vec![(first, train, valid)])
        }
        ModelKind::Rf | ModelKind::Gb => {
            let max_trees = unit.points.iter().map(|&(_, n, _)| n).max().unwrap_or(1);
            let max_depth = unit.points.iter().map(|&(_, _, d)| d).max().unwrap_or(1);
            let biggest = HyperParams::Trees {
                n_estimators: max_trees,
                max_depth,
            };
            let model = fit_point(grid.kind, biggest, views.train, settings, seed, 0).map_err(annotate)?;
            let mut by_depth: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
            for &(i, n, d) in &unit.points {
                by_depth.entry(d).or_default().push((i, n));
            }
            let mut out = Vec::with_capacity(unit.points.len());
            for (depth, points) in by_depth {
                let sizes: Vec<usize> = points.iter().map(|&(_, n)| n).collect();
                let staged = |x: &Matrix| match &model {
                    TrainedModel::Rf { model, .. } if depth < max_depth => model.with_max_depth(depth).staged_predict(x, &sizes),
                    TrainedModel::Rf { model, .. } => model.staged_predict(x, &sizes),
                    TrainedModel::Gb { model, .. } => model.staged_predict(x, &sizes),
                    _ => unreachable!("tree grids fit tree models"),
                };
                let train_preds = staged(&views.train.x)?;
                let valid_preds = staged(&views.valid.x)?;
                for (k, &(i, _)) in points.iter().enumerate() {
                    let train = balanced_accuracy(&views.train.y, &train_preds[k]).map_err(annotate)?;
                    let valid = balanced_accuracy(&views.valid.y, &valid_preds[k]).map_err(annotate)?;
                    out.push((i, train, valid));
                }
            }
            Ok(out)
        }
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Picks the point with the highest mean validation score; the earliest
/// point wins ties.
fn select_best(points: &[PointScores]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean_valid > points[best].mean_valid {
            best = i;
        }
    }
    best
}

/// Cross-validates several grids on one task. Fold samples are drawn once
/// and shared by all models.
pub fn grid_search_many(
    matrix: &FeatureMatrix,
    split: &SplitPlan,
    grids: &[Grid],
    settings: &EvalSettings,
    audit: &dyn Audit,
) -> Result<Vec<GridOutcome>> {
    if split.folds.len() != FOLD_COUNT {
        return Err(Error::Validation(format!("split has {} folds, expected {FOLD_COUNT}", split.folds.len())));
    }
    let samples: Vec<BalancedSample> = split
        .folds
        .iter()
        .enumerate()
        .map(|(f, fold)| stage_sample(matrix, &fold.train_ids, settings, Stage::Fold(f)).map_err(|e| e.context(format!("fold {}", f + 1))))
        .collect::<Result<_>>()?;
    let valid_rows: Vec<Vec<usize>> = split.folds.iter().map(|f| rows_for(matrix, &f.valid_ids)).collect();

    // training views per (kind, fold); validation views per (width, fold)
    let mut train_views: BTreeMap<(ModelKind, usize), View> = BTreeMap::new();
    let mut valid_views: BTreeMap<(usize, usize), View> = BTreeMap::new();
    for grid in grids {
        let width = grid.kind.feature_width();
        for f in 0..FOLD_COUNT {
            let rows = training_rows(grid.kind, &samples[f], matrix, settings, Stage::Fold(f));
            audit.on_fit(matrix, grid.kind, Stage::Fold(f), &rows);
            audit.on_score(matrix, grid.kind, Stage::Fold(f), &valid_rows[f]);
            train_views.insert((grid.kind, f), View::new(matrix, &rows, width));
            valid_views
                .entry((width, f))
                .or_insert_with(|| View::new(matrix, &valid_rows[f], width));
        }
    }

    let unit_lists: Vec<Vec<Unit>> = grids.iter().map(units).collect();
    let jobs: Vec<(usize, usize, usize)> = unit_lists
        .iter()
        .enumerate()
        .flat_map(|(g, us)| (0..us.len()).flat_map(move |u| (0..FOLD_COUNT).map(move |f| (g, u, f))))
        .collect();
    let scored = settings.exec.map(&jobs, |&(g, u, f)| {
        let grid = &grids[g];
        let views = FoldViews {
            train: &train_views[&(grid.kind, f)],
            valid: &valid_views[&(grid.kind.feature_width(), f)],
        };
        score_unit(grid, &unit_lists[g][u], f, &views, matrix, settings)
    });

    let mut tables: Vec<Vec<Vec<(f64, f64)>>> = grids
        .iter()
        .map(|g| vec![vec![(f64::NAN, f64::NAN); FOLD_COUNT]; g.points.len()])
        .collect();
    for (&(g, _, f), out) in jobs.iter().zip(scored) {
        for (i, train, valid) in out? {
            tables[g][i][f] = (train, valid);
        }
    }
    Ok(grids
        .iter()
        .zip(tables)
        .map(|(grid, table)| {
            let points: Vec<PointScores> = grid
                .points
                .iter()
                .zip(table)
                .map(|(&params, folds)| PointScores {
                    params,
                    mean_train: mean(folds.iter().map(|s| s.0)),
                    mean_valid: mean(folds.iter().map(|s| s.1)),
                    folds,
                })
                .collect();
            GridOutcome {
                kind: grid.kind,
                best: select_best(&points),
                points,
            }
        })
        .collect())
}

/// Cross-validates one grid on one task.
pub fn grid_search(
    matrix: &FeatureMatrix,
    split: &SplitPlan,
    grid: &Grid,
    settings: &EvalSettings,
    audit: &dyn Audit,
) -> Result<GridOutcome> {
    let mut out = grid_search_many(matrix, split, std::slice::from_ref(grid), settings, audit)?;
    Ok(out.remove(0))
}

/// Refits the chosen point on a balanced sample of all training
/// individuals and scores it on every test row.
fn finalize(
    matrix: &FeatureMatrix,
    split: &SplitPlan,
    outcome: &GridOutcome,
    sample: &BalancedSample,
    test_rows: &[usize],
    settings: &EvalSettings,
    audit: &dyn Audit,
) -> Result<ExperimentResult> {
    let kind = outcome.kind;
    let width = kind.feature_width();
    let rows = training_rows(kind, sample, matrix, settings, Stage::Final);
    audit.on_fit(matrix, kind, Stage::Final, &rows);
    let train = View::new(matrix, &rows, width);
    let chosen = outcome.best_params();
    let seed = task_seed(settings.seed, matrix, kind.as_str(), Stage::Final);
    let annotate = |e: Error| e.context(format!("{kind} final fit {chosen}"));
    let model = fit_point(kind, chosen, &train, settings, seed, svm_budget(matrix, settings, Stage::Final)).map_err(annotate)?;
    let final_train = balanced_accuracy(&train.y, &model.predict(&train.x)?)?;
    drop(train);
    audit.on_score(matrix, kind, Stage::Final, test_rows);
    let test_view = View::new(matrix, test_rows, width);
    let test = balanced_accuracy(&test_view.y, &model.predict(&test_view.x)?).map_err(annotate)?;
    let best = &outcome.points[outcome.best];
    debug_assert_eq!(split.test_participants.is_empty(), test_rows.is_empty());
    Ok(ExperimentResult {
        problem: matrix.task.problem,
        offset: matrix.task.offset_minutes,
        model: kind,
        chosen_params: chosen,
        fold_scores: best.folds.clone(),
        mean_train: best.mean_train,
        mean_valid: best.mean_valid,
        final_train,
        test,
        importances: model.feature_importances().ok(),
        cv: outcome.points.clone(),
    })
}

/// Full protocol for one task and the requested models. A task whose
/// training or test individuals hold no positive rows yields skipped cells.
pub fn evaluate_task(
    matrix: &FeatureMatrix,
    split: &SplitPlan,
    models: &[ModelKind],
    axes: &GridAxes,
    settings: &EvalSettings,
    audit: &dyn Audit,
) -> Result<Vec<CellOutcome>> {
    let task = matrix.task;
    let skip = |reason: String| -> Vec<CellOutcome> {
        log::warn!("skipping {} offset {}: {reason}", task.problem, task.offset_minutes);
        models
            .iter()
            .map(|&model| {
                CellOutcome::Skipped(SkippedCell {
                    problem: task.problem,
                    offset: task.offset_minutes,
                    model,
                    skipped: reason.clone(),
                })
            })
            .collect()
    };
    let train_rows = rows_for(matrix, &split.train_participants);
    let test_rows = rows_for(matrix, &split.test_participants);
    let positives = |rows: &[usize]| rows.iter().filter(|&&r| matrix.labels[r]).count();
    if positives(&train_rows) == 0 {
        return Ok(skip("no positive rows among training individuals".into()));
    }
    if positives(&test_rows) == 0 {
        return Ok(skip("no positive rows among test individuals".into()));
    }
    if positives(&test_rows) == test_rows.len() {
        return Ok(skip("no negative rows among test individuals".into()));
    }

    let context = |e: Error| e.context(format!("{} offset {}", task.problem, task.offset_minutes));
    let grids: Vec<Grid> = models.iter().map(|&k| Grid::new(k, axes)).collect();
    let outcomes = grid_search_many(matrix, split, &grids, settings, audit).map_err(context)?;
    let sample = stage_sample(matrix, &split.train_participants, settings, Stage::Final).map_err(context)?;
    let results = settings
        .exec
        .map(&outcomes, |o| finalize(matrix, split, o, &sample, &test_rows, settings, audit));
    results
        .into_iter()
        .map(|r| r.map(CellOutcome::Done).map_err(context))
        .collect()
}
