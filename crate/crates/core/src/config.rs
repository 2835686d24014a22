//! The run configuration: a single JSON document whose every field has a
//! default, plus dotted-path overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::BoundingBox;
use crate::error::{Error, Result};
use crate::evaluation::{EvalSettings, GridAxes};
use crate::exec::Execution;
use crate::features::{FeatureConfig, Problem, MAX_OFFSET};
use crate::geo::{ClockWindow, DbscanParams};
use crate::learners::ModelKind;
use crate::synth::{default_bbox, SynthConfig};

pub const SEED_ENV: &str = "FORAGE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub records: PathBuf,
    pub events: PathBuf,
    pub outlets: PathBuf,
    pub ground_truth: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub train_count: usize,
    pub bbox: BoundingBox,
    pub dbscan: DbscanParams,
    pub home_window: ClockWindow,
    pub features: FeatureConfig,
    pub grid: GridAxes,
    pub standardize: bool,
    pub svm_max_train_rows: Option<usize>,
    pub svm_cv_max_iter_eating: usize,
    pub svm_max_iter: usize,
    pub gb_learning_rate: f64,
    pub rf_max_features: Option<usize>,
    pub problems: Vec<Problem>,
    pub offsets: Vec<u32>,
    pub models: Vec<ModelKind>,
    pub threads: Option<usize>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalSettings::default();
        Self {
            records: "data/records.csv".into(),
            events: "data/events.csv".into(),
            outlets: "data/outlets.csv".into(),
            ground_truth: "data/ground_truth.json".into(),
            out_dir: "reports".into(),
            seed: 42,
            train_count: 60,
            bbox: default_bbox(),
            dbscan: DbscanParams::default(),
            home_window: ClockWindow::default(),
            features: FeatureConfig::default(),
            grid: GridAxes::default(),
            standardize: eval.standardize,
            svm_max_train_rows: eval.svm_max_train_rows,
            svm_cv_max_iter_eating: eval.svm_cv_max_iter_eating,
            svm_max_iter: eval.svm_max_iter,
            gb_learning_rate: eval.gb_learning_rate,
            rf_max_features: eval.rf_max_features,
            problems: Problem::ALL.to_vec(),
            offsets: (0..=MAX_OFFSET).collect(),
            models: ModelKind::ALL.to_vec(),
            threads: None,
            synth: SynthConfig::default(),
        }
    }
}

/// Every configurable field as a dotted path with its meaning. `--help`
/// prints this table.
pub const CONFIG_FIELDS: &[(&str, &str)] = &[
    ("records", "minute records CSV (written by synth, read by featurize/run)"),
    ("events", "events CSV"),
    ("outlets", "retail outlets CSV"),
    ("ground_truth", "ground-truth JSON written by synth"),
    ("out_dir", "directory for reports and split.json"),
    ("seed", "root seed for splits, sampling and forests; FORAGE_SEED overrides it"),
    ("train_count", "training individuals; the rest are test individuals"),
    ("bbox.min_lat", "study area: rows outside the box are dropped"),
    ("bbox.max_lat", "study area upper latitude"),
    ("bbox.min_lon", "study area lower longitude"),
    ("bbox.max_lon", "study area upper longitude"),
    ("dbscan.eps_m", "home clustering neighbourhood radius in metres"),
    ("dbscan.min_pts", "home clustering core-point threshold (point itself included)"),
    ("home_window.start", "start of the sleep window used for home inference (HH:MM:SS)"),
    ("home_window.end", "end of the sleep window, exclusive"),
    ("features.time_since_cap", "cap in minutes for time-since features"),
    ("features.time_pattern.intervals", "three meal intervals [{start_minute, end_minute}]; time pattern is the distance to the nearest midpoint"),
    ("grid.lr_c", "logistic regression C values"),
    ("grid.svm_gamma", "SVM gamma values (outer grid axis)"),
    ("grid.svm_c", "SVM C values (inner grid axis)"),
    ("grid.rf_trees", "random forest tree counts (outer grid axis)"),
    ("grid.rf_depth", "random forest maximum depths (inner grid axis)"),
    ("grid.gb_trees", "gradient boosting tree counts (outer grid axis)"),
    ("grid.gb_depth", "gradient boosting maximum depths (inner grid axis)"),
    ("standardize", "z-score features for LR and SVM using training-row statistics"),
    ("svm_max_train_rows", "balanced rows kept per SVM fit, half per class; null keeps all"),
    ("svm_cv_max_iter_eating", "SMO pair-update budget for cross-validation fits on eating"),
    ("svm_max_iter", "SMO budget for every other SVM fit"),
    ("gb_learning_rate", "gradient boosting shrinkage in (0, 1]"),
    ("rf_max_features", "features tried per forest split; null means floor(sqrt(p))"),
    ("problems", "problems to run: eating, purchasing"),
    ("offsets", "prediction offsets in minutes, 0 to 4"),
    ("models", "models to run: lr, svm, rf, gb"),
    ("threads", "worker threads; null uses all cores, 1 runs sequentially"),
    ("synth.seed", "synthetic generator seed; FORAGE_SEED overrides it"),
    ("synth.n_participants", "synthetic participants"),
    ("synth.days", "recorded days per participant"),
    ("synth.minutes_per_day", "recorded minutes per day: the 03:00 sleep hour plus a block from 07:00"),
    ("synth.start_date", "first recorded date (YYYY-MM-DD)"),
    ("synth.bbox.min_lat", "area the synthetic cohort lives in"),
    ("synth.bbox.max_lat", "synthetic area upper latitude"),
    ("synth.bbox.min_lon", "synthetic area lower longitude"),
    ("synth.bbox.max_lon", "synthetic area upper longitude"),
    ("synth.outlets.food_beverage", "food and beverage stores (445)"),
    ("synth.outlets.health_care", "health and personal care stores (446)"),
    ("synth.outlets.gasoline", "gasoline stations (447)"),
    ("synth.outlets.drinking", "drinking places (7224)"),
    ("synth.outlets.eating", "restaurants (7225)"),
    ("synth.home_jitter_m", "radius of positional noise around homes"),
    ("synth.visit_jitter_m", "radius of positional noise around other places"),
    ("synth.eating.outlet", "outlet category driving eating"),
    ("synth.eating.max_distance_m", "eating rule: outlet distance threshold"),
    ("synth.eating.max_time_pattern", "eating rule: time pattern threshold in minutes, null to ignore time"),
    ("synth.eating.p_high", "per-minute eating probability when the rule holds"),
    ("synth.eating.p_low", "per-minute eating probability otherwise"),
    ("synth.purchasing.outlet", "outlet category driving purchasing"),
    ("synth.purchasing.max_distance_m", "purchasing rule: outlet distance threshold"),
    ("synth.purchasing.max_time_pattern", "purchasing rule: time pattern threshold, null to ignore time"),
    ("synth.purchasing.p_high", "per-minute purchasing probability when the rule holds"),
    ("synth.purchasing.p_low", "per-minute purchasing probability otherwise"),
    ("synth.meal_visit_prob", "chance of eating out in each meal window"),
    ("synth.extra_eating_visit_prob", "chance per day of a restaurant visit outside meal times"),
    ("synth.store_visit_prob", "chance per day of a food store visit"),
    ("synth.work_day_prob", "chance a day is spent at work from 09:00 to 17:00"),
    ("synth.walk_prob", "chance per day of a walk"),
    ("synth.missing_gps_fraction", "fraction of daytime rows without coordinates"),
    ("synth.outlier_fraction", "fraction of daytime rows moved outside the study area"),
    ("synth.nonwear_fraction", "fraction of rows flagged as not worn"),
];

/// Dotted paths of every leaf in a JSON object; arrays count as leaves.
pub fn leaf_paths(v: &Value) -> BTreeSet<String> {
    fn walk(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let path = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(child, &path, out);
                }
            }
            _ => {
                out.insert(prefix.to_string());
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(v, "", &mut out);
    out
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(json_field(&e.to_string()), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Sets one field by dotted path. The value is parsed as JSON, falling
    /// back to a plain string.
    pub fn set(&mut self, path: &str, raw: &str) -> Result<()> {
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::config(path, "no such config field"))?;
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::config(path, e.to_string()))?;
        Ok(())
    }

    /// Applies the seed environment override to both seeds.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::config("seed", format!("{SEED_ENV}={raw} is not an unsigned integer")))?;
            self.seed = seed;
            self.synth.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_count < 2 {
            return Err(Error::config("train_count", "must be at least 2"));
        }
        self.bbox.validate().map_err(|_| Error::config("bbox", "min must be below max on both axes"))?;
        self.dbscan.validate()?;
        if self.home_window.start == self.home_window.end {
            return Err(Error::config("home_window", "start and end must differ"));
        }
        self.features.time_pattern.validate()?;
        if self.features.time_since_cap == 0 {
            return Err(Error::config("features.time_since_cap", "must be positive"));
        }
        self.grid.validate()?;
        if self.svm_max_train_rows.is_some_and(|n| n < 2) {
            return Err(Error::config("svm_max_train_rows", "must keep at least one row per class"));
        }
        if self.svm_cv_max_iter_eating == 0 {
            return Err(Error::config("svm_cv_max_iter_eating", "must be positive"));
        }
        if self.svm_max_iter == 0 {
            return Err(Error::config("svm_max_iter", "must be positive"));
        }
        if !(self.gb_learning_rate > 0.0 && self.gb_learning_rate <= 1.0) {
            return Err(Error::config("gb_learning_rate", "must lie in (0, 1]"));
        }
        if self.rf_max_features == Some(0) {
            return Err(Error::config("rf_max_features", "must be positive"));
        }
        if self.problems.is_empty() {
            return Err(Error::config("problems", "must not be empty"));
        }
        if self.offsets.is_empty() {
            return Err(Error::config("offsets", "must not be empty"));
        }
        if let Some(k) = self.offsets.iter().find(|&&k| k > MAX_OFFSET) {
            return Err(Error::config("offsets", format!("{k} is outside 0..={MAX_OFFSET}")));
        }
        if self.models.is_empty() {
            return Err(Error::config("models", "must not be empty"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        self.synth.validate()
    }

    /// Filters deduplicated and in canonical order.
    pub fn problems(&self) -> Vec<Problem> {
        self.problems.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn offsets(&self) -> Vec<u32> {
        self.offsets.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn models(&self) -> Vec<ModelKind> {
        self.models.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn execution(&self) -> Execution {
        let threads = self
            .threads
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Execution::from_threads(threads)
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            seed: self.seed,
            standardize: self.standardize,
            svm_max_train_rows: self.svm_max_train_rows,
            svm_cv_max_iter_eating: self.svm_cv_max_iter_eating,
            svm_max_iter: self.svm_max_iter,
            gb_learning_rate: self.gb_learning_rate,
            rf_max_features: self.rf_max_features,
            exec: self.execution(),
        }
    }
}

/// Best-effort field name from a serde error message.
fn json_field(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .filter(|s| !s.is_empty())
        .unwrap_or("config")
        .to_string()
}
