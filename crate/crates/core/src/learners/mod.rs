//! The four classifiers and the serializable model wrapper.

pub mod boost;
pub mod forest;
pub mod logistic;
pub mod standardize;
pub mod svm;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use boost::{fit_gb, fit_gb_traced, BoostParams, GradientBoosting};
pub use forest::{fit_rf, ForestParams, RandomForest};
pub use logistic::{fit_lr, LogisticModel, LrParams};
pub use svm::{fit_svm, SvmModel, SvmParams};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Svm,
    Rf,
    Gb,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Lr, ModelKind::Svm, ModelKind::Rf, ModelKind::Gb];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Svm => "svm",
            ModelKind::Rf => "rf",
            ModelKind::Gb => "gb",
        }
    }

    /// LR sees the view without the numeric time column.
    pub fn feature_width(self) -> usize {
        match self {
            ModelKind::Lr => crate::features::LR_FEATURE_COUNT,
            _ => crate::features::FEATURE_COUNT,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model `{s}` (expected lr, svm, rf or gb)"))
    }
}

pub(crate) fn check_labels(x: &Matrix, y: &[bool]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Validation(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    let pos = y.iter().filter(|&&l| l).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

pub(crate) fn check_width(expected: usize, x: &Matrix) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::WidthMismatch {
            expected,
            actual: x.cols(),
        });
    }
    Ok(())
}

/// Per-tree importances normalized to 1, averaged over trees that split at
/// least once, then normalized again. All zeros if no tree ever split.
pub(crate) fn ensemble_importances(trees: &[tree::DecisionTree], width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    let mut used = 0usize;
    for t in trees {
        let total: f64 = t.importance.iter().sum();
        if t.split_count() == 0 || total <= 0.0 {
            continue;
        }
        used += 1;
        for (a, v) in acc.iter_mut().zip(&t.importance) {
            *a += v / total;
        }
    }
    if used == 0 {
        return acc;
    }
    let total: f64 = acc.iter().sum();
    acc.iter().map(|v| v / total).collect()
}

/// A fitted classifier together with the hyperparameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Lr { params: LrParams, model: LogisticModel },
    Svm { params: SvmParams, model: SvmModel },
    Rf { params: ForestParams, model: RandomForest },
    Gb { params: BoostParams, model: GradientBoosting },
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    model: TrainedModel,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Lr { .. } => ModelKind::Lr,
            TrainedModel::Svm { .. } => ModelKind::Svm,
            TrainedModel::Rf { .. } => ModelKind::Rf,
            TrainedModel::Gb { .. } => ModelKind::Gb,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Lr { model, .. } => model.width(),
            TrainedModel::Svm { model, .. } => model.width(),
            TrainedModel::Rf { model, .. } => model.n_features,
            TrainedModel::Gb { model, .. } => model.n_features,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<bool>> {
        match self {
            TrainedModel::Lr { model, .. } => model.predict(x),
            TrainedModel::Svm { model, .. } => model.predict(x),
            TrainedModel::Rf { model, .. } => model.predict(x),
            TrainedModel::Gb { model, .. } => model.predict(x),
        }
    }

    pub fn feature_importances(&self) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Rf { model, .. } => Ok(model.feature_importances()),
            TrainedModel::Gb { model, .. } => Ok(model.feature_importances()),
            TrainedModel::Lr { .. } => Err(Error::Unsupported("logistic regression")),
            TrainedModel::Svm { .. } => Err(Error::Unsupported("SVM")),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        Ok(doc.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
