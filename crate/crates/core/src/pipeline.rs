//! End-to-end wiring: ingest, clip to the study area, infer homes,
//! featurize, split and evaluate every requested task.

use std::path::Path;

use crate::config::RunConfig;
use crate::data::{ingest_cohort, read_outlets, Cohort};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_task, Audit, CellOutcome};
use crate::features::{FeatureBuilder, FeatureMatrix, TaskSpec};
use crate::geo::{infer_homes, HomeLocation, OutletIndex};
use crate::split::{make_split, SplitPlan};

/// Everything that does not depend on the task.
pub struct Prepared {
    pub cohort: Cohort,
    pub outlets: OutletIndex,
    pub homes: Vec<Option<HomeLocation>>,
}

fn require_file(field: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(field, format!("file not found: {}", path.display())))
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    require_file("records", &cfg.records)?;
    require_file("events", &cfg.events)?;
    require_file("outlets", &cfg.outlets)?;
    let exec = cfg.execution();
    let raw = ingest_cohort(&cfg.records, &cfg.events)?;
    let cohort = raw.drop_out_of_bounds(&cfg.bbox);
    if cohort.participants.is_empty() {
        return Err(Error::Validation("no minutes left inside the study bounding box".into()));
    }
    let outlets = OutletIndex::new(&read_outlets(&cfg.outlets)?);
    let homes = infer_homes(&cohort, &cfg.home_window, &cfg.dbscan, exec);
    log::info!(
        "{} participants, {} minutes, {} homes inferred",
        cohort.participants.len(),
        cohort.record_count(),
        homes.iter().flatten().count()
    );
    Ok(Prepared { cohort, outlets, homes })
}

impl Prepared {
    pub fn builder(&self, cfg: &RunConfig) -> Result<FeatureBuilder<'_>> {
        FeatureBuilder::new(&self.cohort, &self.outlets, &self.homes, &cfg.features, cfg.execution())
    }

    pub fn split(&self, cfg: &RunConfig) -> Result<SplitPlan> {
        make_split(&self.cohort.participant_ids(), cfg.train_count, cfg.seed)
    }
}

/// Feature matrix of a single task.
pub fn featurize(cfg: &RunConfig, task: TaskSpec) -> Result<FeatureMatrix> {
    let prepared = prepare(cfg)?;
    prepared.builder(cfg)?.matrix(task)
}

pub struct RunOutput {
    pub split: SplitPlan,
    pub cells: Vec<CellOutcome>,
}

/// Runs every (problem, offset, model) cell selected by the config filters.
pub fn run_experiment(cfg: &RunConfig, audit: &dyn Audit) -> Result<RunOutput> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let builder = prepared.builder(cfg)?;
    let split = prepared.split(cfg)?;
    let settings = cfg.eval_settings();
    let models = cfg.models();
    let mut cells = Vec::new();
    for problem in cfg.problems() {
        for offset in cfg.offsets() {
            let task = TaskSpec::new(problem, offset)?;
            let matrix = builder.matrix(task)?;
            log::info!("{task}: {} rows, {} positive", matrix.len(), matrix.positives());
            cells.extend(evaluate_task(&matrix, &split, &models, &cfg.grid, &settings, audit)?);
        }
    }
    Ok(RunOutput { split, cells })
}
