use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{CellOutcome, ExperimentResult};
use crate::error::{Error, Result};
use crate::features::{Problem, FEATURE_NAMES};
use crate::learners::ModelKind;

pub const REPORT_DECIMALS: usize = 4;

fn num(v: f64) -> String {
    format!("{v:.REPORT_DECIMALS$}")
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(format!("csv encoding: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Mean train/valid/test over offsets, one row per model and a column
/// triple per problem.
fn summary(cells: &[CellOutcome], problems: &[Problem], models: &[ModelKind]) -> Result<String> {
    let mut header = vec!["model".to_string()];
    for p in problems {
        for col in ["train", "valid", "test"] {
            header.push(format!("{p}_{col}"));
        }
    }
    let rows: Vec<Vec<String>> = models
        .iter()
        .map(|&m| {
            let mut row = vec![m.to_string()];
            for &p in problems {
                let done: Vec<&ExperimentResult> = cells
                    .iter()
                    .filter_map(CellOutcome::result)
                    .filter(|r| r.model == m && r.problem == p)
                    .collect();
                let picks: [fn(&ExperimentResult) -> f64; 3] = [|r| r.mean_train, |r| r.mean_valid, |r| r.test];
                for pick in picks {
                    let vals: Vec<f64> = done.iter().map(|r| pick(r)).collect();
                    row.push(mean(&vals).map(num).unwrap_or_default());
                }
            }
            row
        })
        .collect();
    csv_text(&header, &rows)
}

/// Per-offset scores and chosen hyperparameters of one model.
fn model_table(cells: &[CellOutcome], model: ModelKind, problems: &[Problem], offsets: &[u32]) -> Result<String> {
    let param_names: Vec<&str> = cells
        .iter()
        .filter_map(CellOutcome::result)
        .find(|r| r.model == model)
        .map(|r| r.chosen_params.fields().into_iter().map(|(k, _)| k).collect())
        .unwrap_or_default();
    let mut header = vec!["mins".to_string()];
    for p in problems {
        for col in ["train", "valid", "test"] {
            header.push(format!("{p}_{col}"));
        }
        for name in &param_names {
            header.push(format!("{p}_{name}"));
        }
    }
    let rows: Vec<Vec<String>> = offsets
        .iter()
        .map(|&k| {
            let mut row = vec![k.to_string()];
            for &p in problems {
                match cells.iter().find(|c| c.key() == (p, k, model)) {
                    Some(CellOutcome::Done(r)) => {
                        row.extend([num(r.mean_train), num(r.mean_valid), num(r.test)]);
                        row.extend(r.chosen_params.fields().into_iter().map(|(_, v)| v));
                    }
                    Some(CellOutcome::Skipped(_)) => {
                        row.extend([String::new(), String::new(), "SKIPPED".to_string()]);
                        row.extend(param_names.iter().map(|_| String::new()));
                    }
                    None => row.extend((0..3 + param_names.len()).map(|_| String::new())),
                }
            }
            row
        })
        .collect();
    csv_text(&header, &rows)
}

/// Every grid point with its per-fold and mean scores, in grid order.
fn cv_table(r: &ExperimentResult) -> Result<String> {
    let Some(first) = r.cv.first() else {
        return csv_text(&[], &[]);
    };
    let mut header: Vec<String> = first.params.fields().into_iter().map(|(k, _)| k.to_string()).collect();
    for f in 1..=first.folds.len() {
        header.push(format!("fold{f}_train"));
        header.push(format!("fold{f}_valid"));
    }
    header.push("mean_train".into());
    header.push("mean_valid".into());
    let rows: Vec<Vec<String>> = r
        .cv
        .iter()
        .map(|p| {
            let mut row: Vec<String> = p.params.fields().into_iter().map(|(_, v)| v).collect();
            for &(t, v) in &p.folds {
                row.push(num(t));
                row.push(num(v));
            }
            row.push(num(p.mean_train));
            row.push(num(p.mean_valid));
            row
        })
        .collect();
    csv_text(&header, &rows)
}

fn importance_table(results: &[&ExperimentResult]) -> Result<String> {
    let mut header = vec!["feature_index".to_string(), "feature".to_string()];
    header.extend(results.iter().map(|r| r.model.to_string()));
    let rows: Vec<Vec<String>> = FEATURE_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut row = vec![j.to_string(), name.to_string()];
            for r in results {
                let imp = r.importances.as_deref().unwrap_or(&[]);
                row.push(imp.get(j).copied().map(num).unwrap_or_default());
            }
            row
        })
        .collect();
    csv_text(&header, &rows)
}

/// Renders every report file name and body without touching the disk.
pub(super) fn render(cells: &[CellOutcome]) -> Result<Vec<(String, String)>> {
    if cells.is_empty() {
        return Err(Error::Validation("no experiment results to report".into()));
    }
    let mut cells = cells.to_vec();
    cells.sort_by_key(CellOutcome::key);
    let problems: Vec<Problem> = cells.iter().map(|c| c.key().0).collect::<BTreeSet<_>>().into_iter().collect();
    let offsets: Vec<u32> = cells.iter().map(|c| c.key().1).collect::<BTreeSet<_>>().into_iter().collect();
    let models: Vec<ModelKind> = cells.iter().map(|c| c.key().2).collect::<BTreeSet<_>>().into_iter().collect();

    let mut files = vec![("summary.csv".to_string(), summary(&cells, &problems, &models)?)];
    for &m in &models {
        files.push((format!("results_{m}.csv"), model_table(&cells, m, &problems, &offsets)?));
    }
    let mut by_task: BTreeMap<(Problem, u32), Vec<&ExperimentResult>> = BTreeMap::new();
    for r in cells.iter().filter_map(CellOutcome::result) {
        files.push((format!("cv_{}_{}_min{}.csv", r.model, r.problem, r.offset), cv_table(r)?));
        if r.importances.is_some() {
            by_task.entry((r.problem, r.offset)).or_default().push(r);
        }
    }
    for ((p, k), rs) in by_task {
        files.push((format!("importances_{p}_min{k}.csv"), importance_table(&rs)?));
    }
    files.push(("results.json".to_string(), serde_json::to_string_pretty(&cells)? + "\n"));
    Ok(files)
}

/// Writes the summary, per-model, per-cell CV, importance and JSON reports
/// into `out_dir`, returning the file names written.
pub fn emit_reports(cells: &[CellOutcome], out_dir: &Path) -> Result<Vec<String>> {
    let files = render(cells)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, body) in &files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}
