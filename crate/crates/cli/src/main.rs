use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use forage_core::config::{RunConfig, CONFIG_FIELDS, SEED_ENV};
use forage_core::evaluation::{emit_reports, CellOutcome};
use forage_core::exec::init_global_pool;
use forage_core::features::{Problem, TaskSpec, FEATURE_NAMES};
use forage_core::learners::ModelKind;
use forage_core::pipeline::{featurize, run_experiment};
use forage_core::synth::generate;
use forage_core::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "forage", version, about = "Predict eating and food purchasing from minute-level wearable data")]
struct Cli {
    /// JSON run configuration; missing fields take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config field by dotted path, e.g. grid.gb_depth=[1,2]
    #[arg(long = "set", value_name = "FIELD=VALUE", global = true)]
    set: Vec<String>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Shorthands for the most used config fields.
#[derive(Args)]
struct Overrides {
    /// Root seed (config `seed` and `synth.seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (config `threads`)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report directory (config `out_dir`)
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Comma-separated models (config `models`)
    #[arg(long, value_delimiter = ',', global = true)]
    models: Vec<ModelKind>,
    /// Comma-separated problems (config `problems`)
    #[arg(long, value_delimiter = ',', global = true)]
    problems: Vec<Problem>,
    /// Comma-separated offsets in minutes (config `offsets`)
    #[arg(long, value_delimiter = ',', global = true)]
    offsets: Vec<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort at the configured input paths
    Synth,
    /// Export the feature matrix of one task as CSV
    Featurize {
        #[arg(long)]
        problem: Problem,
        #[arg(long, default_value_t = 0)]
        offset: u32,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the full experiment and write reports to out_dir
    Run,
    /// Print a table from a results.json file
    Inspect {
        /// What to list
        #[arg(value_enum, default_value_t = Query::Importances)]
        query: Query,
        /// Results file; defaults to out_dir/results.json
        #[arg(long)]
        results: Option<PathBuf>,
        /// Rows to print per model
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Query {
    /// Feature importances averaged over the selected cells, per model
    Importances,
    /// Cells ranked by test balanced accuracy
    Scores,
}

fn config_help() -> String {
    let width = CONFIG_FIELDS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config fields (JSON via --config, or --set FIELD=VALUE):\n");
    for (field, doc) in CONFIG_FIELDS {
        out.push_str(&format!("  {field:<width$}  {doc}\n"));
    }
    out.push_str(&format!(
        "\nEnvironment:\n  {SEED_ENV}  overrides seed and synth.seed\n  RUST_LOG    log filter (logs go to stderr)\n\nExit codes: 0 ok, 2 config error, 3 data error, 4 runtime error"
    ));
    out
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    for item in &cli.set {
        let (field, value) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.as_str(), "expected FIELD=VALUE"))?;
        cfg.set(field.trim(), value)?;
    }
    let o = &cli.overrides;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(t) = o.threads {
        cfg.threads = Some(t);
    }
    if let Some(dir) = &o.out_dir {
        cfg.out_dir = dir.clone();
    }
    if !o.models.is_empty() {
        cfg.models = o.models.clone();
    }
    if !o.problems.is_empty() {
        cfg.problems = o.problems.clone();
    }
    if !o.offsets.is_empty() {
        cfg.offsets = o.offsets.clone();
    }
    cfg.validate()?;
    if let Some(t) = cfg.threads {
        init_global_pool(t);
    }
    Ok(cfg)
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let cohort = generate(&cfg.synth)?;
    cohort.write_to(&cfg.records, &cfg.events, &cfg.outlets, &cfg.ground_truth)?;
    log::info!("wrote {} minute rows and {} events", cohort.records.len(), cohort.events.len());
    Ok(())
}

fn cmd_featurize(cfg: &RunConfig, problem: Problem, offset: u32, output: &Path) -> Result<()> {
    let matrix = featurize(cfg, TaskSpec::new(problem, offset)?)?;
    matrix.write_csv(output)?;
    log::info!("wrote {} rows to {}", matrix.len(), output.display());
    Ok(())
}

fn cmd_run(cfg: &RunConfig) -> Result<()> {
    let out = run_experiment(cfg, &forage_core::evaluation::NoAudit)?;
    let files = emit_reports(&out.cells, &cfg.out_dir)?;
    out.split.write_json(&cfg.out_dir.join("split.json"))?;
    let path = cfg.out_dir.join("config.json");
    let text = serde_json::to_string_pretty(cfg)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {} report files to {}", files.len() + 2, cfg.out_dir.display());
    Ok(())
}

fn read_results(path: &Path) -> Result<Vec<CellOutcome>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn selected<'a>(cells: &'a [CellOutcome], cfg: &RunConfig) -> impl Iterator<Item = &'a CellOutcome> {
    let (problems, offsets, models) = (cfg.problems(), cfg.offsets(), cfg.models());
    cells.iter().filter(move |c| {
        let (p, k, m) = c.key();
        problems.contains(&p) && offsets.contains(&k) && models.contains(&m)
    })
}

fn cmd_inspect(cfg: &RunConfig, query: Query, results: &Path, top: usize) -> Result<()> {
    let cells = read_results(results)?;
    let done: Vec<_> = selected(&cells, cfg).filter_map(CellOutcome::result).collect();
    match query {
        Query::Importances => {
            let mut sums: BTreeMap<ModelKind, (Vec<f64>, usize)> = BTreeMap::new();
            for r in &done {
                if let Some(imp) = &r.importances {
                    let (sum, n) = sums.entry(r.model).or_insert_with(|| (vec![0.0; imp.len()], 0));
                    sum.iter_mut().zip(imp).for_each(|(s, v)| *s += v);
                    *n += 1;
                }
            }
            if sums.is_empty() {
                return Err(Error::Validation("no feature importances among the selected cells".into()));
            }
            println!("model,rank,feature_index,feature,importance");
            for (model, (sum, n)) in sums {
                let mut ranked: Vec<(usize, f64)> = sum.iter().map(|s| s / n as f64).enumerate().collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                for (rank, (j, v)) in ranked.into_iter().take(top).enumerate() {
                    println!("{model},{},{j},{},{v:.4}", rank + 1, FEATURE_NAMES.get(j).unwrap_or(&"?"));
                }
            }
        }
        Query::Scores => {
            let mut ranked = done;
            ranked.sort_by(|a, b| b.test.total_cmp(&a.test));
            println!("problem,offset,model,params,mean_train,mean_valid,test");
            for r in ranked.into_iter().take(top) {
                println!(
                    "{},{},{},{},{:.4},{:.4},{:.4}",
                    r.problem, r.offset, r.model, r.chosen_params, r.mean_train, r.mean_valid, r.test
                );
            }
        }
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Featurize { problem, offset, output } => cmd_featurize(&cfg, *problem, *offset, output),
        Command::Run => cmd_run(&cfg),
        Command::Inspect { query, results, top } => {
            let path = results.clone().unwrap_or_else(|| cfg.out_dir.join("results.json"));
            cmd_inspect(&cfg, *query, &path, *top)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let help = config_help();
    let matches = Cli::command().after_long_help(help.clone()).after_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = match e.class() {
                ErrorClass::Config => ("config", 2),
                ErrorClass::Data => ("data", 3),
                ErrorClass::Runtime => ("runtime", 4),
            };
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{class}]: {message}");
            ExitCode::from(code)
        }
    }
}
