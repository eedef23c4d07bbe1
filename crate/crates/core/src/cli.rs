//! The `geoformer` command-line driver.
//!
//! Exit codes: 0 success, 1 failed selftest, 2 config error, 3 data error,
//! 4 numerical abort.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::GeoError;
use crate::graphdata::{
    generate_synthetic, load_graph, write_dataset, Graph, SplitMasks, SyntheticSpec,
};
use crate::model::{evaluate, train, ModelParams, RunMetrics, TrainConfig};
use crate::selftest::{run_suite, Suite, SuiteReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const SUMMARY_HEADER: &str =
    "run,config_hash,best_epoch,val_accuracy,val_weighted_f1,val_macro_f1,test_accuracy,test_weighted_f1,test_macro_f1";

/// A failed command: exit code plus a one-line diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

impl CliFailure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<GeoError> for CliFailure {
    fn from(e: GeoError) -> Self {
        let code = match &e {
            GeoError::Config(_) | GeoError::BatchSize { .. } => EXIT_CONFIG,
            GeoError::Load(_) | GeoError::Split(_) | GeoError::Io(_) | GeoError::Json(_) => {
                EXIT_DATA
            }
            GeoError::Dimension(_) | GeoError::Contract(_) => EXIT_DATA,
            GeoError::NumericalAbort { .. }
            | GeoError::NonFinite(_)
            | GeoError::Domain(_)
            | GeoError::Rank(_)
            | GeoError::Singular(_) => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliFailure>;

fn config_help() -> String {
    let defaults = serde_json::to_string_pretty(&TrainConfig::default()).unwrap_or_default();
    format!(
        "Config file: a JSON object with any of the keys below (defaults shown), plus\n\
         optional \"data_dir\" and \"out_dir\". Unknown keys are rejected.\n\n{defaults}\n\n\
         Set GEOFORMER_THREADS to allow more than one matmul thread."
    )
}

#[derive(Debug, Parser)]
#[command(name = "geoformer", version, about = "Geometry-aware graph transformers", after_help = config_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics.json, history.csv, model.json and config.json.
    #[command(after_help = config_help())]
    Train {
        /// JSON training config.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory; overrides data_dir from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory; overrides out_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a trained run directory on all three splits and write eval.json there.
    Eval {
        /// Defaults to config.json inside the run directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory holding model.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset. The config holds the generator, e.g.
    /// {"kind":"tree","branching":2,"depth":3}.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run verification suites; all three when --suite is absent.
    Selftest {
        /// geometry, attention or gradcheck
        #[arg(long)]
        suite: Option<String>,
    },
    /// Train every combination of a parameter grid and write summary.csv.
    #[command(after_help = config_help())]
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// JSON object mapping config keys to lists of values.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Parsed config file: the training config plus optional paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl CliConfig {
    pub fn from_value(value: Value) -> CliResult<Self> {
        let (train, data_dir, out_dir) = split_paths(value)?;
        let train = TrainConfig::from_value(Value::Object(train))
            .map_err(|e| CliFailure::config(e.to_string()))?;
        Ok(Self {
            train,
            data_dir,
            out_dir,
        })
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        Self::from_value(parse_json_object(text)?)
    }
}

fn parse_json_object(text: &str) -> CliResult<Value> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| CliFailure::config(format!("config: {e}")))?;
    if !value.is_object() {
        return Err(CliFailure::config("config: expected a JSON object"));
    }
    Ok(value)
}

type PathSplit = (Map<String, Value>, Option<PathBuf>, Option<PathBuf>);

fn split_paths(value: Value) -> CliResult<PathSplit> {
    let Value::Object(mut map) = value else {
        return Err(CliFailure::config("config: expected a JSON object"));
    };
    let mut take = |key: &str| -> CliResult<Option<PathBuf>> {
        match map.remove(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(other) => Err(CliFailure::config(format!(
                "{key} must be a string, got {other}"
            ))),
        }
    };
    let data = take("data_dir")?;
    let out = take("out_dir")?;
    Ok((map, data, out))
}

fn read_config_value(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliFailure::config(format!("cannot read {}: {e}", path.display())))?;
    parse_json_object(&text)
}

fn load_data(dir: &Path) -> CliResult<(Graph, SplitMasks)> {
    load_graph(dir).map_err(|e| CliFailure::data(format!("{}: {e}", dir.display())))
}

fn pick(flag: Option<PathBuf>, from_config: Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    flag.or(from_config)
        .ok_or_else(|| CliFailure::config(format!("no {what} given (flag or config key)")))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| CliFailure::data(format!("cannot write {}: {e}", path.display())))
}

fn canonical_config(cfg: &TrainConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("TrainConfig always serializes") + "\n"
}

/// Hex SHA-256 of the canonical JSON form of a resolved config.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let digest = Sha256::digest(canonical_config(cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn train_into(
    cfg: &TrainConfig,
    g: &Graph,
    masks: &SplitMasks,
    out: &Path,
) -> CliResult<RunMetrics> {
    let artifacts = train(cfg, g, masks)?;
    artifacts
        .write(out)
        .map_err(|e| CliFailure::data(format!("cannot write run to {}: {e}", out.display())))?;
    write_file(&out.join("config.json"), &canonical_config(cfg))?;
    Ok(artifacts.metrics)
}

pub fn cmd_train(
    config: &Path,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> CliResult<String> {
    let mut cfg = CliConfig::from_value(read_config_value(config)?)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let data = pick(data, cfg.data_dir, "data directory")?;
    let out = pick(out, cfg.out_dir, "output directory")?;
    let (g, masks) = load_data(&data)?;
    let m = train_into(&cfg.train, &g, &masks, &out)?;
    Ok(format!(
        "best epoch {} of {}: val acc {:.4}, test acc {:.4}, test weighted F1 {:.4}",
        m.best_epoch, m.epochs_run, m.val.accuracy, m.test.accuracy, m.test.weighted_f1
    ))
}

pub fn cmd_eval(
    config: Option<PathBuf>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CliResult<String> {
    let file_cfg = match (&config, &out) {
        (Some(path), _) => CliConfig::from_value(read_config_value(path)?)?,
        (None, Some(run)) => CliConfig::from_value(read_config_value(&run.join("config.json"))?)?,
        (None, None) => return Err(CliFailure::config("eval needs --out or --config")),
    };
    let run = pick(out, file_cfg.out_dir, "run directory")?;
    let data = pick(data, file_cfg.data_dir, "data directory")?;
    let model_path = run.join("model.json");
    let text = fs::read_to_string(&model_path)
        .map_err(|e| CliFailure::data(format!("cannot read {}: {e}", model_path.display())))?;
    let params =
        ModelParams::from_json(&text).map_err(|e| CliFailure::data(format!("model.json: {e}")))?;
    let (g, masks) = load_data(&data)?;
    let mut report = Map::new();
    for (split, mask) in [
        ("train", &masks.train),
        ("val", &masks.val),
        ("test", &masks.test),
    ] {
        let m = evaluate(&params, &file_cfg.train, &g, mask)?;
        report.insert(
            split.to_string(),
            serde_json::to_value(m).map_err(GeoError::from)?,
        );
    }
    let body = serde_json::to_string_pretty(&Value::Object(report)).map_err(GeoError::from)? + "\n";
    write_file(&run.join("eval.json"), &body)?;
    Ok(body.trim_end().to_string())
}

pub fn cmd_generate(config: &Path, out: &Path, seed: u64) -> CliResult<String> {
    let text = fs::read_to_string(config)
        .map_err(|e| CliFailure::config(format!("cannot read {}: {e}", config.display())))?;
    let spec: SyntheticSpec = serde_json::from_str(&text)
        .map_err(|e| CliFailure::config(format!("generator config: {e}")))?;
    let (g, masks) = generate_synthetic(&spec, seed)?;
    write_dataset(out, &g, &masks)
        .map_err(|e| CliFailure::data(format!("{}: {e}", out.display())))?;
    Ok(format!(
        "wrote {} nodes, {} edges, {} classes to {}",
        g.num_nodes(),
        g.num_edges(),
        g.num_classes(),
        out.display()
    ))
}

/// Maps suite reports to an exit code and the printed text. A failure names
/// the failing checks on the last line.
pub fn selftest_outcome(reports: &[SuiteReport]) -> (i32, String) {
    let mut text = String::new();
    let mut failed = Vec::new();
    for r in reports {
        text.push_str(&format!("== {:?}\n", r.suite).to_lowercase());
        text.push_str(&r.render());
        failed.extend(r.failures().into_iter().map(str::to_string));
    }
    if failed.is_empty() {
        (EXIT_OK, text + "all checks passed")
    } else {
        (
            EXIT_SELFTEST,
            text + &format!("FAILED: {}", failed.join(", ")),
        )
    }
}

pub fn cmd_selftest(suite: Option<&str>) -> CliResult<(i32, String)> {
    let suites = match suite {
        Some(s) => vec![s.parse::<Suite>()?],
        None => vec![Suite::Geometry, Suite::Attention, Suite::Gradcheck],
    };
    let reports = suites
        .into_iter()
        .map(run_suite)
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(selftest_outcome(&reports))
}

/// Cartesian product of the grid in key order, last key varying fastest.
pub fn expand_grid(grid: &Value) -> CliResult<Vec<Map<String, Value>>> {
    let Value::Object(axes) = grid else {
        return Err(CliFailure::config(
            "grid: expected a JSON object of value lists",
        ));
    };
    if axes.is_empty() {
        return Err(CliFailure::config("grid is empty"));
    }
    let mut combos = vec![Map::new()];
    for (key, values) in axes {
        let Value::Array(values) = values else {
            return Err(CliFailure::config(format!(
                "grid: {key} must map to a list"
            )));
        };
        if values.is_empty() {
            return Err(CliFailure::config(format!("grid: {key} has no values")));
        }
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(key.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(combos)
}

fn summary_row(name: &str, hash: &str, m: &RunMetrics) -> String {
    format!(
        "{name},{hash},{},{},{},{},{},{},{}",
        m.best_epoch,
        m.val.accuracy,
        m.val.weighted_f1,
        m.val.macro_f1,
        m.test.accuracy,
        m.test.weighted_f1,
        m.test.macro_f1
    )
}

fn read_metrics(dir: &Path) -> CliResult<RunMetrics> {
    let path = dir.join("metrics.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliFailure::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliFailure::data(format!("{}: {e}", path.display())))
}

/// Runs land in `run-NNN-<hash prefix>`; a run directory that already holds
/// `metrics.json` is reused, so an interrupted sweep resumes where it stopped.
pub fn cmd_sweep(
    config: &Path,
    grid: &Path,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> CliResult<String> {
    let (base, data_dir, out_dir) = split_paths(read_config_value(config)?)?;
    let grid_text = fs::read_to_string(grid)
        .map_err(|e| CliFailure::config(format!("cannot read {}: {e}", grid.display())))?;
    let grid: Value =
        serde_json::from_str(&grid_text).map_err(|e| CliFailure::config(format!("grid: {e}")))?;
    let combos = expand_grid(&grid)?;
    let mut configs = Vec::with_capacity(combos.len());
    for combo in &combos {
        let mut merged = base.clone();
        merged.extend(combo.clone());
        let mut cfg = TrainConfig::from_value(Value::Object(merged))
            .map_err(|e| CliFailure::config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        configs.push(cfg);
    }
    let data = pick(data, data_dir, "data directory")?;
    let out = pick(out, out_dir, "output directory")?;
    let (g, masks) = load_data(&data)?;
    fs::create_dir_all(&out)
        .map_err(|e| CliFailure::data(format!("cannot create {}: {e}", out.display())))?;

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    let mut trained = 0;
    for (i, cfg) in configs.iter().enumerate() {
        let hash = config_hash(cfg);
        let name = format!("run-{i:03}-{}", &hash[..12]);
        let dir = out.join(&name);
        let metrics = if dir.join("metrics.json").is_file() {
            read_metrics(&dir)?
        } else {
            let staging = out.join(format!(".partial-{name}"));
            if staging.exists() {
                fs::remove_dir_all(&staging).map_err(|e| {
                    CliFailure::data(format!("cannot clear {}: {e}", staging.display()))
                })?;
            }
            let m = train_into(cfg, &g, &masks, &staging)?;
            fs::rename(&staging, &dir).map_err(|e| {
                CliFailure::data(format!("cannot move run into {}: {e}", dir.display()))
            })?;
            trained += 1;
            m
        };
        summary.push_str(&summary_row(&name, &hash, &metrics));
        summary.push('\n');
    }
    write_file(&out.join("summary.csv"), &summary)?;
    Ok(format!(
        "{} runs ({} trained, {} reused), summary in {}",
        configs.len(),
        trained,
        configs.len() - trained,
        out.join("summary.csv").display()
    ))
}

/// Parses `args` (program name first) and runs the command. Returns the exit
/// code; diagnostics go to stderr and results to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
        } => cmd_train(&config, data, out, seed).map(|s| (EXIT_OK, s)),
        Command::Eval { config, data, out } => cmd_eval(config, data, out).map(|s| (EXIT_OK, s)),
        Command::Generate { config, out, seed } => {
            cmd_generate(&config, &out, seed).map(|s| (EXIT_OK, s))
        }
        Command::Selftest { suite } => cmd_selftest(suite.as_deref()),
        Command::Sweep {
            config,
            grid,
            data,
            out,
            seed,
        } => cmd_sweep(&config, &grid, data, out, seed).map(|s| (EXIT_OK, s)),
    };
    // A closed stdout (e.g. piped into `head`) must not turn into a panic.
    match outcome {
        Ok((code, text)) => {
            let _ = writeln!(io::stdout(), "{text}");
            code
        }
        Err(f) => {
            let _ = writeln!(io::stderr(), "error: {}", f.message);
            f.code
        }
    }
}
