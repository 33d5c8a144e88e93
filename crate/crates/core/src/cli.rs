//! Command-line frontend. Artifacts go to files; stdout gets one summary
//! line per command; diagnostics go to stderr.
//!
//! Exit codes: 0 ok, 2 parse, 3 numeric, 4 usage, 5 domain.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::eval::{
    ablation_curves, auc_protocol, correlation_analysis, runtime_bench, BenchRow, CorrelationReport, EvalError,
};
use crate::graph::{dataset_stats, Dataset, GraphError};
use crate::ingest::{
    load_activity_csv, load_catalog, load_edge_list, randomize_timestamps, shuffle_successors, synthesize,
    ActivityOptions, DwellTime, EdgeGrouping, EdgeListOptions, IngestError, SyntheticConfig,
};
use crate::tp_matrix::{TpError, WeightScheme};
use crate::tppi::TppiError;
use crate::trainer::{predict_next, train, FactorModel, Hyperparams, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 4;
pub const EXIT_DOMAIN: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn parse(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_PARSE,
            message: message.into(),
        }
    }
}

fn graph_code(e: &GraphError) -> i32 {
    match e {
        GraphError::UnknownNode { .. } | GraphError::HorizonBeforeLastEvent { .. } => EXIT_DOMAIN,
        _ => EXIT_PARSE,
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let code = match &e {
            IngestError::Graph(g) => graph_code(g),
            IngestError::InvalidWindow(_) | IngestError::InvalidConfig(_) | IngestError::NoAbsorbingState => {
                EXIT_USAGE
            }
            _ => EXIT_PARSE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::NonFinite { .. } => EXIT_NUMERIC,
            TrainError::InvalidHyperparam(_) => EXIT_USAGE,
            TrainError::Graph(g) => graph_code(g),
            TrainError::Tp(TpError::UnknownNode { .. }) | TrainError::Tppi(TppiError::UnknownNode(_)) => EXIT_DOMAIN,
            TrainError::Io(_) | TrainError::Format(_) | TrainError::SchemaVersion(_) => EXIT_PARSE,
            _ => EXIT_DOMAIN,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::Ingest(i) => i.into(),
            EvalError::InvalidSizes(_) | EvalError::ThreadPool(_) => CliError::usage(e.to_string()),
            other => Self {
                code: EXIT_DOMAIN,
                message: other.to_string(),
            },
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::parse(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "tpnm", version, about = "Temporal link prediction with time-parameterized matrices")]
pub struct Cli {
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset statistics (node count, average degree, absent:observed ratio).
    Stats {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Train a model and write it with its per-epoch log.
    Train {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Model file to write.
        #[arg(long, default_value = "model.json")]
        model_out: PathBuf,
        /// Per-epoch log CSV.
        #[arg(long, default_value = "train_log.csv")]
        log_out: PathBuf,
    },
    /// Rank candidate next nodes for an instance at a query time.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Activity CSV holding the instance.
        #[arg(long)]
        instance: PathBuf,
        /// Instance to use when the file holds several.
        #[arg(long)]
        instance_id: Option<String>,
        /// Query time in seconds; defaults to the last event.
        #[arg(long)]
        at: Option<i64>,
        /// Keep only the best N candidates.
        #[arg(long)]
        top: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Leave-last-out AUC with RMSE/MAE.
    Evaluate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Per-epoch RMSE for every weight scheme.
    Ablation {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Pearson correlation between node columns with a clustering order.
    Correlate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "tp-initial")]
        scheme: WeightScheme,
        /// Cluster order list; defaults to the output path with `.order.csv`.
        #[arg(long)]
        order_out: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Training wall time over synthetic datasets of growing size.
    Bench {
        /// Instance counts, ascending.
        #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 2000, 4000])]
        sizes: Vec<usize>,
        #[command(flatten)]
        hyper: HyperArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Generate a synthetic activity CSV.
    Synth {
        #[arg(long, value_enum, default_value = "crm")]
        preset: Preset,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Chain length for the chain presets.
        #[arg(long, default_value_t = 12)]
        nodes: usize,
        #[arg(long, default_value_t = 0.44)]
        missing_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cut walks at a random length.
        #[arg(long)]
        censor: bool,
        #[arg(long, default_value_t = 1)]
        dwell_min: i64,
        #[arg(long, default_value_t = 60)]
        dwell_max: i64,
        /// Node catalog CSV to write alongside.
        #[arg(long)]
        catalog_out: Option<PathBuf>,
        #[arg(long, default_value = "synthetic.csv")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Twelve-activity sales workflow.
    Crm,
    /// Fixed successor chain.
    Chain,
    /// Chain with node labels permuted inside each instance.
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// `instance_id,activity_id,timestamp` CSV.
    Activity,
    /// Whitespace-separated `src dst [weight] timestamp`.
    EdgeList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grouping {
    Global,
    PerSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to `activity` for `.csv` files, `edge-list` otherwise.
    #[arg(long, value_enum)]
    pub input_format: Option<InputFormat>,
    /// Node catalog CSV `id,label[,revisitable]`.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "global")]
    pub grouping: Grouping,
    /// Sort out-of-order edge lists instead of failing.
    #[arg(long)]
    pub sort: bool,
    /// Reject tied timestamps instead of nudging them by one second.
    #[arg(long)]
    pub strict: bool,
    /// Redraw timestamps uniformly within this many seconds of each
    /// instance start (72 h = 259200).
    #[arg(long)]
    pub randomize_window: Option<i64>,
    /// Seed for timestamp randomization.
    #[arg(long, default_value_t = 0)]
    pub randomize_seed: u64,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Artifact path; a default name in the working directory otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Model hyperparameters; unset flags fall back to the config file,
/// then to the listed default.
#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Neighborhood window radius [default: 3]
    #[arg(long)]
    pub alpha: Option<usize>,
    /// Initial learning rate, decayed to 1e-4 [default: 0.1]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Predictive influence threshold in [0, 1) (required)
    #[arg(long)]
    pub beta: Option<f64>,
    /// Momentum [default: 0.9]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Maximum number of epochs [default: 1000]
    #[arg(long = "M", alias = "max-epochs")]
    pub max_epochs: Option<usize>,
    /// Latent dimension [default: 16]
    #[arg(short = 'k', long = "k")]
    pub k: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight scheme: adjacency, tp-initial, tp-recent [default: tp-initial]
    #[arg(long)]
    pub scheme: Option<WeightScheme>,
    /// Sum the data term over the last alpha+1 prefix snapshots.
    #[arg(long)]
    pub snapshots: bool,
    /// Scale reconstruction rows by node influence.
    #[arg(long)]
    pub influence_rows: bool,
    /// key=value file with the same names as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const CONFIG_KEYS: [&str; 11] = [
    "alpha",
    "lambda",
    "beta",
    "gamma",
    "M",
    "k",
    "seed",
    "scheme",
    "snapshots",
    "influence-rows",
    "threads",
];

fn read_config(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::parse(format!("{}:{}: expected key=value", path.display(), i + 1)));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let key = if key == "max-epochs" { "M".to_string() } else { key };
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::usage(format!("{}:{}: unknown key `{key}`", path.display(), i + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn config_value<T: std::str::FromStr>(cfg: &HashMap<String, String>, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    cfg.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| CliError::usage(format!("config key `{key}`: {e}")))
        })
        .transpose()
}

/// Resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub hyperparams: Hyperparams,
    pub scheme: WeightScheme,
    pub threads: Option<usize>,
}

impl HyperArgs {
    pub fn resolve(&self, threads: Option<usize>) -> Result<RunConfig, CliError> {
        let cfg = match &self.config {
            Some(p) => read_config(p)?,
            None => HashMap::new(),
        };
        let beta = match self.beta {
            Some(b) => b,
            None => config_value(&cfg, "beta")?
                .ok_or_else(|| CliError::usage("missing required flag --beta (value in [0, 1))"))?,
        };
        let mut hp = Hyperparams::new(beta);
        if let Some(v) = self.alpha.or(config_value(&cfg, "alpha")?) {
            hp.alpha = v;
        }
        if let Some(v) = self.lambda.or(config_value(&cfg, "lambda")?) {
            hp.lambda0 = v;
        }
        if let Some(v) = self.gamma.or(config_value(&cfg, "gamma")?) {
            hp.gamma = v;
        }
        if let Some(v) = self.max_epochs.or(config_value(&cfg, "M")?) {
            hp.max_epochs = v;
        }
        if let Some(v) = self.k.or(config_value(&cfg, "k")?) {
            hp.k = v;
        }
        if let Some(v) = self.seed.or(config_value(&cfg, "seed")?) {
            hp.seed = v;
        }
        hp.snapshots = self.snapshots || config_value(&cfg, "snapshots")?.unwrap_or(false);
        hp.influence_rows = self.influence_rows || config_value(&cfg, "influence-rows")?.unwrap_or(false);
        hp.validate()?;
        let scheme = match self.scheme {
            Some(s) => s,
            None => config_value(&cfg, "scheme")?.unwrap_or(WeightScheme::TpInitial),
        };
        let threads = threads.or(config_value(&cfg, "threads")?);
        Ok(RunConfig {
            hyperparams: hp,
            scheme,
            threads,
        })
    }
}

fn load_input(args: &InputArgs) -> Result<Dataset, CliError> {
    let format = args.input_format.unwrap_or_else(|| {
        match args.input.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Activity,
            _ => InputFormat::EdgeList,
        }
    });
    let catalog = args.catalog.as_deref().map(load_catalog).transpose()?;
    let ds = match format {
        InputFormat::Activity => {
            load_activity_csv(&args.input, catalog.as_ref(), ActivityOptions { strict: args.strict })?
        }
        InputFormat::EdgeList => {
            if catalog.is_some() {
                return Err(CliError::usage("--catalog applies to activity input only"));
            }
            let grouping = match args.grouping {
                Grouping::Global => EdgeGrouping::Global,
                Grouping::PerSource => EdgeGrouping::PerSource,
            };
            load_edge_list(
                &args.input,
                EdgeListOptions {
                    grouping,
                    sort: args.sort,
                    strict: args.strict,
                },
            )?
        }
    };
    match args.randomize_window {
        Some(w) => Ok(randomize_timestamps(&ds, w, args.randomize_seed)?),
        None => Ok(ds),
    }
}

/// Formats with nine significant digits.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, x)
    } else {
        format!("{x:.8e}")
    }
}

fn round9(x: f64) -> f64 {
    fmt_float(x).parse().unwrap_or(x)
}

fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64().map(round9).and_then(serde_json::Number::from_f64) {
                *n = x;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::parse(e.to_string()))?;
    round_json(&mut v);
    serde_json::to_string_pretty(&v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::parse(e.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn out_path(output: &OutputArgs, stem: &str) -> PathBuf {
    output.out.clone().unwrap_or_else(|| {
        PathBuf::from(match output.format {
            Format::Csv => format!("{stem}.csv"),
            Format::Json => format!("{stem}.json"),
        })
    })
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::parse(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::parse(e.to_string()))
}

fn set_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // a second initialisation in the same process is harmless to skip
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn cmd_stats(input: &InputArgs, output: &OutputArgs) -> Result<String, CliError> {
    let ds = load_input(input)?;
    let stats = dataset_stats(&ds);
    let path = out_path(output, "stats");
    let body = match output.format {
        Format::Json => {
            #[derive(Serialize)]
            struct StatsOut {
                instances: usize,
                total_nodes: usize,
                average_degree: f64,
                absent_observed: String,
                absent: u64,
                observed: u64,
            }
            to_json(&StatsOut {
                instances: stats.instances,
                total_nodes: stats.total_nodes,
                average_degree: stats.average_degree,
                absent_observed: stats.absent_observed.to_string(),
                absent: stats.absent_observed.absent,
                observed: stats.absent_observed.observed,
            })?
        }
        Format::Csv => csv_table(
            &["instances", "total_nodes", "average_degree", "absent_observed"],
            [vec![
                stats.instances.to_string(),
                stats.total_nodes.to_string(),
                fmt_float(stats.average_degree),
                stats.absent_observed.to_string(),
            ]],
        )?,
    };
    write_file(&path, &body)?;
    Ok(format!(
        "instances={} total_nodes={} average_degree={} absent_observed={}",
        stats.instances,
        stats.total_nodes,
        fmt_float(stats.average_degree),
        stats.absent_observed
    ))
}

fn epoch_csv(log: &[crate::trainer::EpochRecord]) -> Result<String, CliError> {
    csv_table(
        &["epoch", "objective", "rmse", "mae", "lambda", "decay"],
        log.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                fmt_float(r.objective),
                fmt_float(r.rmse),
                fmt_float(r.mae),
                fmt_float(r.lambda),
                fmt_float(r.decay),
            ]
        }),
    )
}

fn cmd_train(
    input: &InputArgs,
    hyper: &HyperArgs,
    threads: Option<usize>,
    model_out: &Path,
    log_out: &Path,
) -> Result<String, CliError> {
    let rc = hyper.resolve(threads)?;
    set_threads(rc.threads);
    let ds = load_input(input)?;
    let out = train(&ds, &rc.hyperparams, rc.scheme)?;
    out.model.save(model_out)?;
    write_file(log_out, &epoch_csv(&out.log)?)?;
    Ok(format!(
        "epochs={} converged={} final_rmse={} final_mae={}",
        out.log.len(),
        out.converged,
        fmt_float(out.final_rmse()),
        fmt_float(out.log.last().map(|r| r.mae).unwrap_or(f64::NAN))
    ))
}

fn cmd_predict(
    model: &Path,
    instance: &Path,
    instance_id: Option<&str>,
    at: Option<i64>,
    top: Option<usize>,
    output: &OutputArgs,
) -> Result<String, CliError> {
    let model = FactorModel::load(model)?;
    let ds = load_activity_csv(instance, Some(&model.catalog), ActivityOptions::default())?;
    let seq = match instance_id {
        Some(id) => ds
            .instances
            .iter()
            .find(|s| s.instance_id == id)
            .ok_or_else(|| CliError {
                code: EXIT_DOMAIN,
                message: format!("no instance `{id}` in {}", instance.display()),
            })?,
        None if ds.len() == 1 => &ds.instances[0],
        None => {
            return Err(CliError::usage(format!(
                "{} holds {} instances; pick one with --instance-id",
                instance.display(),
                ds.len()
            )))
        }
    };
    let last_t = seq.last().expect("validated").t;
    let at = at.unwrap_or(last_t);
    let mut ranked = predict_next(&model, seq, at)?;
    if let Some(n) = top {
        ranked.truncate(n);
    }
    let label = |id| {
        model
            .catalog
            .index_of(id)
            .map(|i| model.catalog.node(i).label.clone())
            .unwrap_or_default()
    };
    let path = out_path(output, "predictions");
    let body = match output.format {
        Format::Csv => csv_table(
            &["rank", "node", "label", "score"],
            ranked
                .iter()
                .enumerate()
                .map(|(i, (id, s))| vec![(i + 1).to_string(), id.to_string(), label(*id), fmt_float(*s)]),
        )?,
        Format::Json => {
            #[derive(Serialize)]
            struct Row {
                rank: usize,
                node: crate::graph::NodeId,
                label: String,
                score: f64,
            }
            let rows: Vec<Row> = ranked
                .iter()
                .enumerate()
                .map(|(i, &(node, score))| Row {
                    rank: i + 1,
                    node,
                    label: label(node),
                    score,
                })
                .collect();
            to_json(&serde_json::json!({ "instance": seq.instance_id, "at": at, "ranked": rows }))?
        }
    };
    write_file(&path, &body)?;
    let best = ranked
        .first()
        .map(|(id, s)| format!("top={id} score={}", fmt_float(*s)))
        .unwrap_or_else(|| "top=none".into());
    Ok(format!("instance={} at={at} candidates={} {best}", seq.instance_id, ranked.len()))
}

fn cmd_evaluate(
    input: &InputArgs,
    hyper: &HyperArgs,
    threads: Option<usize>,
    output: &OutputArgs,
) -> Result<String, CliError> {
    let rc = hyper.resolve(threads)?;
    set_threads(rc.threads);
    let ds = load_input(input)?;
    let rep = auc_protocol(&ds, &rc.hyperparams, rc.scheme)?;
    let path = out_path(output, "evaluation");
    let body = match output.format {
        Format::Json => to_json(&rep)?,
        Format::Csv => csv_table(
            &["metric", "value"],
            [
                ("auc", fmt_float(rep.auc)),
                ("rmse", fmt_float(rep.metrics.rmse)),
                ("mae", fmt_float(rep.metrics.mae)),
                ("queries", rep.queries.to_string()),
                ("instances", rep.instances.to_string()),
                ("skipped", rep.skipped.to_string()),
                ("terminal_hits", rep.terminal_hits.to_string()),
                ("terminal_misses", rep.terminal_misses.to_string()),
                ("epochs", rep.metrics.per_epoch.len().to_string()),
                ("converged", rep.converged.to_string()),
            ]
            .into_iter()
            .map(|(k, v)| vec![k.to_string(), v]),
        )?,
    };
    write_file(&path, &body)?;
    Ok(format!(
        "auc={} rmse={} mae={} hits={} misses={}",
        fmt_float(rep.auc),
        fmt_float(rep.metrics.rmse),
        fmt_float(rep.metrics.mae),
        rep.terminal_hits,
        rep.terminal_misses
    ))
}

fn cmd_ablation(
    input: &InputArgs,
    hyper: &HyperArgs,
    threads: Option<usize>,
    output: &OutputArgs,
) -> Result<String, CliError> {
    let rc = hyper.resolve(threads)?;
    set_threads(rc.threads);
    let ds = load_input(input)?;
    let rep = ablation_curves(&ds, &rc.hyperparams)?;
    let path = out_path(output, "ablation");
    let body = match output.format {
        Format::Json => to_json(&rep)?,
        Format::Csv => {
            let mut header = vec!["epoch"];
            header.extend(WeightScheme::ALL.iter().map(|s| s.name()));
            csv_table(
                &header,
                rep.rows().into_iter().map(|(e, vals)| {
                    let mut row = vec![e.to_string()];
                    row.extend(vals.into_iter().map(|v| v.map(fmt_float).unwrap_or_default()));
                    row
                }),
            )?
        }
    };
    write_file(&path, &body)?;
    let mut summary = String::new();
    for f in &rep.finals {
        let _ = write!(summary, "{}={} ", f.scheme, fmt_float(f.rmse));
    }
    Ok(format!("final_rmse {}", summary.trim_end()))
}

fn correlation_csv(rep: &CorrelationReport) -> Result<String, CliError> {
    let mut header = vec!["node".to_string()];
    header.extend(rep.nodes.iter().map(|n| n.to_string()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_table(
        &header_refs,
        rep.nodes.iter().zip(&rep.coefficients).map(|(n, row)| {
            let mut out = vec![n.to_string()];
            out.extend(row.iter().map(|c| c.map(fmt_float).unwrap_or_else(|| "undef".into())));
            out
        }),
    )
}

fn cmd_correlate(
    input: &InputArgs,
    scheme: WeightScheme,
    order_out: Option<&Path>,
    output: &OutputArgs,
) -> Result<String, CliError> {
    let ds = load_input(input)?;
    let rep = correlation_analysis(&ds, scheme)?;
    let path = out_path(output, "correlation");
    match output.format {
        Format::Json => write_file(&path, &to_json(&rep)?)?,
        Format::Csv => {
            write_file(&path, &correlation_csv(&rep)?)?;
            let order_path = order_out.map(Path::to_path_buf).unwrap_or_else(|| path.with_extension("order.csv"));
            let order = csv_table(
                &["position", "node"],
                rep.cluster_order
                    .iter()
                    .enumerate()
                    .map(|(i, n)| vec![(i + 1).to_string(), n.to_string()]),
            )?;
            write_file(&order_path, &format!("# {}\n{order}", rep.linkage))?;
        }
    }
    let order: Vec<String> = rep.cluster_order.iter().map(|n| n.to_string()).collect();
    Ok(format!(
        "scheme={} undefined_pairs={} cluster_order={}",
        rep.scheme,
        rep.undefined_pairs.len(),
        order.join(",")
    ))
}

/// Time per instance of the largest size over the smallest.
pub fn scaling_ratio(rows: &[BenchRow]) -> Option<f64> {
    let first = rows.first()?;
    let last = rows.last()?;
    Some(last.per_instance / first.per_instance)
}

fn cmd_bench(sizes: &[usize], hyper: &HyperArgs, threads: Option<usize>, output: &OutputArgs) -> Result<String, CliError> {
    let rc = hyper.resolve(threads)?;
    let rows = runtime_bench(sizes, &rc.hyperparams, rc.scheme, rc.threads.unwrap_or(1))?;
    let path = out_path(output, "bench");
    let body = match output.format {
        Format::Json => to_json(&rows)?,
        Format::Csv => csv_table(
            &["size", "seconds", "per_instance", "epochs"],
            rows.iter().map(|r| {
                vec![
                    r.size.to_string(),
                    fmt_float(r.seconds),
                    fmt_float(r.per_instance),
                    r.epochs.to_string(),
                ]
            }),
        )?,
    };
    write_file(&path, &body)?;
    let ratio = scaling_ratio(&rows).unwrap_or(f64::NAN);
    if ratio > 2.0 {
        log::warn!("time per instance grew by {ratio:.2}x from smallest to largest size");
    }
    Ok(format!("sizes={} per_instance_ratio={}", rows.len(), fmt_float(ratio)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    preset: Preset,
    count: usize,
    nodes: usize,
    missing_rate: f64,
    seed: u64,
    censor: bool,
    dwell: DwellTime,
    catalog_out: Option<&Path>,
    out: &Path,
) -> Result<String, CliError> {
    let cfg = match preset {
        Preset::Crm => SyntheticConfig::crm(count, missing_rate, seed),
        Preset::Chain | Preset::Shuffled => {
            let mut c = SyntheticConfig::chain(count, nodes, seed);
            c.missing_rate = missing_rate;
            c
        }
    };
    let mut cfg = cfg.with_dwell(dwell);
    cfg.censor = censor;
    let mut ds = synthesize(&cfg)?;
    if matches!(preset, Preset::Shuffled) {
        ds = shuffle_successors(&ds, seed)?;
    }
    let body = csv_table(
        &["instance_id", "activity_id", "timestamp"],
        ds.instances
            .iter()
            .flat_map(|s| s.events.iter().map(|e| vec![s.instance_id.clone(), e.node.to_string(), e.t.to_string()])),
    )?;
    write_file(out, &body)?;
    if let Some(p) = catalog_out {
        let cat = csv_table(
            &["id", "label", "revisitable"],
            ds.catalog
                .nodes()
                .iter()
                .map(|n| vec![n.id.to_string(), n.label.clone(), n.revisitable.to_string()]),
        )?;
        write_file(p, &cat)?;
    }
    let stats = dataset_stats(&ds);
    Ok(format!(
        "instances={} events={} absent_observed={}",
        ds.len(),
        ds.instances.iter().map(|s| s.len()).sum::<usize>(),
        stats.absent_observed
    ))
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let threads = cli.threads;
    match &cli.command {
        Command::Stats { input, output } => cmd_stats(input, output),
        Command::Train {
            input,
            hyper,
            model_out,
            log_out,
        } => cmd_train(input, hyper, threads, model_out, log_out),
        Command::Predict {
            model,
            instance,
            instance_id,
            at,
            top,
            output,
        } => cmd_predict(model, instance, instance_id.as_deref(), *at, *top, output),
        Command::Evaluate { input, hyper, output } => cmd_evaluate(input, hyper, threads, output),
        Command::Ablation { input, hyper, output } => cmd_ablation(input, hyper, threads, output),
        Command::Correlate {
            input,
            scheme,
            order_out,
            output,
        } => cmd_correlate(input, *scheme, order_out.as_deref(), output),
        Command::Bench { sizes, hyper, output } => cmd_bench(sizes, hyper, threads, output),
        Command::Synth {
            preset,
            count,
            nodes,
            missing_rate,
            seed,
            censor,
            dwell_min,
            dwell_max,
            catalog_out,
            out,
        } => cmd_synth(
            *preset,
            *count,
            *nodes,
            *missing_rate,
            *seed,
            *censor,
            DwellTime {
                min: *dwell_min,
                max: *dwell_max,
            },
            catalog_out.as_deref(),
            out,
        ),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
