use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use divctx::catalog::{corpus_stats, load_catalog, load_log, log_records, Catalog, UserLogs};
use divctx::diversity::{calibrate_corpus, run_corpus, trace_records, Calibration, DEFAULT_WINDOW};
use divctx::evaluation::{
    evaluate_ground_truth, h1_report, sparsity_sweep, type_split_experiment, DetectionParams, H1Report,
    TypeSplitParams, DEFAULT_GAP_SECONDS, DEFAULT_RUNS, DEFAULT_TYPES,
};
use divctx::schema::{load_schema, Schema};
use divctx::synthetic::{generate_synthetic, music_schema, SyntheticSpec};

mod output;

use output::Outputs;

#[derive(Parser)]
#[command(name = "divctx", version, about = "Implicit context change detection from relative diversity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Schema document (TOML)
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Item records, one JSON object per line
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Consultation records, one JSON object per line
    #[arg(long)]
    log: Option<PathBuf>,
    /// History window size
    #[arg(short = 'k', default_value_t = DEFAULT_WINDOW)]
    k: usize,
    /// Detection threshold; calibrated from the corpus when absent
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "gap-seconds", default_value_t = DEFAULT_GAP_SECONDS)]
    gap_seconds: i64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Per-attribute corpus statistics
    Stats(Common),
    /// Threshold calibration: mean and sd of relative diversity
    Calibrate(Common),
    /// Diversity trace and detected context changes
    Detect(Common),
    /// Alignment of detected changes with session starts
    H1(Common),
    /// Detection under increasing attribute sparsity
    H2 {
        #[command(flatten)]
        common: Common,
        /// Comma-separated deletion rates in [0, 0.99]
        #[arg(long, value_delimiter = ',', default_values_t = default_rates())]
        rates: Vec<f64>,
    },
    /// Detection over catalogs split into item types
    H3 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_TYPES)]
        types: usize,
        /// Comma-separated x values, paired with --min-common
        #[arg(long = "attrs-per-type", value_delimiter = ',', required = true)]
        attrs_per_type: Vec<usize>,
        /// Comma-separated y values, paired with --attrs-per-type
        #[arg(long = "min-common", value_delimiter = ',', required = true)]
        min_common: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
    },
    /// Synthetic corpus with planted boundaries, detection and scoring
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
    },
}

#[derive(Args, Clone, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    users: usize,
    #[arg(long, default_value_t = 10)]
    contexts: usize,
    #[arg(long = "items-per-context", default_value_t = 15)]
    items_per_context: usize,
    /// Fraction of attributes redrawn at each context boundary
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    /// Probability that a context boundary is also a session gap
    #[arg(long = "gap-prob", default_value_t = 1.0)]
    gap_prob: f64,
    /// Numeric jitter within a context, as a fraction of the range
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Index tolerance when matching changes to boundaries
    #[arg(long, default_value_t = 0)]
    tolerance: usize,
}

fn default_rates() -> Vec<f64> {
    let mut rates: Vec<f64> = (0..10).map(|i| f64::from(i) / 10.0).collect();
    rates.push(0.99);
    rates
}

fn read(path: &Option<PathBuf>, flag: &str) -> Result<(String, PathBuf)> {
    let path = path.clone().ok_or_else(|| anyhow!("--{flag} is required for this command"))?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok((text, path))
}

fn schema_of(common: &Common) -> Result<Schema> {
    let (text, path) = read(&common.schema, "schema")?;
    load_schema(&text).with_context(|| format!("loading schema {}", path.display()))
}

fn catalog_of(common: &Common) -> Result<Catalog> {
    let schema = schema_of(common)?;
    let (text, path) = read(&common.catalog, "catalog")?;
    load_catalog(&text, &schema).with_context(|| format!("loading catalog {}", path.display()))
}

fn corpus_of(common: &Common) -> Result<(Catalog, UserLogs)> {
    let catalog = catalog_of(common)?;
    let (text, path) = read(&common.log, "log")?;
    let logs = load_log(&text, &catalog).with_context(|| format!("loading log {}", path.display()))?;
    Ok((catalog, logs))
}

fn require_seed(common: &Common) -> Result<u64> {
    common.seed.ok_or_else(|| anyhow!("--seed is required for randomized commands"))
}

struct ResolvedTau {
    tau: f64,
    source: &'static str,
    calibration: Option<Calibration>,
}

/// Explicit flag wins; otherwise one calibration pass over the corpus.
fn resolve_tau(common: &Common, catalog: &Catalog, logs: &UserLogs) -> Result<ResolvedTau> {
    if let Some(tau) = common.tau {
        return Ok(ResolvedTau {
            tau,
            source: "flag",
            calibration: None,
        });
    }
    let calibration = calibrate_corpus(logs, catalog, common.k)?;
    eprintln!("calibrated tau = {} over {} points", calibration.tau, calibration.count);
    Ok(ResolvedTau {
        tau: calibration.tau,
        source: "calibrated",
        calibration: Some(calibration),
    })
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn config_echo(command: &str, common: &Common, tau: Option<&ResolvedTau>) -> serde_json::Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "schema": path_str(&common.schema),
        "catalog": path_str(&common.catalog),
        "log": path_str(&common.log),
        "k": common.k,
        "tau": tau.map(|t| t.tau),
        "tau_source": tau.map(|t| t.source),
        "calibration": tau.and_then(|t| t.calibration),
        "gap_seconds": common.gap_seconds,
        "seed": common.seed,
    })
}

fn finish(outputs: Outputs, dir: &Path) -> Result<()> {
    for path in outputs.commit(dir)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsRow {
    attribute: String,
    kind: String,
    measure: &'static str,
    present: usize,
    absent: bool,
    max: Option<f64>,
    min: Option<f64>,
    mean: Option<f64>,
    sd: Option<f64>,
}

fn cmd_stats(common: &Common) -> Result<()> {
    let catalog = catalog_of(common)?;
    let rows: Vec<StatsRow> = corpus_stats(&catalog)
        .into_iter()
        .map(|s| StatsRow {
            absent: s.is_absent(),
            attribute: s.name,
            kind: s.kind.to_string(),
            measure: s.measure,
            present: s.present,
            max: s.summary.map(|x| x.max),
            min: s.summary.map(|x| x.min),
            mean: s.summary.map(|x| x.mean),
            sd: s.summary.map(|x| x.sd),
        })
        .collect();
    let mut out = Outputs::default();
    out.report("stats", &rows)?;
    let mut config = config_echo("stats", common, None);
    config["items"] = json!(catalog.len());
    out.json("config.json", &config)?;
    finish(out, &common.out)
}

fn cmd_calibrate(common: &Common) -> Result<()> {
    let (catalog, logs) = corpus_of(common)?;
    let calibration = calibrate_corpus(&logs, &catalog, common.k)?;
    println!(
        "tau={} mean={} sd={} points={}",
        calibration.tau, calibration.mean, calibration.sd, calibration.count
    );
    let mut out = Outputs::default();
    out.report("calibration", &[calibration])?;
    out.json("config.json", &config_echo("calibrate", common, None))?;
    finish(out, &common.out)
}

fn cmd_detect(common: &Common) -> Result<()> {
    let (catalog, logs) = corpus_of(common)?;
    let tau = resolve_tau(common, &catalog, &logs)?;
    let runs = run_corpus(&logs, &catalog, common.k, tau.tau)?;
    let mut trace = Vec::new();
    let mut changes = Vec::new();
    for (user, output) in &runs {
        trace.extend(trace_records(&logs[user], output));
        changes.extend(output.changes.iter().cloned());
    }
    println!(
        "users={} consultations={} changes={} tau={}",
        logs.len(),
        trace.len(),
        changes.len(),
        tau.tau
    );
    let mut out = Outputs::default();
    out.jsonl("trace.jsonl", &trace)?;
    out.jsonl("changes.jsonl", &changes)?;
    out.json("config.json", &config_echo("detect", common, Some(&tau)))?;
    finish(out, &common.out)
}

fn print_h1(report: &H1Report) {
    println!("{:<20}{:>12}{:>12}{:>10}", "", "total", "detected", "rate");
    println!(
        "{:<20}{:>12}{:>12}{:>9.2}%",
        "sessions",
        report.total_sessions,
        report.detected_sessions,
        100.0 * report.session_rate
    );
    println!(
        "{:<20}{:>12}   ({} not at a session start)",
        "implicit contexts", report.total_changes, report.non_session_changes
    );
}

fn cmd_h1(common: &Common) -> Result<()> {
    let (catalog, logs) = corpus_of(common)?;
    let tau = resolve_tau(common, &catalog, &logs)?;
    let runs = run_corpus(&logs, &catalog, common.k, tau.tau)?;
    let report = h1_report(&logs, &runs, common.gap_seconds)?;
    print_h1(&report);
    let mut out = Outputs::default();
    out.report("h1", &[report])?;
    out.json("config.json", &config_echo("h1", common, Some(&tau)))?;
    finish(out, &common.out)
}

fn params(common: &Common, tau: f64) -> DetectionParams {
    DetectionParams {
        k: common.k,
        tau,
        gap_threshold: common.gap_seconds,
    }
}

fn cmd_h2(common: &Common, rates: &[f64]) -> Result<()> {
    let seed = require_seed(common)?;
    let (catalog, logs) = corpus_of(common)?;
    let tau = resolve_tau(common, &catalog, &logs)?;
    let rows = sparsity_sweep(&catalog, &logs, params(common, tau.tau), rates, seed)?;
    for row in &rows {
        println!(
            "sparsity={:.2} session_rate={:.4} changes={}",
            row.sparsity, row.session_rate, row.total_changes
        );
    }
    let mut out = Outputs::default();
    out.report("sweep", &rows)?;
    let mut config = config_echo("h2", common, Some(&tau));
    config["rates"] = json!(rates);
    config["sub_seeds"] = json!(rows.iter().map(|r| r.seed).collect::<Vec<_>>());
    out.json("config.json", &config)?;
    finish(out, &common.out)
}

fn cmd_h3(common: &Common, types: usize, xs: &[usize], ys: &[usize], runs: usize) -> Result<()> {
    if xs.len() != ys.len() {
        bail!("--attrs-per-type and --min-common must list the same number of values");
    }
    let seed = require_seed(common)?;
    let (catalog, logs) = corpus_of(common)?;
    let tau = resolve_tau(common, &catalog, &logs)?;
    let mut rows = Vec::with_capacity(xs.len());
    let mut detail = Vec::with_capacity(xs.len());
    for (&x, &y) in xs.iter().zip(ys) {
        let split = TypeSplitParams {
            types,
            attrs_per_type: x,
            min_common: y,
            runs,
        };
        let (row, run_detail) = type_split_experiment(&catalog, &logs, params(common, tau.tau), split, seed)?;
        println!(
            "x={x} y={y} session_rate={:.4}±{:.4} contexts={:.1}±{:.1}",
            row.session_rate_avg, row.session_rate_sd, row.contexts_avg, row.contexts_sd
        );
        detail.push(json!({
            "x": x,
            "y": y,
            "runs": run_detail.iter().map(|r| json!({
                "seed": r.seed,
                "type_attributes": r.type_attributes,
                "session_rate": r.report.session_rate,
                "total_changes": r.report.total_changes,
            })).collect::<Vec<_>>(),
        }));
        rows.push(row);
    }
    let mut out = Outputs::default();
    out.report("type_split", &rows)?;
    let mut config = config_echo("h3", common, Some(&tau));
    config["types"] = json!(types);
    config["runs"] = json!(runs);
    config["grid"] = json!(detail);
    out.json("config.json", &config)?;
    finish(out, &common.out)
}

#[derive(Serialize)]
struct Boundary<'a> {
    user: &'a str,
    index: usize,
}

fn cmd_synth(common: &Common, args: &SynthArgs) -> Result<()> {
    let seed = require_seed(common)?;
    let schema = match common.schema {
        Some(_) => schema_of(common)?,
        None => music_schema(),
    };
    let spec = SyntheticSpec {
        num_users: args.users,
        contexts_per_user: args.contexts,
        items_per_context: args.items_per_context,
        attribute_shift: args.shift,
        session_gap_probability: args.gap_prob,
        numeric_noise: args.noise,
        seed,
    };
    let corpus = generate_synthetic(&spec, &schema)?;
    let tau = resolve_tau(common, &corpus.catalog, &corpus.logs)?;
    let runs = run_corpus(&corpus.logs, &corpus.catalog, common.k, tau.tau)?;
    let changes: Vec<_> = runs.values().flat_map(|o| o.changes.iter().cloned()).collect();
    let scored = evaluate_ground_truth(&changes, &corpus.ground_truth, args.tolerance);
    let h1 = h1_report(&corpus.logs, &runs, common.gap_seconds)?;
    println!(
        "boundaries={} changes={} recall={:.4} precision={:.4} tau={}",
        scored.boundaries, scored.changes, scored.recall, scored.precision, tau.tau
    );
    print_h1(&h1);

    let boundaries: Vec<Boundary> = corpus
        .ground_truth
        .iter()
        .flat_map(|(user, idx)| idx.iter().map(move |&index| Boundary { user, index }))
        .collect();
    let mut out = Outputs::default();
    out.add("schema.toml", schema.to_toml_string());
    out.add("catalog.jsonl", corpus.catalog.to_records());
    out.add("log.jsonl", log_records(&corpus.logs));
    out.jsonl("ground_truth.jsonl", &boundaries)?;
    out.jsonl("changes.jsonl", &changes)?;
    out.report("ground_truth_eval", &[scored])?;
    out.report("h1", &[h1])?;
    let mut config = config_echo("synth", common, Some(&tau));
    config["synthetic"] = json!(spec);
    config["tolerance"] = json!(args.tolerance);
    out.json("config.json", &config)?;
    finish(out, &common.out)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Stats(c) => cmd_stats(c),
        Command::Calibrate(c) => cmd_calibrate(c),
        Command::Detect(c) => cmd_detect(c),
        Command::H1(c) => cmd_h1(c),
        Command::H2 { common, rates } => cmd_h2(common, rates),
        Command::H3 {
            common,
            types,
            attrs_per_type,
            min_common,
            runs,
        } => cmd_h3(common, *types, attrs_per_type, min_common, *runs),
        Command::Synth { common, synth } => cmd_synth(common, synth),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_rates_cover_sweep() {
        let rates = default_rates();
        assert_eq!(rates.first(), Some(&0.0));
        assert_eq!(rates.last(), Some(&0.99));
        assert_eq!(rates.len(), 11);
    }

    #[test]
    fn parses_h3_grid() {
        let cli = Cli::try_parse_from([
            "divctx", "h3", "--out", "o", "--attrs-per-type", "3,4", "--min-common", "2,2", "--seed", "1",
        ])
        .unwrap();
        match cli.command {
            Command::H3 { attrs_per_type, min_common, types, runs, .. } => {
                assert_eq!(attrs_per_type, vec![3, 4]);
                assert_eq!(min_common, vec![2, 2]);
                assert_eq!((types, runs), (4, 10));
            }
            _ => panic!("wrong command"),
        }
    }
}
