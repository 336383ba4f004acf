//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for data
//! errors. Every subcommand writes a `manifest.json` next to its outputs with
//! the config hash and the hashes of the files it read.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::aggregate::AggregationState;
use crate::backtest::walk::{
    best_in_class_name, BacktestReport, Engine, BENCHMARK, NEGATIVE_ML, POSITIVE_ML,
    POSITIVE_SECTOR_MATCHED,
};
use crate::backtest::{Market, Prices, Universe};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::panel::{parse_date, Discretizer, RawPanel};
use crate::pipeline::{learn, score_asof, write_scores_csv, LearnOptions};
use crate::rules::RuleSet;
use crate::synth::{generate, PlantedRule, RegimeShift, SynthSpec};

pub const WORKERS_ENV: &str = "RULESCREEN_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "rulescreen", version, about = "Rule induction, aggregation and screening backtests")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective config, defaults included, and exit.
    #[arg(long)]
    print_config: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit quantile bins and write the discretizer and the coded panel.
    Discretize {
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Fit on observations dated on or before this date only.
        #[arg(long, value_parser = parse_date_arg)]
        asof: Option<NaiveDate>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Design rules on the learning share of the panel and aggregate over the rest.
    Learn {
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        returns: Option<PathBuf>,
        /// Path of rules.json; the other outputs go beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the latest observation of every stock as of a date.
    Score {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        state: PathBuf,
        /// Defaults to discretizer.json beside the rules.
        #[arg(long)]
        discretizer: Option<PathBuf>,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long, value_parser = parse_date_arg)]
        asof: NaiveDate,
        /// Defaults to scores.csv beside the rules.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Walk-forward backtest of every strategy leg.
    Backtest {
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        returns: Option<PathBuf>,
        #[arg(long)]
        universe: Option<PathBuf>,
        #[arg(long)]
        prices: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic data directory.
    Synth {
        /// JSON spec; a small built-in panel when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the KPI and calendar tables of a backtest directory.
    Report {
        /// Backtest directory.
        #[arg(long)]
        dir: PathBuf,
        /// Also write report.txt and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_date_arg(s: &str) -> std::result::Result<NaiveDate, String> {
    parse_date(s).map_err(|e| e.to_string())
}

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let (mut cfg, base) = match &cli.config {
        Some(path) => (RunConfig::from_file(path)?, path.parent().map(Path::to_path_buf)),
        None => (RunConfig::default(), None),
    };
    if let Some(base) = base.filter(|b| !b.as_os_str().is_empty()) {
        for p in [
            &mut cfg.features,
            &mut cfg.returns,
            &mut cfg.universe,
            &mut cfg.prices,
            &mut cfg.out_dir,
        ] {
            if let Some(path) = p.as_mut().filter(|p| p.is_relative()) {
                *path = base.join(&*path);
            }
        }
    }
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        cfg.worker_count = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a worker count, got '{v}'")))?;
    }
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let command = cli
        .command
        .ok_or_else(|| Error::Config("no subcommand given; see --help".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.worker_count)))?;
    pool.install(|| dispatch(command, &cfg))
}

fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Discretize { panel, asof, out } => discretize(cfg, panel, asof, out),
        Command::Learn { panel, returns, out } => learn_cmd(cfg, panel, returns, out),
        Command::Score {
            rules,
            state,
            discretizer,
            panel,
            asof,
            out,
        } => score_cmd(cfg, &rules, &state, discretizer, panel, asof, out),
        Command::Backtest {
            panel,
            returns,
            universe,
            prices,
            out,
        } => backtest_cmd(cfg, panel, returns, universe, prices, out),
        Command::Synth { spec, seed, out } => synth_cmd(cfg, spec, seed.or(cfg.seed), &out),
        Command::Report { dir, out } => report_cmd(cfg, &dir, out.as_deref()),
    }
}

fn require(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {what} given: pass --{what} or set it in the config")))
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = require(flag, &cfg.out_dir, "out")?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn beside(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: &'static str,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let mut outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
    outputs.sort();
    // the worker count never changes results, so it stays out of the hash
    let hashed = RunConfig {
        worker_count: 0,
        ..cfg.clone()
    };
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: hex::encode(Sha256::digest(hashed.to_text().as_bytes())),
        inputs: hashes,
        outputs,
    };
    write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

fn load_panel(features: &Path, returns: Option<&Path>) -> Result<RawPanel> {
    if !features.exists() {
        return Err(Error::parse(features.display().to_string(), "file not found"));
    }
    if let Some(r) = returns.filter(|r| !r.exists()) {
        return Err(Error::parse(r.display().to_string(), "file not found"));
    }
    RawPanel::from_csv(features, returns, None)
}

fn discretize(cfg: &RunConfig, panel: Option<PathBuf>, asof: Option<NaiveDate>, out: Option<PathBuf>) -> Result<()> {
    let features = require(panel, &cfg.features, "panel")?;
    let dir = out_dir(out, cfg)?;
    let raw = load_panel(&features, None)?;
    let fit_rows: Vec<_> = raw
        .observations()
        .iter()
        .filter(|o| asof.is_none_or(|a| o.date <= a))
        .cloned()
        .collect();
    let discretizer = Discretizer::fit(&fit_rows, raw.specs(), cfg.walk.search.m)?;
    let panel = discretizer.apply(&raw)?;
    write(&dir.join("discretizer.json"), &discretizer.to_json()?)?;
    let mut w = csv::Writer::from_path(dir.join("codes.csv"))?;
    let mut header = vec!["date".to_string(), "stock_id".to_string()];
    header.extend(raw.specs().iter().map(|s| s.feature_id.clone()));
    w.write_record(&header)?;
    for i in 0..panel.len() {
        let mut rec = vec![panel.date(i).to_string(), panel.stock_id(i).to_string()];
        rec.extend(panel.row(i).iter().map(|&c| {
            if c == crate::panel::MISSING {
                String::new()
            } else {
                c.to_string()
            }
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_manifest(&dir, "discretize", cfg, &[&features], &["codes.csv", "discretizer.json"])
}

fn learn_cmd(cfg: &RunConfig, panel: Option<PathBuf>, returns: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let features = require(panel, &cfg.features, "panel")?;
    let returns = require(returns, &cfg.returns, "returns")?;
    let rules_path = match out {
        Some(p) => p,
        None => out_dir(None, cfg)?.join("rules.json"),
    };
    let dir = rules_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    std::fs::create_dir_all(&dir)?;
    let raw = load_panel(&features, Some(&returns))?;
    let w = &cfg.walk;
    let learned = learn(
        &raw,
        &LearnOptions {
            search: w.search.clone(),
            learn_fraction: cfg.learn_fraction,
            eta: w.eta,
            epsilon: w.epsilon,
            loss_kind: w.loss_kind,
            loss_cap: w.loss_cap,
        },
    )?;
    write(&rules_path, &learned.rules.to_json()?)?;
    write(&dir.join("discretizer.json"), &learned.discretizer.to_json()?)?;
    write(&dir.join("state.json"), &learned.state.to_json()?)?;
    let mut rep = csv::Writer::from_path(dir.join("learn-report.csv"))?;
    rep.write_record(["complexity", "candidates", "suitable", "positive", "negative"])?;
    for l in &learned.levels {
        rep.write_record([
            l.complexity.to_string(),
            l.candidates.to_string(),
            l.suitable.to_string(),
            l.positive.to_string(),
            l.negative.to_string(),
        ])?;
    }
    rep.flush()?;
    let rules_name = rules_path
        .file_name()
        .map_or("rules.json".to_string(), |n| n.to_string_lossy().into_owned());
    write_manifest(
        &dir,
        "learn",
        cfg,
        &[&features, &returns],
        &[&rules_name, "discretizer.json", "state.json", "learn-report.csv"],
    )
}

fn score_cmd(
    cfg: &RunConfig,
    rules_path: &Path,
    state_path: &Path,
    discretizer: Option<PathBuf>,
    panel: Option<PathBuf>,
    asof: NaiveDate,
    out: Option<PathBuf>,
) -> Result<()> {
    let features = require(panel, &cfg.features, "panel")?;
    let disc_path = discretizer.unwrap_or_else(|| beside(rules_path, "discretizer.json"));
    let out = out.unwrap_or_else(|| beside(rules_path, "scores.csv"));
    let raw = load_panel(&features, None)?;
    let feature_ids: Vec<String> = raw.specs().iter().map(|s| s.feature_id.clone()).collect();
    let rules = RuleSet::from_json(&read_to_string(rules_path)?, &feature_ids)?;
    let state = AggregationState::from_json(&read_to_string(state_path)?)?;
    let disc = Discretizer::from_json(&read_to_string(&disc_path)?)?;
    let rows = score_asof(&raw, &disc, &rules, &state, asof)?;
    let dir = out.parent().unwrap_or(Path::new(".")).to_path_buf();
    std::fs::create_dir_all(&dir)?;
    write_scores_csv(&rows, &out)?;
    let out_name = out.file_name().map_or("scores.csv".into(), |n| n.to_string_lossy().into_owned());
    write_manifest(
        &dir,
        "score",
        cfg,
        &[&features, rules_path, state_path, &disc_path],
        &[&out_name],
    )
}

/// Loads the four backtest inputs.
pub fn load_market(universe: &Path, prices: &Path) -> Result<Market> {
    if !universe.exists() {
        return Err(Error::InvalidUniverse(format!("{} not found", universe.display())));
    }
    if !prices.exists() {
        return Err(Error::parse(
            prices.display().to_string(),
            "missing price data: file not found",
        ));
    }
    Ok(Market {
        universe: Universe::from_csv(universe)?,
        prices: Prices::from_csv(prices)?,
    })
}

fn strategy_order(reports: &BTreeMap<String, BacktestReport>, x: f64) -> Vec<String> {
    let mut names: Vec<String> = [BENCHMARK, POSITIVE_ML, POSITIVE_SECTOR_MATCHED, NEGATIVE_ML]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.push(best_in_class_name(x));
    names.extend(reports.keys().filter(|k| !names.contains(k)).cloned().collect::<Vec<_>>());
    names.retain(|n| reports.contains_key(n));
    names
}

#[derive(Serialize)]
struct KpiEntry<'a> {
    #[serde(flatten)]
    kpis: &'a crate::backtest::KpiReport,
    fallback_reviews: usize,
}

fn backtest_cmd(
    cfg: &RunConfig,
    panel: Option<PathBuf>,
    returns: Option<PathBuf>,
    universe: Option<PathBuf>,
    prices: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let features = require(panel, &cfg.features, "panel")?;
    let returns = require(returns, &cfg.returns, "returns")?;
    let universe = require(universe, &cfg.universe, "universe")?;
    let prices = require(prices, &cfg.prices, "prices")?;
    let dir = out_dir(out, cfg)?;
    let raw = load_panel(&features, Some(&returns))?;
    let market = load_market(&universe, &prices)?;
    let engine = Engine::new(&raw, &market, cfg.walk.clone())?;
    let wf = engine.walk_forward()?;
    let learning = engine.learning_y_all()?;

    let mut reports = wf.reports.clone();
    for (name, r) in &learning {
        if name != POSITIVE_ML {
            reports.insert(name.clone(), r.clone());
        }
    }
    let names = strategy_order(&reports, cfg.walk.best_in_class_x);
    let grid = &reports[BENCHMARK].series.dates;
    if reports.values().any(|r| &r.series.dates != grid) {
        return Err(Error::GridMismatch);
    }

    let mut w = csv::Writer::from_path(dir.join("levels.csv"))?;
    let mut header = vec!["date".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, d) in grid.iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend(names.iter().map(|n| reports[n].series.values[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let kpis: BTreeMap<&str, KpiEntry> = names
        .iter()
        .map(|n| {
            let r = &reports[n];
            (
                n.as_str(),
                KpiEntry {
                    kpis: &r.kpis,
                    fallback_reviews: r.fallback_reviews,
                },
            )
        })
        .collect();
    write(&dir.join("kpis.json"), &serde_json::to_string_pretty(&kpis)?)?;

    let years: Vec<i32> = reports[BENCHMARK].kpis.calendar_excess.keys().copied().collect();
    let table = |path: &Path, cols: &[String]| -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["year".to_string()];
        header.extend(cols.iter().cloned());
        w.write_record(&header)?;
        for y in &years {
            let mut rec = vec![y.to_string()];
            rec.extend(cols.iter().map(|n| {
                reports[n]
                    .kpis
                    .calendar_excess
                    .get(y)
                    .map_or(String::new(), |v| v.to_string())
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    };
    let wf_cols: Vec<String> = names.iter().filter(|n| wf.reports.contains_key(*n)).cloned().collect();
    table(&dir.join("calendar.csv"), &wf_cols)?;
    let ly_cols: Vec<String> = std::iter::once(POSITIVE_ML.to_string())
        .chain(learning.keys().filter(|k| k.as_str() != POSITIVE_ML).cloned())
        .collect();
    table(&dir.join("learning-y.csv"), &ly_cols)?;

    let mut s = csv::Writer::from_path(dir.join("scores.csv"))?;
    s.write_record(["date", "stock_id", "y_hat", "score"])?;
    for rs in &wf.scores {
        for ((row, y_hat), score) in rs.snapshot.rows.iter().zip(&rs.y_hat).zip(&rs.snapshot.scores) {
            s.write_record([
                rs.review.review_date.to_string(),
                row.stock_id.clone(),
                y_hat.map_or(String::new(), |v| v.to_string()),
                score.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
    }
    s.flush()?;

    let rules_dir = dir.join("rules");
    std::fs::create_dir_all(&rules_dir)?;
    let mut outputs = vec![
        "levels.csv".to_string(),
        "kpis.json".to_string(),
        "calendar.csv".to_string(),
        "learning-y.csv".to_string(),
        "scores.csv".to_string(),
        "cycles.json".to_string(),
    ];
    for c in engine.cycles() {
        let name = format!("rules-{}.json", c.learning_year);
        write(&rules_dir.join(&name), &c.rules.to_json()?)?;
        outputs.push(format!("rules/{name}"));
    }
    write(&dir.join("cycles.json"), &serde_json::to_string_pretty(&wf.cycles)?)?;
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    write_manifest(&dir, "backtest", cfg, &[&features, &returns, &universe, &prices], &outputs)
}

/// Spec used by `synth` without `--spec`: a small panel with one persistent
/// rule, a sector premium and a regime shift, quick enough for smoke runs.
pub fn default_synth_spec(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(120, 60, 4, 5, 0.08, seed);
    s.sector_feature = true;
    s.redraw_prob = 0.1;
    s.planted = vec![
        PlantedRule::new(&[(4, 0, 0)], 0.05),
        PlantedRule::new(&[(4, 1, 1)], -0.05),
        PlantedRule::new(&[(0, 3, 4)], 0.05),
        PlantedRule::new(&[(1, 0, 1)], -0.05),
    ];
    let mut after = s.planted.clone();
    after[2] = PlantedRule::new(&[(2, 3, 4)], 0.05);
    s.regime_shift = Some(RegimeShift {
        date: NaiveDate::from_ymd_opt(2012, 7, 1).expect("valid date"),
        planted: after,
    });
    s
}

fn synth_cmd(cfg: &RunConfig, spec_path: Option<PathBuf>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut spec = match &spec_path {
        Some(p) => SynthSpec::from_json(&read_to_string(p)?).map_err(|e| match e {
            Error::Json(j) => Error::InconsistentSpec(j.to_string()),
            other => other,
        })?,
        None => default_synth_spec(0),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let data = generate(&spec)?;
    data.write_dir(out)?;
    write(&out.join("spec.json"), &spec.to_json()?)?;
    let inputs: Vec<&Path> = spec_path.iter().map(PathBuf::as_path).collect();
    write_manifest(
        out,
        "synth",
        cfg,
        &inputs,
        &["features.csv", "returns.csv", "universe.csv", "prices.csv", "market.csv", "spec.json"],
    )
}

fn pct(v: Option<&serde_json::Value>) -> String {
    v.and_then(serde_json::Value::as_f64)
        .map_or("-".into(), |x| format!("{:.2}%", 100.0 * x))
}

fn num(v: Option<&serde_json::Value>) -> String {
    v.and_then(serde_json::Value::as_f64)
        .map_or("-".into(), |x| format!("{x:.2}"))
}

/// Renders `kpis.json` and `calendar.csv` of a backtest directory as text.
pub fn render_report(dir: &Path) -> Result<String> {
    let kpis: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&read_to_string(&dir.join("kpis.json"))?)?;
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>10} {:>10} {:>7} {:>10} {:>7} {:>10}\n",
        "strategy", "ann.perf", "ann.vol", "sharpe", "max.dd", "IR", "alpha"
    ));
    let levels = csv::Reader::from_path(dir.join("levels.csv"))?.headers()?.clone();
    for name in levels.iter().skip(1) {
        let Some(k) = kpis.get(name) else { continue };
        out.push_str(&format!(
            "{:<28} {:>10} {:>10} {:>7} {:>10} {:>7} {:>10}\n",
            name,
            pct(k.get("ann_performance")),
            pct(k.get("ann_volatility")),
            num(k.get("sharpe")),
            pct(k.get("max_drawdown")),
            num(k.get("information_ratio")),
            pct(k.get("ann_alpha")),
        ));
    }
    out.push_str("\ncalendar excess return over the benchmark\n");
    let mut rdr = csv::Reader::from_path(dir.join("calendar.csv"))?;
    let header = rdr.headers()?.clone();
    for rec in rdr.records() {
        let rec = rec?;
        out.push_str(&rec[0]);
        out.push('\n');
        for (name, cell) in header.iter().zip(rec.iter()).skip(1) {
            let v = cell.parse::<f64>().ok().map(serde_json::Value::from);
            out.push_str(&format!("  {:<28} {:>10}\n", name, pct(v.as_ref())));
        }
    }
    Ok(out)
}

fn report_cmd(cfg: &RunConfig, dir: &Path, out: Option<&Path>) -> Result<()> {
    let text = render_report(dir)?;
    print!("{text}");
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        write(&out.join("report.txt"), &text)?;
        let inputs = ["kpis.json", "calendar.csv", "levels.csv"].map(|f| dir.join(f));
        let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        write_manifest(out, "report", cfg, &inputs, &["report.txt"])?;
    }
    Ok(())
}
