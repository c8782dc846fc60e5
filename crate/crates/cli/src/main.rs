//! `hmtune`: run, sweep and validate handover-margin tuning experiments.

mod chart;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmtune_core::engine::EVENT_LOG_HEADER;
use hmtune_core::metrics::{read_summary_csv, write_cdf_csv, write_run_report, write_summary_csv, SUMMARY_FILE};
use hmtune_core::mobility::validate_balancing;
use hmtune_core::scenario::write_layout_csv;
use hmtune_core::sweep::{run_sweep, SweepPlan};
use hmtune_core::{
    load_scenario, run_with, BalancingFunction, Error, Policy, RunOptions, Scenario, SummaryRow, TaylorOrder,
};

#[derive(Debug, Parser)]
#[command(name = "hmtune", version, about = "Load-adaptive handover margin experiments on a snapshot network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario under one policy and write its KPI report.
    Run(RunArgs),
    /// Run every (lambda, seed, policy) combination and write a summary.
    Sweep(SweepArgs),
    /// Check a balancing function on a uniform grid over [-1, 1].
    Validate(ValidateArgs),
    /// Redraw sweep charts from an existing summary CSV.
    Chart(ChartArgs),
    /// Export the site layout of a scenario as CSV.
    Layout(LayoutArgs),
    /// Write the built-in reference scenario as TOML.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args)]
struct ScenarioOpts {
    /// Scenario TOML file [default: built-in reference scenario]
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Warm-up fraction excluded from KPIs [default: from scenario]
    #[arg(long, value_name = "FRAC")]
    warmup_frac: Option<f64>,
    /// Snapshot duration in seconds [default: from scenario]
    #[arg(long, value_name = "SECONDS")]
    snapshot_dt: Option<f64>,
}

impl ScenarioOpts {
    fn load(&self) -> Result<Scenario, Error> {
        let mut s = match &self.scenario {
            Some(path) => load_scenario(path)?,
            None => Scenario::reference(),
        };
        if let Some(w) = self.warmup_frac {
            s.warmup_fraction = w;
        }
        if let Some(dt) = self.snapshot_dt {
            s.snapshot_duration = dt;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    /// Margin policy
    #[arg(long, default_value = "auto", value_parser = ["auto", "fixed"])]
    policy: String,
    /// RNG seed [default: from scenario]
    #[arg(long)]
    seed: Option<u64>,
    /// Network-wide arrival rate, mobiles/s [default: from scenario]
    #[arg(long)]
    lambda: Option<f64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write the event log (time,event,user,from,to) to this file [default: off]
    #[arg(long, value_name = "PATH")]
    event_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    /// Arrival rates, mobiles/s
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
    lambdas: Vec<f64>,
    /// Seeds; every seed runs under both policies
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// Output directory
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
    /// Concurrent runs [default: one per core]
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Planned margin f(0), dB
    #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
    f0: f64,
    /// Lower margin bound, dB
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    hm_min: f64,
    /// Upper margin bound, dB
    #[arg(long, default_value_t = 12.0, allow_negative_numbers = true)]
    hm_max: f64,
    /// Taylor order of f (0 or 1)
    #[arg(long, default_value_t = 1)]
    order: u8,
    /// Grid points
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

#[derive(Debug, Args)]
struct ChartArgs {
    /// Sweep summary CSV
    #[arg(long, default_value = "sweep/summary.csv")]
    summary: PathBuf,
    /// Output directory for the SVG files
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LayoutArgs {
    /// Scenario TOML file [default: built-in reference scenario]
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Output TOML file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// 1 for bad input or a failed check, 2 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Validation { .. } | Error::Domain(_) => 1,
        Error::Io { .. } | Error::Csv(_) | Error::InfeasibleAllocation { .. } | Error::Consistency { .. } => 2,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let mut scenario = args.scenario.load()?;
    if let Some(seed) = args.seed {
        scenario.rng_seed = seed;
    }
    if let Some(lambda) = args.lambda {
        scenario.traffic.arrival_rate = lambda;
    }
    scenario.validate()?;
    let policy: Policy = args.policy.parse().map_err(|m| Error::Validation {
        field: "policy".into(),
        message: m,
    })?;
    let outcome = run_with(
        &scenario,
        RunOptions {
            policy,
            record_events: args.event_log.is_some(),
        },
    )?;
    let summary = SummaryRow::from_report(scenario.traffic.arrival_rate, policy, scenario.rng_seed, &outcome.report);
    write_run_report(&args.out, &summary, &outcome.report)?;
    if let (Some(path), Some(events)) = (&args.event_log, &outcome.events) {
        let mut w = create(path)?;
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(w, "{EVENT_LOG_HEADER}")?;
            for e in events {
                writeln!(w, "{}", e.csv_line())?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| io_error(path, e))?;
    }
    println!("{}", describe(&summary));
    println!("event log sha256: {}", outcome.event_hash);
    Ok(())
}

fn describe(row: &SummaryRow) -> String {
    let f = |v: Option<f64>, scale: f64| v.map_or("n/a".to_string(), |v| format!("{:.4}", v * scale));
    format!(
        "lambda={} policy={} seed={} access={} holding={} throughput_kBps={} median_sinr_db={}",
        row.lambda,
        row.policy,
        row.seed,
        f(row.access_prob, 1.0),
        f(row.holding_prob, 1.0),
        f(row.mean_throughput, 1e-3),
        f(row.median_sinr_db, 1.0),
    )
}

fn write_charts(rows: &[SummaryRow], out: &Path) -> Result<(), Error> {
    for (name, svg) in chart::sweep_charts(rows) {
        let path = out.join(name);
        fs::write(&path, svg).map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool, Error> {
    let base = args.scenario.load()?;
    if args.lambdas.is_empty() {
        return Err(Error::Validation {
            field: "lambdas".into(),
            message: "at least one arrival rate is required".into(),
        });
    }
    if let Some(bad) = args.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Validation {
            field: "lambdas".into(),
            message: format!("{bad} is not a valid arrival rate"),
        });
    }
    let plan = SweepPlan {
        parallelism: args.jobs,
        ..SweepPlan::new(args.lambdas.clone(), args.seeds.clone())
    };
    let runs = run_sweep(&base, &plan);

    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let mut rows = Vec::with_capacity(runs.len());
    let mut failures = 0;
    for run in &runs {
        match &run.outcome {
            Ok(report) => {
                let dir = args.out.join("runs").join(run.point.label());
                fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
                write_cdf_csv(&report.sinr_cdf, create(&dir.join("sinr_cdf.csv"))?)?;
                rows.extend(run.summary());
            }
            Err(e) => {
                failures += 1;
                eprintln!("run {} failed: {e}", run.point.label());
            }
        }
    }
    write_summary_csv(&rows, create(&args.out.join(SUMMARY_FILE))?)?;
    write_charts(&rows, &args.out)?;
    println!(
        "{} runs, {} failed; summary in {}",
        runs.len(),
        failures,
        args.out.join(SUMMARY_FILE).display()
    );
    Ok(failures == 0)
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool, Error> {
    let order = TaylorOrder::try_from(args.order)?;
    let bf = BalancingFunction::new(args.f0, args.hm_min, args.hm_max, order)?;
    if args.samples < 2 {
        return Err(Error::Validation {
            field: "samples".into(),
            message: "at least 2 grid points are required".into(),
        });
    }
    let report = validate_balancing(&bf, args.samples);
    println!("{report}");
    Ok(report.passed())
}

fn cmd_chart(args: &ChartArgs) -> Result<(), Error> {
    let file = File::open(&args.summary).map_err(|e| io_error(&args.summary, e))?;
    let rows = read_summary_csv(file)?;
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    write_charts(&rows, &args.out)
}

fn cmd_layout(args: &LayoutArgs) -> Result<(), Error> {
    let scenario = match &args.scenario {
        Some(p) => load_scenario(p)?,
        None => Scenario::reference(),
    };
    match &args.out {
        Some(path) => write_layout_csv(&scenario.sites, create(path)?),
        None => write_layout_csv(&scenario.sites, std::io::stdout().lock()),
    }
}

fn cmd_scenario(args: &ScenarioArgs) -> Result<(), Error> {
    let reference = Scenario::reference();
    match &args.out {
        Some(path) => reference.save(path),
        None => {
            print!("{}", reference.to_toml_string()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Chart(a) => cmd_chart(a).map(|_| true),
        Command::Layout(a) => cmd_layout(a).map(|_| true),
        Command::Scenario(a) => cmd_scenario(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            let failed_runs = matches!(cli.command, Command::Sweep(_));
            ExitCode::from(if failed_runs { 2 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
