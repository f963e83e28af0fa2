//! Command-line front end: runs drivers, sweeps and the consistency suite,
//! and writes CSV/JSON reports.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime error, 3 a check of the
//! consistency suite failed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use parrep::error::Error;
use parrep::harness::experiments::{run_once, SweepPoint};
use parrep::harness::{
    accuracy_rows, basin_weights, emit_checks, emit_reports, run_accuracy_experiment, run_consistency_suite,
    run_speedup_experiment, speedup_rows, Format, ReportRow, RunConfig, Scale, SuiteConfig,
};
use parrep::pdmp::TiltedCosine;

#[derive(Parser)]
#[command(name = "parrep", version, about = "Parallel replica dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One driver run at the first point of the configured sweep.
    Simulate(Common),
    /// Speedup over the replica and decorrelation sweeps.
    Speedup(Common),
    /// Stationary-average accuracy against the quadrature reference.
    Accuracy(Common),
    /// Statistical consistency suite.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Samples per toy-model check.
        #[arg(long, default_value_t = 100_000)]
        toy_samples: usize,
        /// Exit samples for the PDMP checks.
        #[arg(long, default_value_t = 10_000)]
        pdmp_samples: usize,
    },
    /// Print the quadrature basin weights of the configured potential.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// Key-value config file; keys not given keep the preset value.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

enum Failure {
    Config(Error),
    Runtime(Error),
    Validation(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Validation(_) => 3,
        }
    }
}

fn runtime(e: Error) -> Failure {
    match e {
        Error::Config(_) => Failure::Config(e),
        e => Failure::Runtime(e),
    }
}

struct Setup {
    cfg: RunConfig,
    out: PathBuf,
}

fn setup(common: &Common) -> Result<Setup, Failure> {
    let scale = match common.scale {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    };
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path, scale).map_err(Failure::Config)?,
        None => RunConfig::preset(scale),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Setup { cfg, out })
}

fn emit_both(rows: &[ReportRow], out: &Path, stem: &str) -> Result<(), Failure> {
    for format in [Format::Csv, Format::Json] {
        let path = emit_reports(rows, format, out, stem).map_err(runtime)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn simulate(s: &Setup) -> Result<(), Failure> {
    let cfg = &s.cfg;
    let algorithm = cfg.algorithms[0];
    let point = SweepPoint {
        algorithm,
        replicas: cfg.replicas[0],
        t_corr: cfg.t_corr_grid(algorithm)[0],
    };
    std::fs::create_dir_all(&s.out).map_err(|e| Failure::Runtime(Error::io(&s.out, e)))?;
    let overflow = s.out.join("trace_overflow.jsonl");
    if overflow.exists() {
        std::fs::remove_file(&overflow).map_err(|e| Failure::Runtime(Error::io(&overflow, e)))?;
    }
    let (outcome, trace) = run_once(cfg, point, 0, Some(overflow.clone())).map_err(runtime)?;

    let trace_path = s.out.join("trace.jsonl");
    let io = |e| Failure::Runtime(Error::io(&trace_path, e));
    let mut w = BufWriter::new(File::create(&trace_path).map_err(io)?);
    for record in &trace.records {
        let line = serde_json::to_string(record).map_err(|e| {
            Failure::Runtime(Error::Json {
                path: trace_path.clone(),
                source: e,
            })
        })?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)?;

    let t = &outcome.totals;
    println!(
        "{algorithm} R = {} T_corr = {}: estimate {:.6}, T_sim {:.1}, {} epochs, speedup {:.3}",
        point.replicas,
        point.t_corr,
        outcome.estimate,
        t.t_sim,
        t.epochs,
        t.speedup()
    );
    println!(
        "trace: {} records in {}, {} in {}",
        trace.records.len(),
        trace_path.display(),
        trace.spilled,
        overflow.display()
    );
    let row = ReportRow {
        algorithm: algorithm.name().into(),
        replicas: point.replicas,
        beta: cfg.beta,
        t_corr: point.t_corr,
        dt: cfg.dt,
        window: cfg.fragment_length(algorithm),
        t_stop: cfg.t_stop,
        seed: cfg.seed,
        rep: 1,
        value: outcome.estimate,
        std: 0.0,
        oracle: None,
        verdict: "info".into(),
    };
    emit_both(&[row], &s.out, "simulate")
}

fn speedup(s: &Setup) -> Result<(), Failure> {
    let reports = run_speedup_experiment(&s.cfg).map_err(runtime)?;
    for r in &reports {
        println!(
            "{} R = {} T_corr = {}: speedup {:.4} ± {:.4}",
            r.point.algorithm, r.point.replicas, r.point.t_corr, r.speedup, r.se
        );
    }
    emit_both(&speedup_rows(&s.cfg, &reports), &s.out, "speedup")
}

fn accuracy(s: &Setup) -> Result<(), Failure> {
    let reports = run_accuracy_experiment(&s.cfg).map_err(runtime)?;
    for r in &reports {
        println!(
            "{} R = {} T_corr = {}: mean {:.5} std {:.5} oracle {:.5}{}",
            r.point.algorithm,
            r.point.replicas,
            r.point.t_corr,
            r.mean,
            r.std,
            r.oracle,
            if r.flagged { " FLAGGED" } else { "" }
        );
    }
    emit_both(&accuracy_rows(&s.cfg, &reports), &s.out, "accuracy")
}

fn validate(s: &Setup, toy_samples: usize, pdmp_samples: usize) -> Result<(), Failure> {
    let suite = SuiteConfig {
        seed: s.cfg.seed,
        toy_samples,
        pdmp_samples,
        ..SuiteConfig::default()
    };
    let checks = run_consistency_suite(&suite);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let path = emit_checks(&checks, &s.out).map_err(runtime)?;
    println!("wrote {}", path.display());
    match checks.iter().filter(|c| !c.pass).count() {
        0 => Ok(()),
        n => Err(Failure::Validation(n)),
    }
}

fn oracle(s: &Setup) -> Result<(), Failure> {
    let cfg = &s.cfg;
    let pot = TiltedCosine {
        depth: cfg.potential_depth,
        tilt: cfg.potential_tilt,
    };
    let n = parrep::harness::quadrature::DEFAULT_INTERVALS;
    let w = basin_weights(&pot, cfg.beta, n).map_err(runtime)?;
    println!("beta = {}, Simpson intervals per axis = {n}", cfg.beta);
    for (i, x) in w.iter().enumerate() {
        println!("<1_W{}> = {x:.16e}", i + 1);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(c) => simulate(&setup(&c)?),
        Command::Speedup(c) => speedup(&setup(&c)?),
        Command::Accuracy(c) => accuracy(&setup(&c)?),
        Command::Validate {
            common,
            toy_samples,
            pdmp_samples,
        } => validate(&setup(&common)?, toy_samples, pdmp_samples),
        Command::Oracle(c) => oracle(&setup(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(f) => {
            match &f {
                Failure::Config(e) | Failure::Runtime(e) => eprintln!("error: {e}"),
                Failure::Validation(n) => eprintln!("{n} consistency check(s) failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
