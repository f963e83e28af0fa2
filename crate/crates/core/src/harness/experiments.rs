//! Speedup and accuracy sweeps over the lifted Metropolis process.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ObservableSpec, RunConfig, WallClockSpec};
use super::quadrature::quadrature_reference;
use super::report::ReportRow;
use crate::error::Result;
use crate::parrep::{pdmp_stationary_average, skeleton_stationary_average, ParRepConfig, RunningTotals, Trace};
use crate::pdmp::{Basin, BasinIndicator, DiscretizedChain, LiftedMetropolisPdmp, LiftedState, Potential, SkeletonChain, TiltedCosine};
use crate::process::Observable;
use crate::rng::{purpose, RngStream};
use crate::scheduler::{PlanMode, WallClockModel};
use crate::stats::summarize;

/// The configured observable as a function of PDMP states.
#[derive(Clone, Copy, Debug)]
pub struct ConfiguredObservable(pub ObservableSpec);

impl Observable<LiftedState> for ConfiguredObservable {
    fn value(&self, state: &LiftedState) -> f64 {
        match self.0 {
            ObservableSpec::One => 1.0,
            ObservableSpec::Basin(label) => BasinIndicator(label).value(state),
        }
    }

    fn constant(&self) -> Option<f64> {
        match self.0 {
            ObservableSpec::One => Some(1.0),
            ObservableSpec::Basin(_) => None,
        }
    }

    fn cellwise_constant(&self) -> bool {
        true
    }
}

/// One point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub algorithm: Algorithm,
    pub replicas: usize,
    pub t_corr: f64,
}

/// Result of a single driver run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub estimate: f64,
    pub totals: RunningTotals,
}

fn potential(cfg: &RunConfig) -> TiltedCosine {
    TiltedCosine {
        depth: cfg.potential_depth,
        tilt: cfg.potential_tilt,
    }
}

fn wallclock<S>(spec: &WallClockSpec, replicas: usize) -> WallClockModel<S> {
    match spec {
        WallClockSpec::Unit => WallClockModel::Unit,
        WallClockSpec::IidExponential { mean } => WallClockModel::IidExponential { mean: *mean },
        WallClockSpec::ReplicaHeterogeneous { speeds } => WallClockModel::ReplicaHeterogeneous {
            speeds: (0..replicas).map(|r| speeds[r % speeds.len()]).collect(),
        },
    }
}

fn driver_config<S>(cfg: &RunConfig, point: SweepPoint, spill: Option<PathBuf>) -> ParRepConfig<S> {
    let mut p = ParRepConfig::new(point.replicas, point.t_corr, cfg.fragment_length(point.algorithm), cfg.t_stop);
    p.ordering = if point.algorithm.is_wallclock() {
        PlanMode::Wallclock
    } else {
        PlanMode::Synchronous
    };
    p.wallclock = wallclock(&cfg.wallclock, point.replicas);
    p.dephasing = cfg.dephasing;
    p.trace_cap = cfg.trace_cap;
    p.trace_spill = spill;
    p
}

/// Stream of repetition `rep`; shared across sweep points so that points
/// differ only in their parameters.
pub fn repetition_stream(seed: u64, rep: u64) -> RngStream {
    RngStream::root(seed).derive(purpose::REPETITION, rep)
}

/// Run one driver to `cfg.t_stop`. Returns the outcome and the trace.
pub fn run_once(cfg: &RunConfig, point: SweepPoint, rep: u64, spill: Option<PathBuf>) -> Result<(RunOutcome, Trace)> {
    let pot = potential(cfg);
    let pdmp = LiftedMetropolisPdmp::new(pot, cfg.beta, cfg.directions.clone())?;
    let basins = Basin::all(cfg.basins, Arc::new(pot) as Arc<dyn Potential>);
    let f = ConfiguredObservable(cfg.observable);
    let x0 = LiftedState::new(cfg.start_position[0], cfg.start_position[1], cfg.start_direction);
    let rng = repetition_stream(cfg.seed, rep);
    let (estimate, totals, trace) = if point.algorithm.is_skeleton() {
        let chain = SkeletonChain::new(pdmp);
        let out = skeleton_stationary_average(&chain, &basins, &driver_config(cfg, point, spill), &f, x0, &rng)?;
        (out.estimate, out.totals, out.trace)
    } else {
        let chain = DiscretizedChain::new(pdmp, cfg.dt)?;
        let out = pdmp_stationary_average(&chain, &basins, &driver_config(cfg, point, spill), &f, x0, &rng)?;
        (out.estimate, out.totals, out.trace)
    };
    Ok((RunOutcome { estimate, totals }, trace))
}

pub fn sweep_points(cfg: &RunConfig) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for &algorithm in &cfg.algorithms {
        for &replicas in &cfg.replicas {
            for &t_corr in cfg.t_corr_grid(algorithm) {
                points.push(SweepPoint {
                    algorithm,
                    replicas,
                    t_corr,
                });
            }
        }
    }
    points
}

/// All repetitions of all points, run on the worker pool. Results are in
/// point order, then repetition order.
fn run_sweep(cfg: &RunConfig, points: &[SweepPoint]) -> Result<Vec<Vec<RunOutcome>>> {
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|i| (0..cfg.repetitions as u64).map(move |r| (i, r)))
        .collect();
    let results: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(i, rep)| run_once(cfg, points[i], rep, None).map(|(o, _)| o))
        .collect::<Result<_>>()?;
    Ok(results.chunks(cfg.repetitions).map(|c| c.to_vec()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub point: SweepPoint,
    pub beta: f64,
    /// Mean over repetitions of the serial cost in native steps.
    pub t_serial_units: f64,
    /// Mean over repetitions of the parallel wall time in native steps.
    pub t_parallel_units: f64,
    /// Mean over repetitions of the per-run speedup.
    pub speedup: f64,
    pub std: f64,
    pub se: f64,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub point: SweepPoint,
    pub beta: f64,
    pub mean: f64,
    pub std: f64,
    pub oracle: f64,
    pub repetitions: usize,
    /// `|mean - oracle| > 3 std`.
    pub flagged: bool,
}

pub fn run_speedup_experiment(cfg: &RunConfig) -> Result<Vec<SpeedupReport>> {
    cfg.validate()?;
    let points = sweep_points(cfg);
    let runs = run_sweep(cfg, &points)?;
    Ok(points
        .iter()
        .zip(runs)
        .map(|(&point, runs)| {
            let speedups: Vec<f64> = runs.iter().map(|o| o.totals.speedup()).collect();
            let s = summarize(&speedups);
            let n = runs.len() as f64;
            SpeedupReport {
                point,
                beta: cfg.beta,
                t_serial_units: runs.iter().map(|o| o.totals.serial_units as f64).sum::<f64>() / n,
                t_parallel_units: runs.iter().map(|o| o.totals.parallel_units).sum::<f64>() / n,
                speedup: s.mean,
                std: s.std,
                se: s.se,
                repetitions: runs.len(),
            }
        })
        .collect())
}

/// Stationary average of the configured observable under `exp(-beta V)`.
pub fn oracle_value(cfg: &RunConfig) -> Result<f64> {
    match cfg.observable {
        ObservableSpec::One => Ok(1.0),
        ObservableSpec::Basin(label) => quadrature_reference(&potential(cfg), cfg.beta, label),
    }
}

pub fn run_accuracy_experiment(cfg: &RunConfig) -> Result<Vec<AccuracyReport>> {
    cfg.validate()?;
    let oracle = oracle_value(cfg)?;
    let points = sweep_points(cfg);
    let runs = run_sweep(cfg, &points)?;
    Ok(points
        .iter()
        .zip(runs)
        .map(|(&point, runs)| {
            let estimates: Vec<f64> = runs.iter().map(|o| o.estimate).collect();
            let s = summarize(&estimates);
            AccuracyReport {
                point,
                beta: cfg.beta,
                mean: s.mean,
                std: s.std,
                oracle,
                repetitions: runs.len(),
                flagged: !((s.mean - oracle).abs() <= 3.0 * s.std),
            }
        })
        .collect())
}

fn base_row(cfg: &RunConfig, point: SweepPoint, rep: usize) -> ReportRow {
    ReportRow {
        algorithm: point.algorithm.name().into(),
        replicas: point.replicas,
        beta: cfg.beta,
        t_corr: point.t_corr,
        dt: cfg.dt,
        window: cfg.fragment_length(point.algorithm),
        t_stop: cfg.t_stop,
        seed: cfg.seed,
        rep,
        value: 0.0,
        std: 0.0,
        oracle: None,
        verdict: "info".into(),
    }
}

pub fn speedup_rows(cfg: &RunConfig, reports: &[SpeedupReport]) -> Vec<ReportRow> {
    reports
        .iter()
        .map(|r| {
            let mut row = base_row(cfg, r.point, r.repetitions);
            row.value = r.speedup;
            row.std = r.std;
            if r.point.replicas == 1 {
                row.oracle = Some(1.0);
                row.verdict = if r.speedup == 1.0 && r.std == 0.0 { "pass" } else { "fail" }.into();
            }
            row
        })
        .collect()
}

pub fn accuracy_rows(cfg: &RunConfig, reports: &[AccuracyReport]) -> Vec<ReportRow> {
    reports
        .iter()
        .map(|r| {
            let mut row = base_row(cfg, r.point, r.repetitions);
            row.value = r.mean;
            row.std = r.std;
            row.oracle = Some(r.oracle);
            row.verdict = if r.flagged { "flag" } else { "pass" }.into();
            row
        })
        .collect()
}

/// Whether a sequence of (mean, standard error) pairs never moves in the
/// wrong direction by more than the combined standard errors. `increasing`
/// selects nondecreasing, otherwise nonincreasing.
pub fn monotone_within_errors(points: &[(f64, f64)], increasing: bool) -> bool {
    points.windows(2).all(|w| {
        let (a, sa) = w[0];
        let (b, sb) = w[1];
        let slack = sa + sb;
        if increasing {
            b >= a - slack
        } else {
            b <= a + slack
        }
    })
}
