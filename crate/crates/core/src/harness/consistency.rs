//! Statistical and exact consistency checks of the parallel steps.
//!
//! Each check returns a [`Check`] verdict instead of failing; the suite runs
//! all of them with a Bonferroni-corrected level.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parrep::{lockstep_parallel_step, skeleton_sync_parallel_step, wallclock_parallel_step};
use crate::pdmp::{
    discrete_invariance_residual, initial_point, lifted_rate_identity_residual, Basin, BasinIndicator, DiscretizedChain,
    HoldingIntegral, LiftedMetropolisPdmp, LiftedState, Pdmp, Potential, SkeletonChain, SkeletonPoint, TiltedCosine,
    TorusPoint,
};
use crate::process::{serial_first_exit, Region, DEFAULT_CAP_STEPS};
use crate::qsd::{fleming_viot_dephase, DephasingConfig, DephasingMethod, QsdSampleSet};
use crate::rng::{purpose, RngStream};
use crate::scheduler::{general_parallel_step, make_synchronous_plan, GeometricFragments, WallClockModel};
use crate::stats::{binomial_se, bonferroni, chi2_gof, chi2_two_sample, independence_test, summarize};
use crate::toy::{pair_exit_probability, unit_pair, RandomWalk};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    /// Effect size: mutual information, z-score, or residual, per check.
    pub effect: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn p(name: impl Into<String>, statistic: f64, p_value: f64, effect: f64, alpha: f64, detail: String) -> Self {
        Check {
            name: name.into(),
            statistic,
            p_value: Some(p_value),
            effect,
            pass: p_value > alpha,
            detail,
        }
    }

    fn failed(name: impl Into<String>, detail: String) -> Self {
        Check {
            name: name.into(),
            statistic: f64::NAN,
            p_value: None,
            effect: f64::NAN,
            pass: false,
            detail,
        }
    }
}

fn guard(name: &str, r: Result<Check>) -> Check {
    r.unwrap_or_else(|e| Check::failed(name, format!("error: {e}")))
}

/// Ordering used in the toy parallel steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyOrdering {
    Synchronous,
    IidExponential,
    ReplicaHeterogeneous,
    StateCoupledInvalid,
}

/// Cost 1 for a segment starting at 0, 2 otherwise.
fn toy_coupled_cost(x: &i64) -> f64 {
    if *x == 0 {
        1.0
    } else {
        2.0
    }
}

/// Exit times at or above this are pooled into one tail bin.
const TOY_TIME_BINS: u64 = 24;

/// `(T_par, X_par)` of `samples` parallel steps on `{0, 1}` with replicas
/// drawn from its uniform QSD.
pub fn toy_parallel_exits(ordering: ToyOrdering, replicas: usize, samples: usize, seed: u64) -> Result<Vec<(u64, i64, f64)>> {
    let region = unit_pair();
    let g = |x: &i64| if *x == 1 { 1.0 } else { 0.0 };
    let wallclock = match ordering {
        ToyOrdering::Synchronous => None,
        ToyOrdering::IidExponential => Some(WallClockModel::IidExponential { mean: 1.0 }),
        ToyOrdering::ReplicaHeterogeneous => Some(WallClockModel::ReplicaHeterogeneous {
            speeds: (1..=replicas).map(|r| r as f64).collect(),
        }),
        ToyOrdering::StateCoupledInvalid => Some(WallClockModel::StateCoupledInvalid(toy_coupled_cost)),
    };
    let root = RngStream::root(seed);
    (0..samples)
        .map(|i| {
            let s = root.derive(purpose::REPETITION, i as u64);
            let mut init = s.derive(purpose::REPLICA, 0);
            let starts: Vec<i64> = (0..replicas).map(|_| init.random_range(0..2)).collect();
            let step_rng = s.derive(purpose::PARALLEL_STEP, 0);
            let out = match &wallclock {
                None => lockstep_parallel_step(&RandomWalk, &region, &starts, &g, 1.0, &step_rng, 1 << 40)?,
                Some(w) => wallclock_parallel_step(&RandomWalk, &region, &starts, &g, 1.0, w, &step_rng)?,
            };
            Ok((out.t_par as u64, out.exit, out.f_par))
        })
        .collect()
}

/// Counts over cells `(t, x)` for `t = 1..TOY_TIME_BINS` (last bin pooled)
/// and `x` in `{-1, 2}`, with their exact probabilities.
fn toy_joint_histogram(exits: &[(u64, i64, f64)]) -> (Vec<u64>, Vec<f64>) {
    let k = TOY_TIME_BINS as usize;
    let mut counts = vec![0u64; 2 * k];
    for &(t, x, _) in exits {
        let col = if x == -1 { 0 } else { 1 };
        let row = (t.min(TOY_TIME_BINS) - 1) as usize;
        counts[2 * row + col] += 1;
    }
    let mut probs = Vec::with_capacity(2 * k);
    for t in 1..=TOY_TIME_BINS {
        for x in [-1, 2] {
            let p = if t < TOY_TIME_BINS {
                pair_exit_probability(t, x)
            } else {
                // P(T >= K, X = x) = (1/2)^K.
                0.5f64.powi(TOY_TIME_BINS as i32)
            };
            probs.push(p);
        }
    }
    (counts, probs)
}

/// Joint law of `(T_par, X_par)` against the exact serial law.
pub fn toy_escape_law(ordering: ToyOrdering, replicas: usize, samples: usize, seed: u64, alpha: f64) -> Check {
    let name = format!("toy escape law, {ordering:?}, R = {replicas}");
    guard(&name.clone(), (|| {
        let exits = toy_parallel_exits(ordering, replicas, samples, seed)?;
        let (counts, probs) = toy_joint_histogram(&exits);
        let t = chi2_gof(&counts, &probs, 0)?;
        Ok(Check::p(name, t.statistic, t.p_value, t.statistic / t.dof, alpha, format!("chi2 = {:.3} on {} dof", t.statistic, t.dof)))
    })())
}

/// Remark-style bias: with costs read from the start state, `P(T = 1, X = 2)`
/// drops to `(1/2)^(R+1)`. Passes when the estimate is within 3 sigma of that
/// value and more than 5 sigma away from the correct 1/4.
pub fn toy_state_coupled_bias(replicas: usize, samples: usize, seed: u64) -> Check {
    let name = format!("state-coupled bias, R = {replicas}");
    guard(&name.clone(), (|| {
        let exits = toy_parallel_exits(ToyOrdering::StateCoupledInvalid, replicas, samples, seed)?;
        let hits = exits.iter().filter(|e| e.0 == 1 && e.1 == 2).count();
        let p_hat = hits as f64 / samples as f64;
        let biased = 0.5f64.powi(replicas as i32 + 1);
        let z_biased = (p_hat - biased) / binomial_se(biased, samples);
        let z_correct = (p_hat - 0.25) / binomial_se(0.25, samples);
        Ok(Check {
            name,
            statistic: p_hat,
            p_value: None,
            effect: z_correct,
            pass: z_biased.abs() < 3.0 && z_correct.abs() > 5.0,
            detail: format!("P(T=1,X=2) = {p_hat:.5}; {z_biased:+.2} sigma from {biased}, {z_correct:+.1} sigma from 1/4"),
        })
    })())
}

/// Serial first exits from the uniform QSD of `{0, 1}`, with the time spent at 1.
pub fn toy_serial_exits(samples: usize, seed: u64) -> Result<Vec<(u64, i64, f64)>> {
    let region = unit_pair();
    let g = |x: &i64| if *x == 1 { 1.0 } else { 0.0 };
    let root = RngStream::root(seed);
    (0..samples)
        .map(|i| {
            let mut s = root.derive(purpose::SERIAL, i as u64);
            let x0: i64 = s.random_range(0..2);
            let e = serial_first_exit(&RandomWalk, &region, &x0, &g, &mut s, DEFAULT_CAP_STEPS)?;
            Ok((e.event.time as u64, e.event.state, e.g_accum))
        })
        .collect()
}

fn mean_check(name: String, par: &[f64], ser: &[f64]) -> Check {
    let a = summarize(par);
    let b = summarize(ser);
    let se = (a.se * a.se + b.se * b.se).sqrt();
    let z = (a.mean - b.mean) / se;
    Check {
        name,
        statistic: a.mean - b.mean,
        p_value: None,
        effect: z,
        pass: z.abs() < 3.0,
        detail: format!("parallel {:.5} vs serial {:.5}, {z:+.2} standard errors", a.mean, b.mean),
    }
}

/// Mean of the accumulated indicator of state 1 over one parallel step
/// against serial first exits.
pub fn toy_mean_contribution(replicas: usize, samples: usize, seed: u64) -> Check {
    let name = format!("toy mean contribution, R = {replicas}");
    guard(&name.clone(), (|| {
        let par: Vec<f64> = toy_parallel_exits(ToyOrdering::Synchronous, replicas, samples, seed)?.iter().map(|e| e.2).collect();
        let ser: Vec<f64> = toy_serial_exits(samples, seed ^ 0x5eed)?.iter().map(|e| e.2).collect();
        Ok(mean_check(name, &par, &ser))
    })())
}

/// Serial exit times from the QSD are Geometric(1/2), and the exit point is
/// independent of the exit time. Returns the fit and the independence checks.
pub fn toy_memorylessness(samples: usize, seed: u64, alpha: f64) -> [Check; 2] {
    let exits = match toy_serial_exits(samples, seed) {
        Ok(e) => e,
        Err(e) => {
            return [
                Check::failed("toy geometric exit time", format!("error: {e}")),
                Check::failed("toy exit time independent of exit point", format!("error: {e}")),
            ]
        }
    };
    let k = TOY_TIME_BINS as usize;
    let mut counts = vec![0u64; k];
    let mut table = vec![vec![0u64; 2]; k];
    for &(t, x, _) in &exits {
        let row = (t.min(TOY_TIME_BINS) - 1) as usize;
        counts[row] += 1;
        table[row][if x == -1 { 0 } else { 1 }] += 1;
    }
    let probs: Vec<f64> = (1..=TOY_TIME_BINS)
        .map(|t| if t < TOY_TIME_BINS { 0.5f64.powi(t as i32) } else { 0.5f64.powi(TOY_TIME_BINS as i32 - 1) })
        .collect();
    let fit = guard("toy geometric exit time", (|| {
        let t = chi2_gof(&counts, &probs, 0)?;
        Ok(Check::p("toy geometric exit time", t.statistic, t.p_value, t.statistic / t.dof, alpha, format!("chi2 = {:.3} on {} dof", t.statistic, t.dof)))
    })());
    let indep = guard("toy exit time independent of exit point", (|| {
        let o = independence_test(&table)?;
        let mut c = Check::p(
            "toy exit time independent of exit point",
            o.test.statistic,
            o.test.p_value,
            o.mutual_information,
            alpha,
            format!("MI = {:.3e} nats, null 99% = {:.3e}", o.mutual_information, o.null_p99),
        );
        c.pass = c.pass && o.mutual_information <= o.null_p99;
        Ok(c)
    })());
    [fit, indep]
}

/// Spliced synthetic Geometric(`p`) exit times with fragment length `len`
/// are again Geometric(`p`).
pub fn splice_law(p: f64, len: u64, replicas: usize, samples: usize, seed: u64, alpha: f64) -> Check {
    let name = format!("splice law, p = {p}, t_m = {len}");
    guard(&name.clone(), (|| {
        if !(p > 0.0 && p <= 1.0) {
            return Err(crate::error::Error::InvalidInput(format!("exit probability must lie in (0, 1], got {p}")));
        }
        let root = RngStream::root(seed);
        // Bins 1..=kmax, tail pooled into the last.
        let kmax = ((20.0 / p).ceil() as u64).max(2);
        let mut counts = vec![0u64; kmax as usize];
        for i in 0..samples {
            let mut src = GeometricFragments::new(p, len, replicas, &root.derive(purpose::REPETITION, i as u64))?;
            let mut plan = make_synchronous_plan(replicas)?;
            let res = general_parallel_step(&mut src, &mut plan)?;
            let t = (res.t_par as u64).clamp(1, kmax);
            counts[t as usize - 1] += 1;
        }
        let q = 1.0 - p;
        let probs: Vec<f64> = (1..=kmax)
            .map(|t| if t < kmax { q.powi(t as i32 - 1) * p } else { q.powi(kmax as i32 - 1) })
            .collect();
        let t = chi2_gof(&counts, &probs, 0)?;
        Ok(Check::p(name, t.statistic, t.p_value, t.statistic / t.dof, alpha, format!("chi2 = {:.3} on {} dof", t.statistic, t.dof)))
    })())
}

/// Largest lifted-rate and discrete-invariance residuals over an
/// `n x n x N` grid, relative to `beta max |grad V|` and `max exp(-beta V)`.
pub fn identity_residuals(beta: f64, dt: f64, n: usize) -> Result<[Check; 2]> {
    let pot = TiltedCosine::default();
    let model = LiftedMetropolisPdmp::axis(pot, beta)?;
    let chain = DiscretizedChain::new(model.clone(), dt)?;
    let g = pot.gradient_bound();
    let rate_scale = (beta * g[0].hypot(g[1])).max(f64::MIN_POSITIVE);
    let weight_scale = (-beta * pot.min_value()).exp();
    let (mut rate, mut inv) = (0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            let x = [i as f64 / n as f64, j as f64 / n as f64];
            for k in 0..model.n() {
                rate = rate.max(lifted_rate_identity_residual(&model, x, k).abs() / rate_scale);
                inv = inv.max(discrete_invariance_residual(&chain, TorusPoint::new(x[0], x[1]), k).abs() / weight_scale);
            }
        }
    }
    let check = |name: &str, r: f64| Check {
        name: name.into(),
        statistic: r,
        p_value: None,
        effect: r,
        pass: r < 1e-12,
        detail: format!("max relative residual {r:.3e} over {n}x{n}x{}", model.n()),
    };
    Ok([check("lifted rate identity", rate), check("discrete invariance identity", inv)])
}

/// Exit samples of the skeleton chain from basin 1: parallel steps from a
/// Fleming–Viot dephased set, and serial exits from one dephased copy.
#[derive(Clone, Debug, PartialEq)]
pub struct PdmpExitSamples {
    /// `(exit basin, physical exit time, integral of 1_{W1})`.
    pub parallel: Vec<(u8, f64, f64)>,
    pub serial: Vec<(u8, f64, f64)>,
}

/// Two independent Fleming–Viot sets started from the first skeleton point
/// after the center of basin 1. A start that leaves the basin deterministically kills every
/// copy at once; such starts are redrawn.
fn dephase_from_center<P: Pdmp<State = LiftedState>>(
    chain: &SkeletonChain<P>,
    w1: &Basin,
    cfg: &DephasingConfig,
    s: &RngStream,
) -> Result<[QsdSampleSet<SkeletonPoint<LiftedState>>; 2]> {
    const ATTEMPTS: u64 = 1000;
    for attempt in 0..ATTEMPTS {
        let z0 = initial_point(&chain.pdmp, LiftedState::new(0.75, 0.75, 0), &mut s.derive(purpose::SERIAL, 2 * attempt))?;
        if !w1.contains(&z0) {
            continue;
        }
        let run = |k: u64| fleming_viot_dephase(chain, w1, cfg, std::slice::from_ref(&z0), &s.derive(purpose::DEPHASE, 2 * attempt + k));
        match run(0).and_then(|a| Ok([a, run(1)?])) {
            Err(Error::AllCopiesEscaped { .. }) => continue,
            r => return r,
        }
    }
    Err(Error::DephasingFailed {
        replica: 0,
        max_restarts: ATTEMPTS,
    })
}

pub fn pdmp_exit_samples(beta: f64, replicas: usize, t_corr: f64, samples: usize, seed: u64) -> Result<PdmpExitSamples> {
    let chain = SkeletonChain::new(LiftedMetropolisPdmp::axis(TiltedCosine::default(), beta)?);
    let w1 = Basin::square(1);
    let ind = BasinIndicator(1);
    let f = HoldingIntegral::new(&chain.pdmp, &ind);
    let root = RngStream::root(seed);
    let cfg = DephasingConfig::new(DephasingMethod::FlemingViot, t_corr, replicas.max(2));
    let mut parallel = Vec::with_capacity(samples);
    let mut serial = Vec::with_capacity(samples);
    for i in 0..samples {
        let s = root.derive(purpose::REPETITION, i as u64);
        let [set, other] = dephase_from_center(&chain, &w1, &cfg, &s)?;
        let out = skeleton_sync_parallel_step(&chain, &w1, &set.samples[..replicas], &f, &s.derive(purpose::PARALLEL_STEP, 0))?;
        parallel.push((out.exit.xi.pos.basin(), out.t_par, out.f_par));

        let e = serial_first_exit(&chain, &w1, &other.samples[0], &f, &mut s.derive(purpose::SERIAL, 1), DEFAULT_CAP_STEPS)?;
        serial.push((e.event.state.xi.pos.basin(), e.physical_time, e.g_accum));
    }
    Ok(PdmpExitSamples { parallel, serial })
}

/// Two-sample test of `(exit basin, exit time decile)` between parallel and serial.
pub fn pdmp_escape_law(samples: &PdmpExitSamples, alpha: f64) -> Check {
    let name = "PDMP skeleton escape law";
    guard(name, (|| {
        let mut times: Vec<f64> = samples.serial.iter().map(|e| e.1).collect();
        times.sort_by(f64::total_cmp);
        let cuts: Vec<f64> = (1..10).map(|d| times[d * times.len() / 10]).collect();
        let cell = |e: &(u8, f64, f64)| (e.0 as usize - 1) * 10 + cuts.partition_point(|&c| c <= e.1);
        let mut a = vec![0u64; 40];
        let mut b = vec![0u64; 40];
        samples.parallel.iter().for_each(|e| a[cell(e)] += 1);
        samples.serial.iter().for_each(|e| b[cell(e)] += 1);
        let t = chi2_two_sample(&a, &b)?;
        Ok(Check::p(name, t.statistic, t.p_value, t.statistic / t.dof, alpha, format!("chi2 = {:.3} on {} dof", t.statistic, t.dof)))
    })())
}

pub fn pdmp_mean_contribution(samples: &PdmpExitSamples) -> Check {
    let par: Vec<f64> = samples.parallel.iter().map(|e| e.2).collect();
    let ser: Vec<f64> = samples.serial.iter().map(|e| e.2).collect();
    mean_check("PDMP mean contribution of 1_W1".into(), &par, &ser)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub toy_samples: usize,
    pub pdmp_samples: usize,
    pub replicas: usize,
    pub alpha: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 1,
            toy_samples: 100_000,
            pdmp_samples: 10_000,
            replicas: 4,
            alpha: 0.01,
        }
    }
}

/// Every check, with p-value checks held to `alpha` divided by their count.
pub fn run_consistency_suite(cfg: &SuiteConfig) -> Vec<Check> {
    let r = cfg.replicas;
    let n = cfg.toy_samples;
    let seed = cfg.seed;
    // Nine p-value checks below.
    let level = bonferroni(cfg.alpha, 9);
    let mut checks = Vec::new();
    for (i, ordering) in [ToyOrdering::Synchronous, ToyOrdering::IidExponential, ToyOrdering::ReplicaHeterogeneous]
        .into_iter()
        .enumerate()
    {
        checks.push(toy_escape_law(ordering, r, n, seed + i as u64, level));
    }
    let pdmp = pdmp_exit_samples(3.0, 8, 100.0, cfg.pdmp_samples, seed + 10);
    match &pdmp {
        Ok(s) => checks.push(pdmp_escape_law(s, level)),
        Err(e) => checks.push(Check::failed("PDMP skeleton escape law", format!("error: {e}"))),
    }
    checks.push(toy_mean_contribution(r, n, seed + 20));
    match &pdmp {
        Ok(s) => checks.push(pdmp_mean_contribution(s)),
        Err(e) => checks.push(Check::failed("PDMP mean contribution of 1_W1", format!("error: {e}"))),
    }
    checks.extend(toy_memorylessness(n, seed + 30, level));
    for (i, (p, len)) in [(0.5, 1), (0.1, 5), (0.01, 20)].into_iter().enumerate() {
        checks.push(splice_law(p, len, r, n, seed + 40 + i as u64, level));
    }
    checks.push(toy_state_coupled_bias(3, n, seed + 50));
    match identity_residuals(3.0, 0.01, 100) {
        Ok(cs) => checks.extend(cs),
        Err(e) => checks.push(Check::failed("identity residuals", format!("error: {e}"))),
    }
    checks
}
