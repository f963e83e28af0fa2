//! Parallel steps and stationary-average drivers.
//!
//! A driver alternates a serial decorrelation stage with a parallel stage.
//! The decorrelation stage runs until the path has stayed in one region for
//! that region's `t_corr`. The parallel stage dephases `R` replicas inside the
//! region, runs them, and splices their fragments until the first exit. Both
//! stages contribute to the running integral of `f` and to the elapsed time.
//!
//! Alongside the estimate the drivers keep a cost ledger: the native steps a
//! serial simulation of the same trajectory would take, and the wall time of
//! the parallel run in the same units.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdmp::{initial_point, HoldingIntegral, LiftedState, Pdmp, SkeletonChain, SkeletonPoint};
use crate::process::{lattice_steps, MarkovModel, Observable, Region};
use crate::qsd::{decorrelation_run, dephase, DephasingConfig, DephasingMethod};
use crate::rng::{purpose, RngStream};
use crate::scheduler::{general_parallel_step, LazyWallClockPlan, PlanMode, ReplicaPool, WallClockModel};

pub const DEFAULT_TRACE_CAP: usize = 100_000;

#[derive(Clone, Debug)]
pub struct ParRepConfig<S> {
    pub replicas: usize,
    /// Decorrelation and dephasing time per region, or one value for all.
    pub t_corr: Vec<f64>,
    /// Fragment length `Dt` in native time (one step for skeleton chains).
    pub window: f64,
    /// Physical time after which the driver stops.
    pub t_stop: f64,
    pub ordering: PlanMode,
    pub wallclock: WallClockModel<S>,
    pub dephasing: DephasingMethod,
    /// Step cap for each serial stage and each parallel step.
    pub cap_steps: u64,
    pub trace_cap: usize,
    /// Where trace records go once `trace_cap` is reached.
    pub trace_spill: Option<PathBuf>,
}

impl<S> ParRepConfig<S> {
    pub fn new(replicas: usize, t_corr: f64, window: f64, t_stop: f64) -> Self {
        ParRepConfig {
            replicas,
            t_corr: vec![t_corr],
            window,
            t_stop,
            ordering: PlanMode::Synchronous,
            wallclock: WallClockModel::Unit,
            dephasing: DephasingMethod::FlemingViot,
            cap_steps: crate::process::DEFAULT_CAP_STEPS as u64,
            trace_cap: DEFAULT_TRACE_CAP,
            trace_spill: None,
        }
    }

    pub fn t_corr_of(&self, region: usize) -> f64 {
        match self.t_corr.as_slice() {
            [t] => *t,
            ts => ts[region],
        }
    }

    fn validate(&self, regions: usize) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::InvalidInput("at least one replica is required".into()));
        }
        if self.t_corr.len() != 1 && self.t_corr.len() != regions {
            return Err(Error::InvalidInput(format!(
                "{} decorrelation times given for {regions} regions",
                self.t_corr.len()
            )));
        }
        if self.t_corr.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidInput("decorrelation times must be finite and >= 0".into()));
        }
        if !(self.window > 0.0) {
            return Err(Error::InvalidInput(format!("fragment length must be positive, got {}", self.window)));
        }
        if !(self.t_stop > 0.0) {
            return Err(Error::InvalidInput(format!("stopping time must be positive, got {}", self.t_stop)));
        }
        if self.ordering == PlanMode::Wallclock && !self.wallclock.is_valid() {
            log::warn!("state-coupled wall clock: the spliced exit law is biased");
        }
        Ok(())
    }
}

/// Outcome of one parallel step.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelStepOutput<S> {
    /// Integral of `f` along the spliced path.
    pub f_par: f64,
    /// Physical time of the spliced path.
    pub t_par: f64,
    pub exit: S,
    /// Number of spliced fragments `L`.
    pub fragments: usize,
    /// Replica (1-based) whose fragment contains the exit.
    pub escaping_replica: usize,
    /// Segment (0-based) of the escaping fragment.
    pub escaping_segment: u64,
    /// Native steps of the spliced path.
    pub spliced_steps: u64,
    /// Idealized wall time of the step: the largest number of native steps
    /// any one replica contributed to the splice. Replicas run concurrently
    /// at one step per unit, whatever clock decided the order.
    pub wall_units: f64,
}

/// Synchronous step run directly in lockstep: window after window, every
/// replica advances `window` native time in replica order, and the first
/// replica to leave `region` ends the step. Replica `r` draws from stream
/// `(PARALLEL_STEP, r - 1)` of `rng`, so this agrees draw for draw with
/// [`general_parallel_step`] under a synchronous plan.
pub fn lockstep_parallel_step<M, G, O>(
    model: &M,
    region: &G,
    starts: &[M::State],
    f: &O,
    window: f64,
    rng: &RngStream,
    cap_steps: u64,
) -> Result<ParallelStepOutput<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    O: Observable<M::State> + ?Sized,
{
    if starts.is_empty() {
        return Err(Error::InvalidInput("a parallel step needs at least one replica".into()));
    }
    let step = model
        .lattice_step()
        .ok_or_else(|| Error::InvalidInput("lockstep parallel step requires a model on a time grid".into()))?;
    let w = lattice_steps(window, step)?;
    let mut states = starts.to_vec();
    let mut streams: Vec<RngStream> = (0..states.len())
        .map(|r| rng.derive(purpose::PARALLEL_STEP, r as u64))
        .collect();
    let mut f_par = 0.0;
    let mut t_par = 0.0;
    let mut spliced = 0u64;
    let mut row = 0u64;
    loop {
        for (r, (state, stream)) in states.iter_mut().zip(streams.iter_mut()).enumerate() {
            let mut f_frag = 0.0;
            let mut t_frag = 0.0;
            for i in 1..=w {
                let piece = model.advance(state, step, stream)?;
                f_frag += model.integrate(f, state, piece.elapsed);
                t_frag += model.physical_duration(state, piece.elapsed);
                *state = piece.end;
                if !region.contains(state) {
                    f_par += f_frag;
                    t_par += t_frag;
                    spliced += i;
                    let tail = if r > 0 { w } else { i };
                    return Ok(ParallelStepOutput {
                        f_par,
                        t_par,
                        exit: state.clone(),
                        fragments: row as usize * starts.len() + r + 1,
                        escaping_replica: r + 1,
                        escaping_segment: row,
                        spliced_steps: spliced,
                        wall_units: (row * w + tail) as f64,
                    });
                }
            }
            f_par += f_frag;
            t_par += t_frag;
            spliced += w;
        }
        row += 1;
        if row.saturating_mul(w) > cap_steps {
            return Err(Error::CapExceeded { cap: cap_steps as f64 * step });
        }
    }
}

/// Step over wall-clock ordered fragments, through the general splicer.
pub fn wallclock_parallel_step<M, G, O>(
    model: &M,
    region: &G,
    starts: &[M::State],
    f: &O,
    window: f64,
    wallclock: &WallClockModel<M::State>,
    rng: &RngStream,
) -> Result<ParallelStepOutput<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    O: Observable<M::State> + ?Sized,
{
    let mut pool = ReplicaPool::new(model, region, f, starts.to_vec(), window, rng)?;
    let mut plan = LazyWallClockPlan::new(wallclock.clone(), starts.len(), rng)?;
    let res = general_parallel_step(&mut pool, &mut plan)?;
    Ok(ParallelStepOutput {
        f_par: res.g_par,
        t_par: res.physical_time,
        exit: res.x_par,
        fragments: res.l,
        escaping_replica: res.escaping.replica,
        escaping_segment: res.escaping.segment,
        spliced_steps: res.spliced_steps,
        wall_units: res.replica_steps.iter().copied().max().unwrap_or(0) as f64,
    })
}

/// Synchronous step on the skeleton chain: one fragment per jump.
pub fn skeleton_sync_parallel_step<P, G, O>(
    chain: &SkeletonChain<P>,
    region: &G,
    starts: &[SkeletonPoint<P::State>],
    f: &O,
    rng: &RngStream,
) -> Result<ParallelStepOutput<SkeletonPoint<P::State>>>
where
    P: Pdmp,
    G: Region<SkeletonPoint<P::State>> + ?Sized,
    O: Observable<SkeletonPoint<P::State>> + ?Sized,
{
    lockstep_parallel_step(chain, region, starts, f, 1.0, rng, crate::process::DEFAULT_CAP_STEPS as u64)
}

/// Wall-clock step on the skeleton chain.
pub fn skeleton_async_parallel_step<P, G, O>(
    chain: &SkeletonChain<P>,
    region: &G,
    starts: &[SkeletonPoint<P::State>],
    f: &O,
    wallclock: &WallClockModel<SkeletonPoint<P::State>>,
    rng: &RngStream,
) -> Result<ParallelStepOutput<SkeletonPoint<P::State>>>
where
    P: Pdmp,
    G: Region<SkeletonPoint<P::State>> + ?Sized,
    O: Observable<SkeletonPoint<P::State>> + ?Sized,
{
    wallclock_parallel_step(chain, region, starts, f, 1.0, wallclock, rng)
}

/// Synchronous step on a time-discretized process with fragments of length `window`.
pub fn pdmp_sync_parallel_step<M, G, O>(
    chain: &M,
    region: &G,
    starts: &[M::State],
    f: &O,
    window: f64,
    rng: &RngStream,
) -> Result<ParallelStepOutput<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    O: Observable<M::State> + ?Sized,
{
    lockstep_parallel_step(chain, region, starts, f, window, rng, crate::process::DEFAULT_CAP_STEPS as u64)
}

/// Wall-clock step on a time-discretized process.
pub fn pdmp_async_parallel_step<M, G, O>(
    chain: &M,
    region: &G,
    starts: &[M::State],
    f: &O,
    window: f64,
    wallclock: &WallClockModel<M::State>,
    rng: &RngStream,
) -> Result<ParallelStepOutput<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    O: Observable<M::State> + ?Sized,
{
    wallclock_parallel_step(chain, region, starts, f, window, wallclock, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Decorrelation,
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: u64,
    pub phase: Phase,
    /// Region certified (decorrelation) or left (parallel).
    pub region: usize,
    pub f: f64,
    pub t: f64,
    pub serial_steps: u64,
    pub wall_units: f64,
}

/// In-memory trace up to a cap, then appended to a line-delimited JSON file.
#[derive(Debug, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub spilled: usize,
    pub dropped: usize,
    cap: usize,
    spill: Option<PathBuf>,
}

impl Trace {
    pub fn new(cap: usize, spill: Option<PathBuf>) -> Self {
        Trace {
            records: Vec::new(),
            spilled: 0,
            dropped: 0,
            cap,
            spill,
        }
    }

    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if self.records.len() < self.cap {
            self.records.push(record);
            return Ok(());
        }
        match &self.spill {
            Some(path) => {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path.clone(), e))?;
                let mut out = BufWriter::new(file);
                let line = serde_json::to_string(&record).map_err(|e| Error::Json {
                    path: path.clone(),
                    source: e,
                })?;
                writeln!(out, "{line}").map_err(|e| Error::io(path.clone(), e))?;
                self.spilled += 1;
            }
            None => self.dropped += 1,
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningTotals {
    pub f_sim: f64,
    pub t_sim: f64,
    pub epochs: u64,
    /// Parallel steps that ended in an exit, per region left.
    pub exits: Vec<u64>,
    /// Native steps of the equivalent serial simulation.
    pub serial_units: u64,
    /// Wall time of the parallel run, in native steps.
    pub parallel_units: f64,
    pub decorrelation_steps: u64,
    pub dephasing_rounds: u64,
    /// Epochs whose Fleming–Viot system died out; the run then continued
    /// serially from the decorrelated state.
    pub dephasing_failures: u64,
}

impl RunningTotals {
    pub fn estimate(&self) -> f64 {
        self.f_sim / self.t_sim
    }

    /// Serial cost over parallel wall time.
    pub fn speedup(&self) -> f64 {
        self.serial_units as f64 / self.parallel_units
    }
}

#[derive(Debug)]
pub struct DriverOutput<S> {
    pub estimate: f64,
    pub totals: RunningTotals,
    pub final_state: S,
    pub trace: Trace,
}

/// Long-time average of `f` by parallel replica dynamics on a lattice model.
/// Regions must be disjoint; time spent outside all of them is simulated
/// serially.
pub fn stationary_average<M, G, O>(
    model: &M,
    regions: &[G],
    cfg: &ParRepConfig<M::State>,
    f: &O,
    x0: M::State,
    rng: &RngStream,
) -> Result<DriverOutput<M::State>>
where
    M: MarkovModel,
    G: Region<M::State>,
    O: Observable<M::State> + ?Sized,
{
    cfg.validate(regions.len())?;
    let mut totals = RunningTotals {
        exits: vec![0; regions.len()],
        ..Default::default()
    };
    let mut trace = Trace::new(cfg.trace_cap, cfg.trace_spill.clone());
    let mut state = x0;
    let mut epoch = 0u64;
    loop {
        let ep = rng.derive(purpose::EPOCH, epoch);
        let mut decorr_rng = ep.derive(purpose::DECORRELATION, 0);
        let d = decorrelation_run(model, regions, &state, f, |i| cfg.t_corr_of(i), &mut decorr_rng, cfg.cap_steps)?;
        totals.f_sim += d.f_decorr;
        totals.t_sim += d.t_decorr;
        totals.serial_units += d.native_steps;
        totals.parallel_units += d.native_steps as f64;
        totals.decorrelation_steps += d.native_steps;
        trace.push(TraceRecord {
            epoch,
            phase: Phase::Decorrelation,
            region: d.region,
            f: d.f_decorr,
            t: d.t_decorr,
            serial_steps: d.native_steps,
            wall_units: d.native_steps as f64,
        })?;
        state = d.terminal;
        if totals.t_sim >= cfg.t_stop {
            break;
        }

        let region = &regions[d.region];
        let starts = if cfg.replicas == 1 {
            vec![state.clone()]
        } else {
            let dcfg = DephasingConfig::new(cfg.dephasing, cfg.t_corr_of(d.region), cfg.replicas);
            match dephase(model, region, &dcfg, std::slice::from_ref(&state), &ep.derive(purpose::DEPHASE, 0)) {
                Ok(set) => {
                    totals.dephasing_rounds += set.rounds;
                    totals.parallel_units += set.rounds as f64;
                    set.samples
                }
                // Every copy left at once, typically because the decorrelated
                // state is about to cross the boundary deterministically.
                // Skip the parallel step and decorrelate again.
                Err(Error::AllCopiesEscaped { round, .. }) => {
                    totals.dephasing_rounds += round + 1;
                    totals.parallel_units += (round + 1) as f64;
                    totals.dephasing_failures += 1;
                    epoch += 1;
                    totals.epochs = epoch;
                    continue;
                }
                Err(e) => return Err(e),
            }
        };

        let step_rng = ep.derive(purpose::PARALLEL_STEP, 0);
        let out = match cfg.ordering {
            PlanMode::Synchronous => lockstep_parallel_step(model, region, &starts, f, cfg.window, &step_rng, cfg.cap_steps)?,
            PlanMode::Wallclock => wallclock_parallel_step(model, region, &starts, f, cfg.window, &cfg.wallclock, &step_rng)?,
        };
        totals.f_sim += out.f_par;
        totals.t_sim += out.t_par;
        totals.serial_units += out.spliced_steps;
        totals.parallel_units += out.wall_units;
        totals.exits[d.region] += 1;
        trace.push(TraceRecord {
            epoch,
            phase: Phase::Parallel,
            region: d.region,
            f: out.f_par,
            t: out.t_par,
            serial_steps: out.spliced_steps,
            wall_units: out.wall_units,
        })?;
        state = out.exit;
        epoch += 1;
        totals.epochs = epoch;
        if totals.t_sim >= cfg.t_stop {
            break;
        }
    }
    Ok(DriverOutput {
        estimate: totals.estimate(),
        totals,
        final_state: state,
        trace,
    })
}

/// Stationary average of `f` along a PDMP, computed on its skeleton chain.
/// Time is physical: each skeleton step counts its holding time.
pub fn skeleton_stationary_average<P, G, F>(
    chain: &SkeletonChain<P>,
    regions: &[G],
    cfg: &ParRepConfig<SkeletonPoint<P::State>>,
    f: &F,
    x0: P::State,
    rng: &RngStream,
) -> Result<DriverOutput<SkeletonPoint<P::State>>>
where
    P: Pdmp,
    G: Region<SkeletonPoint<P::State>>,
    F: Observable<P::State> + ?Sized,
{
    if cfg.window != 1.0 {
        return Err(Error::InvalidInput("skeleton fragments are single jumps; set the window to 1".into()));
    }
    let first = initial_point(&chain.pdmp, x0, &mut rng.derive(purpose::SERIAL, 0))?;
    let g = HoldingIntegral::new(&chain.pdmp, f);
    stationary_average(chain, regions, cfg, &g, first, rng)
}

/// Stationary average of `f` on the time discretization of a lifted PDMP.
pub fn pdmp_stationary_average<M, G, O>(
    chain: &M,
    regions: &[G],
    cfg: &ParRepConfig<LiftedState>,
    f: &O,
    x0: LiftedState,
    rng: &RngStream,
) -> Result<DriverOutput<LiftedState>>
where
    M: MarkovModel<State = LiftedState>,
    G: Region<LiftedState>,
    O: Observable<LiftedState> + ?Sized,
{
    stationary_average(chain, regions, cfg, f, x0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdmp::{Basin, BasinIndicator, DiscretizedChain, LiftedMetropolisPdmp, TiltedCosine};
    use crate::process::{serial_first_exit, UNIT};
    use crate::scheduler::make_synchronous_plan;
    use crate::toy::{unit_pair, IntegerInterval, RandomWalk};

    fn general_sync<M, G, O>(model: &M, region: &G, starts: &[M::State], f: &O, window: f64, rng: &RngStream) -> ParallelStepOutput<M::State>
    where
        M: MarkovModel,
        G: Region<M::State>,
        O: Observable<M::State>,
    {
        let mut pool = ReplicaPool::new(model, region, f, starts.to_vec(), window, rng).unwrap();
        let mut plan = make_synchronous_plan(starts.len()).unwrap();
        let res = general_parallel_step(&mut pool, &mut plan).unwrap();
        ParallelStepOutput {
            f_par: res.g_par,
            t_par: res.physical_time,
            exit: res.x_par,
            fragments: res.l,
            escaping_replica: res.escaping.replica,
            escaping_segment: res.escaping.segment,
            spliced_steps: res.spliced_steps,
            wall_units: 0.0,
        }
    }

    fn same_path<S: PartialEq + std::fmt::Debug>(a: &ParallelStepOutput<S>, b: &ParallelStepOutput<S>) {
        assert_eq!(a.f_par.to_bits(), b.f_par.to_bits());
        assert_eq!(a.t_par.to_bits(), b.t_par.to_bits());
        assert_eq!(a.exit, b.exit);
        assert_eq!(a.fragments, b.fragments);
        assert_eq!(a.escaping_replica, b.escaping_replica);
        assert_eq!(a.escaping_segment, b.escaping_segment);
        assert_eq!(a.spliced_steps, b.spliced_steps);
    }

    #[test]
    fn lockstep_matches_general_step_on_toy() {
        let region = IntegerInterval::new(-3, 3);
        let f = |x: &i64| (*x as f64).powi(2);
        for seed in 0..200 {
            let rng = RngStream::root(seed);
            for r in [1, 2, 5] {
                let starts: Vec<i64> = (0..r).map(|i| i as i64 - 1).collect();
                let a = lockstep_parallel_step(&RandomWalk, &region, &starts, &f, 1.0, &rng, 1_000_000).unwrap();
                let b = general_sync(&RandomWalk, &region, &starts, &f, 1.0, &rng);
                same_path(&a, &b);
            }
        }
    }

    fn squares() -> Vec<Basin> {
        (1..=4).map(Basin::square).collect()
    }

    fn discretized() -> DiscretizedChain<TiltedCosine> {
        DiscretizedChain::new(LiftedMetropolisPdmp::axis(TiltedCosine::default(), 3.0).unwrap(), 0.01).unwrap()
    }

    #[test]
    fn lockstep_matches_general_step_on_discretized_chain() {
        let chain = discretized();
        let w1 = Basin::square(1);
        let f = BasinIndicator(1);
        for seed in 0..10 {
            let rng = RngStream::root(seed);
            let starts = vec![LiftedState::new(0.75, 0.75, 0), LiftedState::new(0.6, 0.9, 2), LiftedState::new(0.8, 0.55, 3)];
            for window in [0.01, 0.05] {
                let a = pdmp_sync_parallel_step(&chain, &w1, &starts, &f, window, &rng).unwrap();
                let b = general_sync(&chain, &w1, &starts, &f, window, &rng);
                same_path(&a, &b);
            }
        }
    }

    #[test]
    fn lockstep_matches_general_step_on_skeleton() {
        let chain = SkeletonChain::new(LiftedMetropolisPdmp::axis(TiltedCosine::default(), 3.0).unwrap());
        let w1 = Basin::square(1);
        let ind = BasinIndicator(1);
        let f = HoldingIntegral::new(&chain.pdmp, &ind);
        for seed in 0..10 {
            let rng = RngStream::root(seed);
            let mut init = rng.derive(purpose::SERIAL, 0);
            let starts: Vec<_> = [(0.75, 0.75, 0u8), (0.7, 0.8, 1)]
                .iter()
                .map(|&(x, y, k)| initial_point(&chain.pdmp, LiftedState::new(x, y, k), &mut init).unwrap())
                .collect();
            let a = skeleton_sync_parallel_step(&chain, &w1, &starts, &f, &rng).unwrap();
            let b = general_sync(&chain, &w1, &starts, &f, 1.0, &rng);
            same_path(&a, &b);
        }
    }

    #[test]
    fn unit_wallclock_reproduces_synchronous_step() {
        let region = IntegerInterval::new(-3, 3);
        for seed in 0..100 {
            let rng = RngStream::root(seed);
            let starts = [0i64, 1, 2, -1];
            let a = lockstep_parallel_step(&RandomWalk, &region, &starts, &UNIT, 1.0, &rng, 1_000_000).unwrap();
            let b = wallclock_parallel_step(&RandomWalk, &region, &starts, &UNIT, 1.0, &WallClockModel::Unit, &rng).unwrap();
            same_path(&a, &b);
            assert_eq!(a.wall_units, b.wall_units);
        }
    }

    #[test]
    fn single_replica_step_is_serial_exit() {
        let region = IntegerInterval::new(-4, 4);
        let rng = RngStream::root(7);
        let a = lockstep_parallel_step(&RandomWalk, &region, &[0], &UNIT, 1.0, &rng, 1_000_000).unwrap();
        let mut s = rng.derive(purpose::PARALLEL_STEP, 0);
        let serial = serial_first_exit(&RandomWalk, &region, &0, &UNIT, &mut s, 1e6).unwrap();
        assert_eq!(a.exit, serial.event.state);
        assert_eq!(a.t_par, serial.physical_time);
        assert_eq!(a.spliced_steps, serial.native_steps);
        assert_eq!(a.wall_units, serial.native_steps as f64);
    }

    #[test]
    fn unit_observable_integrates_to_elapsed_time() {
        let region = unit_pair();
        for seed in 0..100 {
            let out = lockstep_parallel_step(&RandomWalk, &region, &[0, 1, 1], &UNIT, 1.0, &RngStream::root(seed), 1000).unwrap();
            assert_eq!(out.f_par.to_bits(), out.t_par.to_bits());
            assert_eq!(out.t_par, out.spliced_steps as f64);
        }
    }

    #[test]
    fn wall_units_count_windows() {
        // Escape in segment m by replica J: m full windows, then either the
        // steps replica 1 took or one more full window.
        let chain = discretized();
        let w1 = Basin::square(1);
        for seed in 0..20 {
            let out = pdmp_sync_parallel_step(&chain, &w1, &[LiftedState::new(0.55, 0.75, 2); 3], &UNIT, 0.1, &RngStream::root(seed)).unwrap();
            let m = out.escaping_segment as f64;
            if out.escaping_replica > 1 {
                assert_eq!(out.wall_units, (m + 1.0) * 10.0);
            } else {
                assert!(out.wall_units > m * 10.0 && out.wall_units <= (m + 1.0) * 10.0);
            }
        }
    }

    #[test]
    fn driver_with_one_replica_has_unit_speedup() {
        let chain = discretized();
        let basins = squares();
        let mut cfg = ParRepConfig::new(1, 0.5, 0.05, 20.0);
        cfg.trace_cap = 4;
        let out = pdmp_stationary_average(&chain, &basins, &cfg, &BasinIndicator(1), LiftedState::new(0.75, 0.75, 0), &RngStream::root(1)).unwrap();
        assert_eq!(out.totals.speedup(), 1.0);
        assert!(out.estimate >= 0.0 && out.estimate <= 1.0);
        assert!(out.totals.t_sim >= 20.0);
        assert_eq!(out.trace.records.len(), 4);
    }

    #[test]
    fn serial_units_count_elapsed_grid_steps() {
        let chain = discretized();
        let basins = squares();
        let cfg = ParRepConfig::new(4, 0.3, 0.05, 30.0);
        let out = pdmp_stationary_average(&chain, &basins, &cfg, &UNIT, LiftedState::new(0.25, 0.25, 1), &RngStream::root(2)).unwrap();
        assert_eq!(out.totals.serial_units, (out.totals.t_sim / 0.01).round() as u64);
        assert!((out.estimate - 1.0).abs() < 1e-12);
        assert!(out.totals.speedup() > 0.0);
    }

    #[test]
    fn same_seed_same_run() {
        let chain = discretized();
        let basins = squares();
        let mut cfg = ParRepConfig::new(3, 0.2, 0.02, 10.0);
        cfg.ordering = PlanMode::Wallclock;
        cfg.wallclock = WallClockModel::IidExponential { mean: 1.0 };
        let run = || pdmp_stationary_average(&chain, &basins, &cfg, &BasinIndicator(2), LiftedState::new(0.25, 0.75, 0), &RngStream::root(3)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.totals, b.totals);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn trace_spills_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let mut trace = Trace::new(1, Some(path.clone()));
        for epoch in 0..3 {
            trace
                .push(TraceRecord {
                    epoch,
                    phase: Phase::Parallel,
                    region: 0,
                    f: 1.0,
                    t: 2.0,
                    serial_steps: 3,
                    wall_units: 1.0,
                })
                .unwrap();
        }
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.spilled, 2);
        let text = std::fs::read_to_string(path).unwrap();
        let back: Vec<TraceRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].epoch, 2);
    }

    #[test]
    fn skeleton_driver_runs() {
        let chain = SkeletonChain::new(LiftedMetropolisPdmp::axis(TiltedCosine::default(), 3.0).unwrap());
        let basins = squares();
        let cfg = ParRepConfig::new(4, 5.0, 1.0, 20.0);
        let out = skeleton_stationary_average(&chain, &basins, &cfg, &BasinIndicator(1), LiftedState::new(0.75, 0.75, 0), &RngStream::root(5)).unwrap();
        assert!(out.totals.t_sim >= 20.0);
        assert!((0.0..=1.0).contains(&out.estimate));
        let bad = ParRepConfig::new(4, 5.0, 2.0, 20.0);
        assert!(skeleton_stationary_average(&chain, &basins, &bad, &BasinIndicator(1), LiftedState::new(0.75, 0.75, 0), &RngStream::root(5)).is_err());
    }

    #[test]
    fn extinct_dephasing_falls_back_to_serial() {
        // Two copies on {0, 1} die out together with probability 1/4 per round.
        let cfg = ParRepConfig::new(2, 3.0, 1.0, 5000.0);
        let f = |_: &i64| 1.0;
        let regions = [IntegerInterval::new(-40, -1), unit_pair(), IntegerInterval::new(2, 40)];
        let out = stationary_average(&RandomWalk, &regions, &cfg, &f, 0, &RngStream::root(9)).unwrap();
        let t = &out.totals;
        assert!(t.dephasing_failures > 0);
        assert!(t.exits[1] > 0, "{t:?}");
        assert_eq!(out.estimate, 1.0);
        assert_eq!(t.serial_units as f64, t.t_sim);
        let wall: f64 = out.trace.records.iter().map(|r| r.wall_units).sum::<f64>() + t.dephasing_rounds as f64;
        assert_eq!(wall, t.parallel_units);
    }
}
