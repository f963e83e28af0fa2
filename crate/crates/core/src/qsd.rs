//! Quasistationary sampling and the decorrelation stage.
//!
//! Both samplers and the decorrelation run work on lattice models (discrete
//! time, or continuous time on a fixed grid), where "survived for time `t`"
//! means every grid point up to `t` lies in the region.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{evolve_segment, MarkovModel, Observable, Region, SegmentOptions, TimeAxis, ZERO};
use crate::rng::{purpose, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DephasingMethod {
    Rejection,
    FlemingViot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DephasingConfig {
    pub method: DephasingMethod,
    /// Relaxation time, in the model's native time.
    pub t_corr: f64,
    pub replicas: usize,
    /// Per-replica restart budget for rejection sampling, and for the
    /// optional rejection tail after Fleming–Viot.
    pub max_restarts: u64,
    /// Extra independent evolution appended to each Fleming–Viot copy,
    /// restarted from the branching sample on escape. Zero disables it.
    pub tail: f64,
}

impl DephasingConfig {
    pub fn new(method: DephasingMethod, t_corr: f64, replicas: usize) -> Self {
        DephasingConfig {
            method,
            t_corr,
            replicas,
            max_restarts: 1_000_000,
            tail: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_corr >= 0.0) || !self.t_corr.is_finite() {
            return Err(Error::InvalidInput(format!("t_corr must be finite and >= 0, got {}", self.t_corr)));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidInput("dephasing needs at least one replica".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QsdSampleSet<S> {
    pub samples: Vec<S>,
    pub method: DephasingMethod,
    /// Restarts (rejection) or branching events (Fleming–Viot) per replica.
    pub restarts: Vec<u64>,
    /// Total native steps simulated over all copies.
    pub native_steps: u64,
    /// Lockstep rounds of the Fleming–Viot system (zero for rejection).
    pub rounds: u64,
}

/// Number of grid steps needed to cover `t`, allowing for rounding in `t / step`.
pub(crate) fn steps_covering(t: f64, step: f64) -> u64 {
    if t <= 0.0 {
        return 0;
    }
    (t / step - 1e-9).ceil().max(0.0) as u64
}

fn lattice<M: MarkovModel>(model: &M, what: &str) -> Result<f64> {
    model
        .lattice_step()
        .ok_or_else(|| Error::InvalidInput(format!("{what} requires a model on a time grid")))
}

fn check_seeds<S, G: Region<S> + ?Sized>(region: &G, seeds: &[S]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("no restart states given".into()));
    }
    if !seeds.iter().all(|s| region.contains(s)) {
        return Err(Error::InvalidInput(format!(
            "restart states must lie in region {}",
            region.label()
        )));
    }
    Ok(())
}

/// Rejection sampling: start each replica from a uniformly chosen seed
/// state, restarting whenever it leaves the region before surviving `t_corr`.
pub fn rejection_dephase<M, G>(
    model: &M,
    region: &G,
    cfg: &DephasingConfig,
    seeds: &[M::State],
    rng: &RngStream,
) -> Result<QsdSampleSet<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
{
    cfg.validate()?;
    check_seeds(region, seeds)?;
    let step = lattice(model, "rejection_dephase")?;
    let steps = steps_covering(cfg.t_corr, step);

    let mut samples = Vec::with_capacity(cfg.replicas);
    let mut restarts = Vec::with_capacity(cfg.replicas);
    let mut native_steps = 0;
    for r in 0..cfg.replicas {
        let mut stream = rng.derive(purpose::DEPHASE, r as u64);
        let mut tries = 0u64;
        loop {
            let start = &seeds[stream.random_range(0..seeds.len())];
            if steps == 0 {
                samples.push(start.clone());
                break;
            }
            let f = evolve_segment(model, region, start, steps as f64 * step, &ZERO, &mut stream, SegmentOptions::default())?;
            native_steps += f.native_steps;
            if !f.escaped() {
                samples.push(f.end);
                break;
            }
            tries += 1;
            if tries > cfg.max_restarts {
                return Err(Error::DephasingFailed {
                    replica: r,
                    max_restarts: cfg.max_restarts,
                });
            }
        }
        restarts.push(tries);
    }
    Ok(QsdSampleSet {
        samples,
        method: DephasingMethod::Rejection,
        restarts,
        native_steps,
        rounds: 0,
    })
}

/// Fleming–Viot branching: all copies advance in lockstep; a copy that leaves
/// the region is moved onto the new state of a uniformly chosen copy that
/// stayed. Copies start from `starts`, used cyclically.
pub fn fleming_viot_dephase<M, G>(
    model: &M,
    region: &G,
    cfg: &DephasingConfig,
    starts: &[M::State],
    rng: &RngStream,
) -> Result<QsdSampleSet<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
{
    cfg.validate()?;
    if cfg.replicas < 2 {
        return Err(Error::InvalidInput("Fleming-Viot dephasing needs R >= 2".into()));
    }
    check_seeds(region, starts)?;
    let step = lattice(model, "fleming_viot_dephase")?;
    let rounds = steps_covering(cfg.t_corr, step);
    let n = cfg.replicas;

    let mut states: Vec<M::State> = (0..n).map(|r| starts[r % starts.len()].clone()).collect();
    let mut streams: Vec<RngStream> = (0..n).map(|r| rng.derive(purpose::DEPHASE, r as u64)).collect();
    let mut branch = rng.derive(purpose::BRANCHING, 0);
    let mut restarts = vec![0u64; n];
    let mut escaped = vec![false; n];
    let mut survivors = Vec::with_capacity(n);

    for round in 0..rounds {
        survivors.clear();
        for r in 0..n {
            let piece = model.advance(&states[r], step, &mut streams[r])?;
            escaped[r] = !region.contains(&piece.end);
            if !escaped[r] {
                survivors.push(r);
            }
            states[r] = piece.end;
        }
        if survivors.is_empty() {
            return Err(Error::AllCopiesEscaped { copies: n, round });
        }
        for r in 0..n {
            if escaped[r] {
                let donor = survivors[branch.random_range(0..survivors.len())];
                states[r] = states[donor].clone();
                restarts[r] += 1;
            }
        }
    }
    let mut native_steps = rounds * n as u64;

    if cfg.tail > 0.0 {
        let tail_steps = steps_covering(cfg.tail, step);
        for (r, state) in states.iter_mut().enumerate() {
            let mut stream = rng.derive(purpose::RESTART, r as u64);
            let mut tries = 0u64;
            loop {
                let f = evolve_segment(model, region, state, tail_steps as f64 * step, &ZERO, &mut stream, SegmentOptions::default())?;
                native_steps += f.native_steps;
                if !f.escaped() {
                    *state = f.end;
                    break;
                }
                tries += 1;
                if tries > cfg.max_restarts {
                    return Err(Error::DephasingFailed {
                        replica: r,
                        max_restarts: cfg.max_restarts,
                    });
                }
            }
        }
    }

    Ok(QsdSampleSet {
        samples: states,
        method: DephasingMethod::FlemingViot,
        restarts,
        native_steps,
        rounds,
    })
}

/// Dispatch on `cfg.method`.
pub fn dephase<M, G>(
    model: &M,
    region: &G,
    cfg: &DephasingConfig,
    starts: &[M::State],
    rng: &RngStream,
) -> Result<QsdSampleSet<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
{
    match cfg.method {
        DephasingMethod::Rejection => rejection_dephase(model, region, cfg, starts, rng),
        DephasingMethod::FlemingViot => fleming_viot_dephase(model, region, cfg, starts, rng),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decorrelation<S> {
    pub f_decorr: f64,
    /// Physical time of the decorrelation path.
    pub t_decorr: f64,
    /// Index of the certified region.
    pub region: usize,
    pub terminal: S,
    pub native_steps: u64,
}

/// Grid points that must lie in a region in a row before it is certified.
///
/// Discrete time: `t_corr` consecutive points (at least one). Continuous time
/// on a grid: the path must stay for `t_corr` time, which takes one more
/// point than the number of steps covering `t_corr`.
pub fn points_required<M: MarkovModel>(model: &M, t_corr: f64) -> Result<u64> {
    let step = lattice(model, "decorrelation")?;
    Ok(match model.time_axis() {
        TimeAxis::Discrete => steps_covering(t_corr, step).max(1),
        TimeAxis::Continuous => steps_covering(t_corr, step) + 1,
    })
}

/// Evolve serially from `x0` until the path has stayed in one of `regions`
/// for that region's decorrelation time. The observable and physical time are
/// accumulated over the whole path before the stopping point.
pub fn decorrelation_run<M, G, O, F, R>(
    model: &M,
    regions: &[G],
    x0: &M::State,
    g: &O,
    t_corr_of: F,
    rng: &mut R,
    cap_steps: u64,
) -> Result<Decorrelation<M::State>>
where
    M: MarkovModel,
    G: Region<M::State>,
    O: Observable<M::State> + ?Sized,
    F: Fn(usize) -> f64,
    R: Rng + ?Sized,
{
    let required: Vec<u64> = (0..regions.len())
        .map(|i| {
            let t = t_corr_of(i);
            if !(t >= 0.0) {
                return Err(Error::InvalidInput(format!("negative decorrelation time {t} for region {i}")));
            }
            points_required(model, t)
        })
        .collect::<Result<_>>()?;
    let step = lattice(model, "decorrelation")?;

    let mut state = x0.clone();
    let mut current: Option<usize> = None;
    let mut run = 0u64;
    let mut f = 0.0;
    let mut t = 0.0;
    let mut steps = 0u64;
    loop {
        let here = regions.iter().position(|w| w.contains(&state));
        if here.is_some() && here == current {
            run += 1;
        } else {
            current = here;
            run = here.map_or(0, |_| 1);
        }
        if let Some(i) = current {
            if run >= required[i] {
                return Ok(Decorrelation {
                    f_decorr: f,
                    t_decorr: t,
                    region: i,
                    terminal: state,
                    native_steps: steps,
                });
            }
        }
        if steps >= cap_steps {
            return Err(Error::CapExceeded { cap: cap_steps as f64 * step });
        }
        let piece = model.advance(&state, step, rng)?;
        f += model.integrate(g, &state, piece.elapsed);
        t += model.physical_duration(&state, piece.elapsed);
        steps += 1;
        state = piece.end;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{Everywhere, UNIT};
    use crate::toy::{unit_pair, IntegerInterval, RandomWalk};

    #[test]
    fn zero_relaxation_returns_restart_law() {
        let cfg = DephasingConfig::new(DephasingMethod::Rejection, 0.0, 200);
        let set = rejection_dephase(&RandomWalk, &unit_pair(), &cfg, &[1], &RngStream::root(1)).unwrap();
        assert!(set.samples.iter().all(|&s| s == 1));
        assert_eq!(set.native_steps, 0);
    }

    #[test]
    fn rejection_samples_lie_in_region() {
        let cfg = DephasingConfig::new(DephasingMethod::Rejection, 8.0, 64);
        let region = IntegerInterval::new(-2, 2);
        let set = rejection_dephase(&RandomWalk, &region, &cfg, &[0], &RngStream::root(2)).unwrap();
        assert_eq!(set.samples.len(), 64);
        assert!(set.samples.iter().all(|s| region.contains(s)));
    }

    #[test]
    fn rejection_budget_exhaustion() {
        let mut cfg = DephasingConfig::new(DephasingMethod::Rejection, 40.0, 1);
        cfg.max_restarts = 3;
        let err = rejection_dephase(&RandomWalk, &unit_pair(), &cfg, &[0], &RngStream::root(3)).unwrap_err();
        assert!(matches!(err, Error::DephasingFailed { replica: 0, max_restarts: 3 }));
    }

    #[test]
    fn fleming_viot_on_whole_space_is_plain_evolution() {
        let cfg = DephasingConfig::new(DephasingMethod::FlemingViot, 30.0, 5);
        let rng = RngStream::root(4);
        let set = fleming_viot_dephase(&RandomWalk, &Everywhere, &cfg, &[0], &rng).unwrap();
        assert!(set.restarts.iter().all(|&r| r == 0));
        for r in 0..5 {
            let mut s = rng.derive(purpose::DEPHASE, r as u64);
            let f = evolve_segment(&RandomWalk, &Everywhere, &0, 30.0, &ZERO, &mut s, SegmentOptions::default()).unwrap();
            assert_eq!(set.samples[r], f.end);
        }
        assert_eq!(set.rounds, 30);
        assert_eq!(set.native_steps, 150);
    }

    #[test]
    fn one_escape_one_branching() {
        // A single round on {0,1} from state 1: each copy escapes to 2 or
        // stays at 0. Every escape is a branching event; the count stays R.
        let cfg = DephasingConfig::new(DephasingMethod::FlemingViot, 1.0, 4);
        for seed in 0..50 {
            let rng = RngStream::root(seed);
            match fleming_viot_dephase(&RandomWalk, &unit_pair(), &cfg, &[1], &rng) {
                Ok(set) => {
                    assert_eq!(set.samples.len(), 4);
                    let mut esc = 0;
                    for r in 0..4 {
                        let mut s = rng.derive(purpose::DEPHASE, r as u64);
                        if RandomWalk.advance(&1, 1.0, &mut s).unwrap().end == 2 {
                            esc += 1;
                        }
                    }
                    assert_eq!(set.restarts.iter().sum::<u64>(), esc);
                    assert!(set.samples.iter().all(|&s| s == 0));
                }
                Err(e) => assert!(matches!(e, Error::AllCopiesEscaped { copies: 4, .. })),
            }
        }
    }

    #[test]
    fn fleming_viot_requires_two_copies() {
        let cfg = DephasingConfig::new(DephasingMethod::FlemingViot, 1.0, 1);
        assert!(fleming_viot_dephase(&RandomWalk, &unit_pair(), &cfg, &[0], &RngStream::root(0)).is_err());
    }

    #[test]
    fn decorrelation_stops_immediately_with_zero_time() {
        let regions = [IntegerInterval::new(-5, 5), IntegerInterval::new(6, 10)];
        let mut rng = RngStream::root(0);
        let d = decorrelation_run(&RandomWalk, &regions, &0, &UNIT, |_| 0.0, &mut rng, 1000).unwrap();
        assert_eq!((d.t_decorr, d.region, d.terminal, d.native_steps), (0.0, 0, 0, 0));
    }

    #[test]
    fn decorrelation_unit_observable_is_time() {
        let regions = [IntegerInterval::new(-1, 1), IntegerInterval::new(2, 4), IntegerInterval::new(-4, -2)];
        let root = RngStream::root(8);
        for i in 0..100 {
            let mut rng = root.derive(purpose::DECORRELATION, i);
            let d = decorrelation_run(&RandomWalk, &regions, &0, &UNIT, |_| 4.0, &mut rng, 1_000_000).unwrap();
            assert_eq!(d.f_decorr, d.t_decorr);
            assert!(regions[d.region].contains(&d.terminal));
        }
    }

    #[test]
    fn decorrelation_counts_consecutive_points() {
        // Walk on [0, 100]: needs 3 consecutive points, so at least 2 steps
        // after entering. From 0 this is exactly 2 steps.
        let regions = [IntegerInterval::new(-100, 100)];
        let mut rng = RngStream::root(1);
        let d = decorrelation_run(&RandomWalk, &regions, &0, &UNIT, |_| 3.0, &mut rng, 10).unwrap();
        assert_eq!(d.native_steps, 2);
        assert_eq!(d.t_decorr, 2.0);
    }

    #[test]
    fn decorrelation_cap() {
        let regions = [IntegerInterval::new(50, 60)];
        let mut rng = RngStream::root(1);
        let err = decorrelation_run(&RandomWalk, &regions, &0, &UNIT, |_| 1.0, &mut rng, 10).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { .. }));
    }
}
