//! Markov process abstraction, regions, trajectory fragments and the serial
//! first-exit oracle.
//!
//! A model advances in *pieces*. For a discrete-time model a piece is one
//! step. For a continuous-time model a piece is a stretch of deterministic
//! flow that ends either at the next random event or at a requested horizon,
//! whichever comes first. Models whose continuous time is simulated on a
//! fixed grid (time discretizations) report a `lattice_step` and are advanced
//! one grid step per piece, with segment lengths counted in whole steps.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on serial simulation, in native steps.
pub const DEFAULT_CAP_STEPS: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeAxis {
    Discrete,
    Continuous,
}

/// Result of advancing a model by one piece.
#[derive(Clone, Debug, PartialEq)]
pub struct Piece<S> {
    /// Native time covered by the piece.
    pub elapsed: f64,
    /// State at the end of the piece (after the jump, if the piece ended on one).
    pub end: S,
}

pub trait MarkovModel: Sync {
    type State: Clone + Debug + Send + Sync;

    fn time_axis(&self) -> TimeAxis;

    /// Fixed native step, if the model lives on a time grid.
    fn lattice_step(&self) -> Option<f64> {
        match self.time_axis() {
            TimeAxis::Discrete => Some(1.0),
            TimeAxis::Continuous => None,
        }
    }

    /// Advance by one piece of at most `horizon` native time. Lattice models
    /// ignore `horizon` and always take exactly one step.
    fn advance<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Piece<Self::State>>;

    /// First time in `(0, len]` at which the deterministic flow started at
    /// `start` leaves `region`, together with the state at that time. Models
    /// without a flow (the state only changes at piece ends) return `None`.
    fn exit_along<G: Region<Self::State> + ?Sized>(
        &self,
        _region: &G,
        _start: &Self::State,
        _len: f64,
    ) -> Option<(f64, Self::State)> {
        None
    }

    /// Contribution of a piece of native length `len` started at `start`:
    /// `g(start) * len` unless the model knows better.
    fn integrate<G: Observable<Self::State> + ?Sized>(
        &self,
        g: &G,
        start: &Self::State,
        len: f64,
    ) -> f64 {
        g.value(start) * len
    }

    /// Physical time represented by a piece. Equal to the native length
    /// except for embedded chains whose states carry their own durations.
    fn physical_duration(&self, _start: &Self::State, len: f64) -> f64 {
        len
    }
}

pub trait Region<S>: Sync {
    fn contains(&self, state: &S) -> bool;

    fn label(&self) -> &str {
        "region"
    }
}

/// The whole state space.
#[derive(Clone, Copy, Debug, Default)]
pub struct Everywhere;

impl<S> Region<S> for Everywhere {
    fn contains(&self, _state: &S) -> bool {
        true
    }

    fn label(&self) -> &str {
        "everywhere"
    }
}

pub trait Observable<S>: Sync {
    fn value(&self, state: &S) -> f64;

    /// `Some(c)` if the observable is the constant `c`.
    fn constant(&self) -> Option<f64> {
        None
    }

    /// True if the observable only depends on which cell of the model's
    /// region partition the state is in.
    fn cellwise_constant(&self) -> bool {
        false
    }
}

impl<S, F> Observable<S> for F
where
    F: Fn(&S) -> f64 + Sync,
{
    fn value(&self, state: &S) -> f64 {
        self(state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant(pub f64);

impl<S> Observable<S> for Constant {
    fn value(&self, _state: &S) -> f64 {
        self.0
    }

    fn constant(&self) -> Option<f64> {
        Some(self.0)
    }

    fn cellwise_constant(&self) -> bool {
        true
    }
}

/// `g == 1`: accumulates time.
pub const UNIT: Constant = Constant(1.0);
pub const ZERO: Constant = Constant(0.0);

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeEvent<S> {
    /// Native exit time, measured from the start of the path considered.
    pub time: f64,
    pub state: S,
}

/// One stretch of a stored path: the state at `offset` and the native length
/// of the deterministic piece that starts there.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPiece<S> {
    pub offset: f64,
    pub state: S,
    pub len: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fragment<S> {
    /// Position `k` in the ordering (1-based), 0 while unassigned.
    pub order_index: usize,
    pub replica: usize,
    pub segment: u64,
    /// Native length `t_m` of the fragment.
    pub duration: f64,
    pub start: S,
    /// Event list of the path up to `duration` or the exit, if recorded.
    pub path: Vec<PathPiece<S>>,
    /// Set iff the path leaves the region at an internal time in `(0, duration]`.
    pub exit: Option<EscapeEvent<S>>,
    /// State at the end of the fragment (the exit state if escaped).
    pub end: S,
    /// Accumulated observable up to `min(exit, duration)`.
    pub g_accum: f64,
    /// Physical time up to `min(exit, duration)`.
    pub physical_time: f64,
    /// Native steps (pieces) simulated.
    pub native_steps: u64,
}

impl<S> Fragment<S> {
    pub fn escaped(&self) -> bool {
        self.exit.is_some()
    }

    /// Native time contributed to a splice: the exit time if escaped, else `t_m`.
    pub fn contributed_time(&self) -> f64 {
        self.exit.as_ref().map_or(self.duration, |e| e.time)
    }
}

/// Number of lattice steps in `duration`, rejecting non-multiples.
pub(crate) fn lattice_steps(duration: f64, step: f64) -> Result<u64> {
    let n = (duration / step).round();
    if n < 1.0 || (n * step - duration).abs() > 1e-9 * duration.max(step) {
        return Err(Error::InvalidInput(format!(
            "duration {duration} is not a positive multiple of the lattice step {step}"
        )));
    }
    Ok(n as u64)
}

/// Advance one piece and check it against `region`. Returns the piece, the
/// native length actually used (truncated at an exit) and the exit state.
pub(crate) fn step_in_region<M, G, R>(
    model: &M,
    region: &G,
    state: &M::State,
    horizon: f64,
    rng: &mut R,
) -> Result<(Piece<M::State>, f64, Option<M::State>)>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    R: Rng + ?Sized,
{
    let piece = model.advance(state, horizon, rng)?;
    if let Some((tau, at)) = model.exit_along(region, state, piece.elapsed) {
        return Ok((piece, tau, Some(at)));
    }
    let len = piece.elapsed;
    if region.contains(&piece.end) {
        Ok((piece, len, None))
    } else {
        let end = piece.end.clone();
        Ok((piece, len, Some(end)))
    }
}

/// Options for [`evolve_segment`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SegmentOptions {
    pub record_path: bool,
}

/// Evolve `x0` for native time `duration`, stopping early at the first exit
/// from `region`. Nothing after the exit is simulated.
pub fn evolve_segment<M, G, O, R>(
    model: &M,
    region: &G,
    x0: &M::State,
    duration: f64,
    g: &O,
    rng: &mut R,
    options: SegmentOptions,
) -> Result<Fragment<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    O: Observable<M::State> + ?Sized,
    R: Rng + ?Sized,
{
    if !(duration > 0.0) {
        return Err(Error::InvalidInput(format!(
            "segment duration must be positive, got {duration}"
        )));
    }
    let lattice = match model.lattice_step() {
        Some(step) => Some((step, lattice_steps(duration, step)?)),
        None => None,
    };

    let mut state = x0.clone();
    let mut path = Vec::new();
    let mut g_accum = 0.0;
    let mut physical_time = 0.0;
    let mut steps = 0u64;
    let mut t = 0.0;
    loop {
        let horizon = match lattice {
            Some((step, n)) => {
                if steps == n {
                    break;
                }
                step
            }
            None => {
                if t >= duration {
                    break;
                }
                duration - t
            }
        };
        let (piece, len, exit) = step_in_region(model, region, &state, horizon, rng)?;
        g_accum += model.integrate(g, &state, len);
        physical_time += model.physical_duration(&state, len);
        if options.record_path {
            path.push(PathPiece {
                offset: t,
                state: state.clone(),
                len,
            });
        }
        steps += 1;
        t = match lattice {
            Some((step, _)) if exit.is_none() || len == step => steps as f64 * step,
            _ => t + len,
        };
        if let Some(at) = exit {
            return Ok(Fragment {
                order_index: 0,
                replica: 0,
                segment: 0,
                duration,
                start: x0.clone(),
                path,
                exit: Some(EscapeEvent {
                    time: t,
                    state: at.clone(),
                }),
                end: at,
                g_accum,
                physical_time,
                native_steps: steps,
            });
        }
        state = piece.end;
    }
    Ok(Fragment {
        order_index: 0,
        replica: 0,
        segment: 0,
        duration,
        start: x0.clone(),
        path,
        exit: None,
        end: state,
        g_accum,
        physical_time,
        native_steps: steps,
    })
}

/// Outcome of [`serial_first_exit`].
#[derive(Clone, Debug, PartialEq)]
pub struct SerialExit<S> {
    pub event: EscapeEvent<S>,
    /// Accumulated observable over the pre-exit path.
    pub g_accum: f64,
    pub physical_time: f64,
    pub native_steps: u64,
}

/// Serial simulation from `x0` until the first exit from `region`. The
/// reference against which every parallel step is checked.
pub fn serial_first_exit<M, G, O, R>(
    model: &M,
    region: &G,
    x0: &M::State,
    g: &O,
    rng: &mut R,
    cap: f64,
) -> Result<SerialExit<M::State>>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    O: Observable<M::State> + ?Sized,
    R: Rng + ?Sized,
{
    if !region.contains(x0) {
        return Err(Error::InvalidInput(
            "serial_first_exit: initial state is outside the region".into(),
        ));
    }
    if !(cap > 0.0) {
        return Err(Error::InvalidInput(format!("cap must be positive, got {cap}")));
    }
    let duration = match model.lattice_step() {
        Some(step) => (cap / step).floor().max(1.0) * step,
        None => cap,
    };
    let fragment = evolve_segment(model, region, x0, duration, g, rng, SegmentOptions::default())?;
    match fragment.exit {
        Some(event) => Ok(SerialExit {
            event,
            g_accum: fragment.g_accum,
            physical_time: fragment.physical_time,
            native_steps: fragment.native_steps,
        }),
        None => Err(Error::CapExceeded { cap }),
    }
}

/// Accumulate `g` over a recorded path: a sum over steps for discrete
/// models, an integral over pieces for continuous ones.
pub fn accumulate<M, O>(model: &M, path: &[PathPiece<M::State>], g: &O) -> Result<f64>
where
    M: MarkovModel,
    O: Observable<M::State> + ?Sized,
{
    if path.is_empty() {
        return Err(Error::InvalidInput("accumulate: empty path".into()));
    }
    Ok(path.iter().map(|p| model.integrate(g, &p.state, p.len)).sum())
}
