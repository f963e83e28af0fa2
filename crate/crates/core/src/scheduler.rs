//! Fragment orderings and the general splicing step.
//!
//! Replica `r` (1-based) produces fragments `(r, 0), (r, 1), ...`, fragment
//! `m` covering `[m dt, (m + 1) dt]` of its path. An ordering plan lists
//! these pairs in the order they are spliced, and [`general_parallel_step`]
//! consumes them until the first fragment containing an exit.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{evolve_segment, Fragment, MarkovModel, Observable, Region, SegmentOptions};
use crate::rng::{purpose, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Synchronous,
    Wallclock,
}

/// One position of an ordering: replica (1-based) and segment (0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderEntry {
    pub replica: usize,
    pub segment: u64,
}

impl OrderEntry {
    pub fn new(replica: usize, segment: u64) -> Self {
        OrderEntry { replica, segment }
    }
}

/// Produces fragments by `(replica, segment)`.
pub trait FragmentSource<S> {
    fn replicas(&self) -> usize;

    fn fragment(&mut self, replica: usize, segment: u64) -> Result<Fragment<S>>;

    /// State at the start of segment `segment` of `replica`. Only the invalid
    /// state-coupled wall clock asks for this.
    fn start_state(&mut self, replica: usize, segment: u64) -> Result<S>;
}

/// A lazily extended ordering of fragments.
pub trait OrderingPlan<S> {
    fn mode(&self) -> PlanMode;

    /// The next entry. `source` is only consulted by plans whose costs read
    /// replica states.
    fn next_entry<Src: FragmentSource<S>>(&mut self, source: &mut Src) -> Result<OrderEntry>;

    /// Wall-clock completion time of the entry last returned.
    fn completion_time(&self) -> f64;
}

/// `m_k = floor((k - 1) / R)`, `r_k = k - R m_k`.
#[derive(Clone, Debug)]
pub struct SynchronousPlan {
    replicas: usize,
    k: u64,
}

pub fn make_synchronous_plan(replicas: usize) -> Result<SynchronousPlan> {
    if replicas == 0 {
        return Err(Error::InvalidInput("a plan needs at least one replica".into()));
    }
    Ok(SynchronousPlan { replicas, k: 0 })
}

impl SynchronousPlan {
    /// Entry at 1-based position `k`.
    pub fn entry(&self, k: u64) -> OrderEntry {
        assert!(k >= 1, "positions are 1-based");
        let r = self.replicas as u64;
        let m = (k - 1) / r;
        OrderEntry::new((k - r * m) as usize, m)
    }
}

impl<S> OrderingPlan<S> for SynchronousPlan {
    fn mode(&self) -> PlanMode {
        PlanMode::Synchronous
    }

    fn next_entry<Src: FragmentSource<S>>(&mut self, _source: &mut Src) -> Result<OrderEntry> {
        self.k += 1;
        Ok(self.entry(self.k))
    }

    fn completion_time(&self) -> f64 {
        if self.k == 0 {
            0.0
        } else {
            (self.entry(self.k).segment + 1) as f64
        }
    }
}

/// Virtual wall-clock cost of computing one segment.
#[derive(Clone, Debug)]
pub enum WallClockModel<S> {
    /// Every segment costs one unit; degenerates to the synchronous order.
    Unit,
    /// Independent exponential costs with the given mean.
    IidExponential { mean: f64 },
    /// Exponential costs whose rate is the replica's speed.
    ReplicaHeterogeneous { speeds: Vec<f64> },
    /// Cost read from the replica state at the start of the segment. Breaks
    /// independence of costs and paths; only for demonstrating bias.
    StateCoupledInvalid(fn(&S) -> f64),
    /// Host time spent generating the fragment. Not reproducible.
    MeasuredHostTime,
}

impl<S> WallClockModel<S> {
    pub fn is_valid(&self) -> bool {
        !matches!(self, WallClockModel::StateCoupledInvalid(_))
    }

    pub fn reads_state(&self) -> bool {
        matches!(self, WallClockModel::StateCoupledInvalid(_))
    }

    fn check(&self, replicas: usize) -> Result<()> {
        match self {
            WallClockModel::IidExponential { mean } if !(*mean > 0.0) => {
                Err(Error::InvalidInput(format!("mean cost must be positive, got {mean}")))
            }
            WallClockModel::ReplicaHeterogeneous { speeds } => {
                if speeds.len() < replicas {
                    Err(Error::InvalidInput(format!(
                        "{} replica speeds given for {replicas} replicas",
                        speeds.len()
                    )))
                } else if speeds.iter().any(|s| !(*s > 0.0)) {
                    Err(Error::InvalidInput("replica speeds must be positive".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Cost of one segment of `replica` (0-based). Random modes draw from `rng`.
    pub fn segment_cost<R: Rng + ?Sized>(&self, replica: usize, state: Option<&S>, rng: &mut R) -> Result<f64> {
        let exp1 = |rng: &mut R| -(1.0 - rng.random::<f64>()).ln();
        let cost = match self {
            WallClockModel::Unit => 1.0,
            WallClockModel::IidExponential { mean } => mean * exp1(rng),
            WallClockModel::ReplicaHeterogeneous { speeds } => exp1(rng) / speeds[replica],
            WallClockModel::StateCoupledInvalid(f) => {
                let s = state.ok_or_else(|| {
                    Error::InvalidInput("state-coupled wall clock needs replica states".into())
                })?;
                f(s)
            }
            WallClockModel::MeasuredHostTime => {
                return Err(Error::InvalidInput(
                    "measured host time has no sampled cost; use a lazy wall-clock plan".into(),
                ))
            }
        };
        if !(cost > 0.0) {
            return Err(Error::InvalidInput(format!("segment cost must be positive, got {cost}")));
        }
        Ok(cost)
    }
}

/// Cumulative completion times `t_wall[r][m]` for `m < horizon`. In
/// state-coupled mode `states[r][m]` is the start state of segment `m`.
pub fn simulate_wallclock<S>(
    model: &WallClockModel<S>,
    replicas: usize,
    horizon: usize,
    rng: &RngStream,
    states: Option<&[Vec<S>]>,
) -> Result<Vec<Vec<f64>>> {
    if horizon == 0 {
        return Err(Error::InvalidInput("wall-clock horizon must be at least 1".into()));
    }
    model.check(replicas)?;
    (0..replicas)
        .map(|r| {
            let mut stream = rng.derive(purpose::WALL_CLOCK, r as u64);
            let mut t = 0.0;
            (0..horizon)
                .map(|m| {
                    let state = states.and_then(|s| s.get(r)).and_then(|row| row.get(m));
                    t += model.segment_cost(r, state, &mut stream)?;
                    Ok(t)
                })
                .collect()
        })
        .collect()
}

/// Ordering read off a finite completion-time table.
#[derive(Clone, Debug)]
pub struct TablePlan {
    entries: Vec<(f64, OrderEntry)>,
    valid: usize,
    pos: usize,
    ties: usize,
}

/// Sort a completion-time table (`table[r][m]`, replica 0-based) into an
/// ordering. Equal times go to the smaller replica index.
pub fn make_wallclock_plan(table: &[Vec<f64>]) -> Result<TablePlan> {
    if table.is_empty() || table.iter().any(|row| row.is_empty()) {
        return Err(Error::InvalidInput("wall-clock table needs at least one segment per replica".into()));
    }
    for (r, row) in table.iter().enumerate() {
        if let Some(m) = row.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::MonotonicityViolation {
                replica: r + 1,
                segment: m + 1,
            });
        }
    }
    let mut entries: Vec<(f64, OrderEntry)> = table
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(m, &t)| (t, OrderEntry::new(r + 1, m as u64))))
        .collect();
    entries.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.replica.cmp(&b.1.replica))
            .then(a.1.segment.cmp(&b.1.segment))
    });
    let ties = entries.windows(2).filter(|w| w[0].0 == w[1].0).count();
    if ties > 0 {
        log::warn!("{ties} equal wall-clock times broken by replica index");
    }
    // Beyond the earliest last-listed time, unlisted segments could come first.
    let horizon = table.iter().map(|row| *row.last().unwrap()).fold(f64::INFINITY, f64::min);
    let valid = entries.partition_point(|e| e.0 <= horizon);
    Ok(TablePlan {
        entries,
        valid,
        pos: 0,
        ties,
    })
}

impl TablePlan {
    /// Full sorted sequence, including entries past the valid prefix.
    pub fn sequence(&self) -> Vec<OrderEntry> {
        self.entries.iter().map(|e| e.1).collect()
    }

    /// Length of the prefix that is fixed regardless of unlisted segments.
    pub fn valid_len(&self) -> usize {
        self.valid
    }

    pub fn ties(&self) -> usize {
        self.ties
    }

    /// Replace the table with a longer one, keeping the read position.
    pub fn extend(&mut self, table: &[Vec<f64>]) -> Result<()> {
        let pos = self.pos;
        let fresh = make_wallclock_plan(table)?;
        if fresh.entries[..pos.min(fresh.entries.len())]
            .iter()
            .zip(&self.entries[..pos])
            .any(|(a, b)| a.1 != b.1)
            || fresh.valid < pos
        {
            return Err(Error::InvalidInput("extended table reorders consumed entries".into()));
        }
        *self = TablePlan { pos, ..fresh };
        Ok(())
    }
}

impl<S> OrderingPlan<S> for TablePlan {
    fn mode(&self) -> PlanMode {
        PlanMode::Wallclock
    }

    fn next_entry<Src: FragmentSource<S>>(&mut self, _source: &mut Src) -> Result<OrderEntry> {
        if self.pos >= self.valid {
            return Err(Error::SourceExhausted { consumed: self.pos });
        }
        self.pos += 1;
        Ok(self.entries[self.pos - 1].1)
    }

    fn completion_time(&self) -> f64 {
        if self.pos == 0 {
            0.0
        } else {
            self.entries[self.pos - 1].0
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    time: f64,
    entry: OrderEntry,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so the max-heap pops the earliest time, then the lowest replica.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.entry.replica.cmp(&self.entry.replica))
    }
}

/// Wall-clock ordering generated on demand by merging per-replica completion
/// times. Draws the same costs as [`simulate_wallclock`] with the same stream.
#[derive(Debug)]
pub struct LazyWallClockPlan<S> {
    model: WallClockModel<S>,
    streams: Vec<RngStream>,
    clocks: Vec<f64>,
    heap: BinaryHeap<Pending>,
    started: bool,
    last: f64,
    ties: usize,
}

impl<S: Clone> LazyWallClockPlan<S> {
    pub fn new(model: WallClockModel<S>, replicas: usize, rng: &RngStream) -> Result<Self> {
        Self::with_options(model, replicas, rng, false)
    }

    /// `allow_nondeterministic` must be set to use measured host time.
    pub fn with_options(
        model: WallClockModel<S>,
        replicas: usize,
        rng: &RngStream,
        allow_nondeterministic: bool,
    ) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::InvalidInput("a plan needs at least one replica".into()));
        }
        if matches!(model, WallClockModel::MeasuredHostTime) && !allow_nondeterministic {
            return Err(Error::InvalidInput(
                "measured host time is nondeterministic and must be enabled explicitly".into(),
            ));
        }
        model.check(replicas)?;
        Ok(LazyWallClockPlan {
            model,
            streams: (0..replicas).map(|r| rng.derive(purpose::WALL_CLOCK, r as u64)).collect(),
            clocks: vec![0.0; replicas],
            heap: BinaryHeap::with_capacity(replicas),
            started: false,
            last: 0.0,
            ties: 0,
        })
    }

    pub fn ties(&self) -> usize {
        self.ties
    }

    fn schedule<Src: FragmentSource<S>>(&mut self, r: usize, segment: u64, source: &mut Src) -> Result<()> {
        let cost = match &self.model {
            WallClockModel::StateCoupledInvalid(_) => {
                let state = source.start_state(r + 1, segment)?;
                self.model.segment_cost(r, Some(&state), &mut self.streams[r])?
            }
            WallClockModel::MeasuredHostTime => {
                let clock = Instant::now();
                source.start_state(r + 1, segment + 1)?;
                clock.elapsed().as_secs_f64().max(f64::MIN_POSITIVE)
            }
            model => model.segment_cost(r, None, &mut self.streams[r])?,
        };
        self.clocks[r] += cost;
        self.heap.push(Pending {
            time: self.clocks[r],
            entry: OrderEntry::new(r + 1, segment),
        });
        Ok(())
    }
}

impl<S: Clone> OrderingPlan<S> for LazyWallClockPlan<S> {
    fn mode(&self) -> PlanMode {
        PlanMode::Wallclock
    }

    fn next_entry<Src: FragmentSource<S>>(&mut self, source: &mut Src) -> Result<OrderEntry> {
        if !self.started {
            self.started = true;
            for r in 0..self.clocks.len() {
                self.schedule(r, 0, source)?;
            }
        }
        let next = self.heap.pop().expect("one pending entry per replica");
        if self.heap.peek().is_some_and(|p| p.time == next.time) {
            if self.ties == 0 {
                log::warn!("equal wall-clock times broken by replica index");
            }
            self.ties += 1;
        }
        self.schedule(next.entry.replica - 1, next.entry.segment + 1, source)?;
        self.last = next.time;
        Ok(next.entry)
    }

    fn completion_time(&self) -> f64 {
        self.last
    }
}

/// Realization of one splicing step.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelStepResult<S> {
    /// Sum of per-fragment accumulations over fragments `1..=L`.
    pub g_par: f64,
    /// Native time `t_1 + ... + t_{L-1} + T_L`.
    pub t_par: f64,
    /// Physical time of the spliced path.
    pub physical_time: f64,
    pub x_par: S,
    /// 1-based index of the escaping fragment.
    pub l: usize,
    pub fragments_consumed: usize,
    /// Native steps in the spliced fragments `1..=L`.
    pub spliced_steps: u64,
    /// The same, split by replica (0-based index).
    pub replica_steps: Vec<u64>,
    pub escaping: OrderEntry,
    /// Wall-clock completion time of fragment `L` under the plan.
    pub wall_time: f64,
}

/// Resumable splicing state: feed fragments in plan order until one escapes.
#[derive(Clone, Debug)]
pub struct Splicer {
    g: f64,
    t: f64,
    physical: f64,
    consumed: usize,
    steps: u64,
    replica_steps: Vec<u64>,
    next_segment: Vec<u64>,
}

impl Splicer {
    pub fn new(replicas: usize) -> Self {
        Splicer {
            g: 0.0,
            t: 0.0,
            physical: 0.0,
            consumed: 0,
            steps: 0,
            replica_steps: vec![0; replicas],
            next_segment: vec![0; replicas],
        }
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Consume entries from `plan` until an escape. On `SourceExhausted` the
    /// state is kept, and `run` can be called again once the plan is extended.
    pub fn run<S, Src, P>(&mut self, source: &mut Src, plan: &mut P) -> Result<ParallelStepResult<S>>
    where
        Src: FragmentSource<S>,
        P: OrderingPlan<S>,
    {
        loop {
            let entry = plan.next_entry(source)?;
            let idx = entry
                .replica
                .checked_sub(1)
                .filter(|&i| i < self.next_segment.len())
                .ok_or_else(|| Error::InvalidInput(format!("plan names unknown replica {}", entry.replica)))?;
            if entry.segment != self.next_segment[idx] {
                return Err(Error::OrderViolation {
                    replica: entry.replica,
                    segment: entry.segment,
                    expected: self.next_segment[idx],
                });
            }
            self.next_segment[idx] += 1;
            let fragment = source.fragment(entry.replica, entry.segment)?;
            self.consumed += 1;
            self.steps += fragment.native_steps;
            self.replica_steps[idx] += fragment.native_steps;
            self.g += fragment.g_accum;
            self.t += fragment.contributed_time();
            self.physical += fragment.physical_time;
            if let Some(exit) = fragment.exit {
                return Ok(ParallelStepResult {
                    g_par: self.g,
                    t_par: self.t,
                    physical_time: self.physical,
                    x_par: exit.state,
                    l: self.consumed,
                    fragments_consumed: self.consumed,
                    spliced_steps: self.steps,
                    replica_steps: self.replica_steps.clone(),
                    escaping: entry,
                    wall_time: plan.completion_time(),
                });
            }
        }
    }
}

/// Splice fragments in plan order and stop at the first escape. Fragments
/// after the escaping one are never requested.
pub fn general_parallel_step<S, Src, P>(source: &mut Src, plan: &mut P) -> Result<ParallelStepResult<S>>
where
    Src: FragmentSource<S>,
    P: OrderingPlan<S>,
{
    Splicer::new(source.replicas()).run(source, plan)
}

#[derive(Debug)]
struct Replica<S> {
    start: S,
    state: S,
    next_segment: u64,
    stream: RngStream,
    lookahead: VecDeque<Fragment<S>>,
}

/// Replicas of a model started from given states, each cut into fragments
/// of native length `dt`. Replica `r` draws from stream `(PARALLEL_STEP, r - 1)`.
pub struct ReplicaPool<'a, M: MarkovModel, G: ?Sized, O: ?Sized> {
    model: &'a M,
    region: &'a G,
    g: &'a O,
    dt: f64,
    options: SegmentOptions,
    replicas: Vec<Replica<M::State>>,
    native_steps: u64,
}

impl<'a, M, G, O> ReplicaPool<'a, M, G, O>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    O: Observable<M::State> + ?Sized,
{
    pub fn new(model: &'a M, region: &'a G, g: &'a O, starts: Vec<M::State>, dt: f64, rng: &RngStream) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::InvalidInput("replica pool needs at least one start".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("fragment length must be positive, got {dt}")));
        }
        let replicas = starts
            .into_iter()
            .enumerate()
            .map(|(i, s)| Replica {
                start: s.clone(),
                state: s,
                next_segment: 0,
                stream: rng.derive(purpose::PARALLEL_STEP, i as u64),
                lookahead: VecDeque::new(),
            })
            .collect();
        Ok(ReplicaPool {
            model,
            region,
            g,
            dt,
            options: SegmentOptions::default(),
            replicas,
            native_steps: 0,
        })
    }

    pub fn record_paths(mut self, on: bool) -> Self {
        self.options.record_path = on;
        self
    }

    /// Native steps simulated so far, including lookahead.
    pub fn native_steps(&self) -> u64 {
        self.native_steps
    }

    fn generate(&mut self, idx: usize) -> Result<Fragment<M::State>> {
        let rep = &mut self.replicas[idx];
        let mut f = evolve_segment(self.model, self.region, &rep.state, self.dt, self.g, &mut rep.stream, self.options)?;
        f.replica = idx + 1;
        f.segment = rep.next_segment;
        rep.state = f.end.clone();
        rep.next_segment += 1;
        self.native_steps += f.native_steps;
        Ok(f)
    }

    fn index(&self, replica: usize) -> Result<usize> {
        replica
            .checked_sub(1)
            .filter(|&i| i < self.replicas.len())
            .ok_or_else(|| Error::InvalidInput(format!("unknown replica {replica}")))
    }
}

impl<M, G, O> FragmentSource<M::State> for ReplicaPool<'_, M, G, O>
where
    M: MarkovModel,
    G: Region<M::State> + ?Sized,
    O: Observable<M::State> + ?Sized,
{
    fn replicas(&self) -> usize {
        self.replicas.len()
    }

    fn fragment(&mut self, replica: usize, segment: u64) -> Result<Fragment<M::State>> {
        let idx = self.index(replica)?;
        let rep = &mut self.replicas[idx];
        if let Some(front) = rep.lookahead.front() {
            if front.segment == segment {
                return Ok(rep.lookahead.pop_front().unwrap());
            }
        } else if rep.next_segment == segment {
            return self.generate(idx);
        }
        Err(Error::OrderViolation {
            replica,
            segment,
            expected: rep.lookahead.front().map_or(rep.next_segment, |f| f.segment),
        })
    }

    fn start_state(&mut self, replica: usize, segment: u64) -> Result<M::State> {
        let idx = self.index(replica)?;
        if segment == 0 {
            return Ok(self.replicas[idx].start.clone());
        }
        // After an exit the replica keeps going from its exit state; only
        // cost models that peek at the future ever look there.
        while self.replicas[idx].next_segment < segment {
            let f = self.generate(idx)?;
            self.replicas[idx].lookahead.push_back(f);
        }
        let rep = &self.replicas[idx];
        match rep.lookahead.iter().find(|f| f.segment + 1 == segment) {
            Some(f) => Ok(f.end.clone()),
            None if rep.next_segment == segment => Ok(rep.state.clone()),
            None => Err(Error::OrderViolation {
                replica,
                segment,
                expected: rep.next_segment,
            }),
        }
    }
}

/// Synthetic fragments whose exit times are i.i.d. Geometric(`p`) on
/// `{1, 2, ...}`, restarted afresh in every fragment of length `len`.
pub struct GeometricFragments {
    p: f64,
    len: u64,
    streams: Vec<RngStream>,
}

impl GeometricFragments {
    pub fn new(p: f64, len: u64, replicas: usize, rng: &RngStream) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) || len == 0 || replicas == 0 {
            return Err(Error::InvalidInput(format!("bad synthetic source p={p} len={len} R={replicas}")));
        }
        Ok(GeometricFragments {
            p,
            len,
            streams: (0..replicas).map(|r| rng.derive(purpose::SYNTHETIC, r as u64)).collect(),
        })
    }

    fn draw(&mut self, idx: usize) -> u64 {
        // Inversion: ceil(ln U / ln(1 - p)), U in (0, 1].
        if self.p == 1.0 {
            return 1;
        }
        let u = 1.0 - self.streams[idx].random::<f64>();
        (u.ln() / (1.0 - self.p).ln()).ceil().max(1.0) as u64
    }
}

impl FragmentSource<()> for GeometricFragments {
    fn replicas(&self) -> usize {
        self.streams.len()
    }

    fn fragment(&mut self, replica: usize, segment: u64) -> Result<Fragment<()>> {
        let tau = self.draw(replica - 1);
        let len = self.len as f64;
        let exit = (tau <= self.len).then(|| crate::process::EscapeEvent {
            time: tau as f64,
            state: (),
        });
        let contributed = exit.as_ref().map_or(len, |e| e.time);
        Ok(Fragment {
            order_index: 0,
            replica,
            segment,
            duration: len,
            start: (),
            path: Vec::new(),
            exit,
            end: (),
            g_accum: contributed,
            physical_time: contributed,
            native_steps: contributed as u64,
        })
    }

    fn start_state(&mut self, _replica: usize, _segment: u64) -> Result<()> {
        Ok(())
    }
}

/// Check surjectivity onto a prefix, per-replica monotonicity and the
/// predecessor property of a finite ordering prefix.
pub fn validate_prefix(entries: &[OrderEntry], replicas: usize) -> Result<()> {
    let mut next = vec![0u64; replicas];
    for e in entries {
        let idx = e
            .replica
            .checked_sub(1)
            .filter(|&i| i < replicas)
            .ok_or_else(|| Error::InvalidInput(format!("unknown replica {}", e.replica)))?;
        if e.segment != next[idx] {
            return Err(Error::OrderViolation {
                replica: e.replica,
                segment: e.segment,
                expected: next[idx],
            });
        }
        next[idx] += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::EscapeEvent;
    use crate::toy::{unit_pair, RandomWalk};
    use proptest::prelude::*;

    /// Fragments scripted per replica as exit times (`None` = survives).
    struct Scripted {
        len: f64,
        exits: Vec<Vec<Option<f64>>>,
    }

    impl FragmentSource<u32> for Scripted {
        fn replicas(&self) -> usize {
            self.exits.len()
        }

        fn fragment(&mut self, replica: usize, segment: u64) -> Result<Fragment<u32>> {
            let exit = self.exits[replica - 1][segment as usize];
            Ok(Fragment {
                order_index: 0,
                replica,
                segment,
                duration: self.len,
                start: 0,
                path: vec![],
                exit: exit.map(|t| EscapeEvent { time: t, state: 99 }),
                end: if exit.is_some() { 99 } else { 0 },
                g_accum: exit.unwrap_or(self.len),
                physical_time: exit.unwrap_or(self.len),
                native_steps: 0,
            })
        }

        fn start_state(&mut self, _r: usize, _m: u64) -> Result<u32> {
            Ok(0)
        }
    }

    #[test]
    fn synchronous_plan_formulas() {
        let plan = make_synchronous_plan(3).unwrap();
        assert_eq!(plan.entry(1), OrderEntry::new(1, 0));
        assert_eq!(plan.entry(4), OrderEntry::new(1, 1));
        assert_eq!(plan.entry(6), OrderEntry::new(3, 1));
        assert!(make_synchronous_plan(0).is_err());
    }

    #[test]
    fn wallclock_plan_interleaves() {
        let plan = make_wallclock_plan(&[vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]]).unwrap();
        let seq: Vec<(usize, u64)> = plan.sequence().iter().map(|e| (e.replica, e.segment)).collect();
        assert_eq!(seq, vec![(1, 0), (2, 0), (1, 1), (2, 1), (1, 2), (2, 2)]);
        assert_eq!(plan.valid_len(), 5);
    }

    #[test]
    fn wallclock_plan_fast_replica_leads() {
        let plan = make_wallclock_plan(&[vec![1.0, 2.0, 3.0], vec![10.0, 11.0, 12.0]]).unwrap();
        let seq: Vec<(usize, u64)> = plan.sequence().iter().map(|e| (e.replica, e.segment)).collect();
        assert_eq!(&seq[..4], &[(1, 0), (1, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn wallclock_tie_goes_to_lower_replica() {
        let plan = make_wallclock_plan(&[vec![1.0, 2.0], vec![1.0, 3.0]]).unwrap();
        assert_eq!(plan.sequence()[0], OrderEntry::new(1, 0));
        assert_eq!(plan.ties(), 1);
    }

    #[test]
    fn wallclock_rejects_decreasing_times() {
        let err = make_wallclock_plan(&[vec![1.0, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::MonotonicityViolation { replica: 1, segment: 1 }));
    }

    #[test]
    fn unit_costs_reproduce_synchronous_order() {
        let table = simulate_wallclock::<i64>(&WallClockModel::Unit, 4, 5, &RngStream::root(0), None).unwrap();
        assert!(table.iter().all(|row| row.iter().enumerate().all(|(m, &t)| t == (m + 1) as f64)));
        let plan = make_wallclock_plan(&table).unwrap();
        let sync = make_synchronous_plan(4).unwrap();
        for (k, e) in plan.sequence().iter().enumerate() {
            assert_eq!(*e, sync.entry(k as u64 + 1));
        }
    }

    #[test]
    fn lazy_plan_matches_table_plan() {
        let rng = RngStream::root(77);
        let model = WallClockModel::<()>::ReplicaHeterogeneous { speeds: vec![1.0, 2.0, 4.0] };
        let table = simulate_wallclock(&model, 3, 40, &rng, None).unwrap();
        let mut table_plan = make_wallclock_plan(&table).unwrap();
        let mut lazy = LazyWallClockPlan::new(model, 3, &rng).unwrap();
        let mut src = GeometricFragments::new(0.5, 1, 3, &rng).unwrap();
        for _ in 0..table_plan.valid_len() {
            let a = OrderingPlan::<()>::next_entry(&mut table_plan, &mut src).unwrap();
            let b = lazy.next_entry(&mut src).unwrap();
            assert_eq!(a, b);
            assert_eq!(OrderingPlan::<()>::completion_time(&table_plan), OrderingPlan::<()>::completion_time(&lazy));
        }
    }

    #[test]
    fn state_coupled_costs_put_zero_states_first() {
        fn cost(s: &i64) -> f64 {
            if *s == 0 {
                1.0
            } else {
                2.0
            }
        }
        let states = vec![vec![1i64], vec![0], vec![1], vec![0]];
        let table = simulate_wallclock(&WallClockModel::StateCoupledInvalid(cost), 4, 1, &RngStream::root(0), Some(&states)).unwrap();
        let plan = make_wallclock_plan(&table).unwrap();
        let first: Vec<usize> = plan.sequence().iter().take(2).map(|e| e.replica).collect();
        assert_eq!(first, vec![2, 4]);
    }

    #[test]
    fn measured_mode_needs_opt_in() {
        let rng = RngStream::root(0);
        assert!(LazyWallClockPlan::<i64>::new(WallClockModel::MeasuredHostTime, 2, &rng).is_err());
        assert!(LazyWallClockPlan::<i64>::with_options(WallClockModel::MeasuredHostTime, 2, &rng, true).is_ok());
    }

    #[test]
    fn first_fragment_escape() {
        let mut src = Scripted {
            len: 2.0,
            exits: vec![vec![Some(1.5)], vec![None]],
        };
        let mut plan = make_synchronous_plan(2).unwrap();
        let out = general_parallel_step(&mut src, &mut plan).unwrap();
        assert_eq!((out.l, out.t_par, out.x_par), (1, 1.5, 99));
    }

    #[test]
    fn splice_time_formula() {
        let mut src = Scripted {
            len: 2.0,
            exits: vec![vec![None, Some(1.0)], vec![None, None]],
        };
        let mut plan = make_synchronous_plan(2).unwrap();
        let out = general_parallel_step(&mut src, &mut plan).unwrap();
        assert_eq!(out.l, 3);
        assert_eq!(out.t_par, 5.0);
        assert_eq!(out.g_par, out.t_par);
        assert_eq!(out.escaping, OrderEntry::new(1, 1));
    }

    #[test]
    fn exhausted_table_can_be_resumed() {
        let mut src = Scripted {
            len: 1.0,
            exits: vec![vec![None, None, Some(1.0)]],
        };
        let mut plan = make_wallclock_plan(&[vec![1.0, 2.0]]).unwrap();
        let mut splicer = Splicer::new(1);
        let err = splicer.run(&mut src, &mut plan).unwrap_err();
        assert!(matches!(err, Error::SourceExhausted { consumed: 2 }));
        plan.extend(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let out = splicer.run(&mut src, &mut plan).unwrap();
        assert_eq!((out.l, out.t_par), (3, 3.0));
    }

    #[test]
    fn unit_observable_gives_t_par() {
        let root = RngStream::root(5);
        for i in 0..200 {
            let rng = root.derive(purpose::REPETITION, i);
            let g = crate::process::UNIT;
            let region = unit_pair();
            let mut pool = ReplicaPool::new(&RandomWalk, &region, &g, vec![0, 1, 1], 2.0, &rng).unwrap();
            let mut plan = LazyWallClockPlan::new(WallClockModel::IidExponential { mean: 1.0 }, 3, &rng).unwrap();
            let out = general_parallel_step(&mut pool, &mut plan).unwrap();
            assert_eq!(out.g_par, out.t_par);
            assert!(out.x_par == -1 || out.x_par == 2);
        }
    }

    #[test]
    fn pool_start_state_lookahead_is_consistent() {
        let rng = RngStream::root(3);
        let region = crate::toy::IntegerInterval::new(-50, 50);
        let g = crate::process::UNIT;
        let mut a = ReplicaPool::new(&RandomWalk, &region, &g, vec![0, 0], 3.0, &rng).unwrap();
        let mut b = ReplicaPool::new(&RandomWalk, &region, &g, vec![0, 0], 3.0, &rng).unwrap();
        let s2 = a.start_state(1, 2).unwrap();
        let f0 = b.fragment(1, 0).unwrap();
        let f1 = b.fragment(1, 1).unwrap();
        assert_eq!(s2, f1.end);
        assert_eq!(a.fragment(1, 0).unwrap(), f0);
        assert_eq!(a.fragment(1, 1).unwrap(), f1);
        assert!(a.fragment(1, 3).is_err());
    }

    proptest! {
        #[test]
        fn random_tables_give_valid_orderings(seed in any::<u64>(), replicas in 1usize..6, horizon in 1usize..30) {
            let rng = RngStream::root(seed);
            let table = simulate_wallclock::<()>(&WallClockModel::IidExponential { mean: 1.0 }, replicas, horizon, &rng, None).unwrap();
            for row in &table {
                prop_assert!(row.windows(2).all(|w| w[0] < w[1]));
            }
            let plan = make_wallclock_plan(&table).unwrap();
            let seq = plan.sequence();
            prop_assert_eq!(seq.len(), replicas * horizon);
            prop_assert!(validate_prefix(&seq, replicas).is_ok());
        }

        #[test]
        fn synchronous_predecessor_property(replicas in 1usize..10, len in 1u64..200) {
            let plan = make_synchronous_plan(replicas).unwrap();
            let seq: Vec<OrderEntry> = (1..=len).map(|k| plan.entry(k)).collect();
            prop_assert!(validate_prefix(&seq, replicas).is_ok());
        }
    }
}
