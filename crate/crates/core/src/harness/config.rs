//! Run configuration from flat `key = value` files.
//!
//! Keys carry their unit in the name (`_time` for physical time, `_steps`
//! for skeleton steps, `_units` for wall-clock cost units, `_records` for
//! trace records). Lists are comma separated. `#` starts a comment. Unknown
//! keys and repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdmp::{axis_directions, BasinScheme};
use crate::qsd::DephasingMethod;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Skeleton chain, synchronous parallel steps.
    SkeletonSync,
    /// Skeleton chain, wall-clock parallel steps.
    SkeletonAsync,
    /// Time-discretized process, synchronous parallel steps.
    ContinuousSync,
    /// Time-discretized process, wall-clock parallel steps.
    ContinuousAsync,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::SkeletonSync,
        Algorithm::SkeletonAsync,
        Algorithm::ContinuousSync,
        Algorithm::ContinuousAsync,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SkeletonSync => "skeleton_sync",
            Algorithm::SkeletonAsync => "skeleton_async",
            Algorithm::ContinuousSync => "continuous_sync",
            Algorithm::ContinuousAsync => "continuous_async",
        }
    }

    pub fn is_skeleton(self) -> bool {
        matches!(self, Algorithm::SkeletonSync | Algorithm::SkeletonAsync)
    }

    pub fn is_wallclock(self) -> bool {
        matches!(self, Algorithm::SkeletonAsync | Algorithm::ContinuousAsync)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// Observable averaged by the drivers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservableSpec {
    One,
    Basin(u8),
}

impl FromStr for ObservableSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(ObservableSpec::One),
            "w1" => Ok(ObservableSpec::Basin(1)),
            "w2" => Ok(ObservableSpec::Basin(2)),
            "w3" => Ok(ObservableSpec::Basin(3)),
            "w4" => Ok(ObservableSpec::Basin(4)),
            _ => Err(Error::Config(format!("unknown observable '{s}' (one, w1..w4)"))),
        }
    }
}

/// Virtual wall clock for the wall-clock algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WallClockSpec {
    Unit,
    IidExponential { mean: f64 },
    ReplicaHeterogeneous { speeds: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::Config(format!("unknown scale '{s}' (desk, paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithms: Vec<Algorithm>,
    pub beta: f64,
    pub potential_depth: f64,
    pub potential_tilt: f64,
    /// Time step of the discretized process.
    pub dt: f64,
    /// Fragment length of the continuous algorithms.
    pub window: f64,
    pub directions: Vec<[f64; 2]>,
    pub basins: BasinScheme,
    pub observable: ObservableSpec,
    pub replicas: Vec<usize>,
    /// Decorrelation times of the skeleton algorithms, in skeleton steps.
    pub t_corr_skeleton: Vec<f64>,
    /// Decorrelation times of the continuous algorithms, in physical time.
    pub t_corr_continuous: Vec<f64>,
    pub t_stop: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub wallclock: WallClockSpec,
    pub dephasing: DephasingMethod,
    pub start_position: [f64; 2],
    pub start_direction: u8,
    pub trace_cap: usize,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(scale: Scale) -> Self {
        let desk = RunConfig {
            algorithms: vec![Algorithm::SkeletonSync, Algorithm::ContinuousSync],
            beta: 3.0,
            potential_depth: 1.0,
            potential_tilt: 0.2,
            dt: 0.01,
            window: 0.01,
            directions: axis_directions(),
            basins: BasinScheme::Squares,
            observable: ObservableSpec::Basin(1),
            replicas: vec![1, 2, 4, 8],
            t_corr_skeleton: vec![25.0, 50.0, 100.0],
            t_corr_continuous: vec![1.5, 3.0, 6.0],
            t_stop: 1e5,
            repetitions: 20,
            seed: 1,
            wallclock: WallClockSpec::IidExponential { mean: 1.0 },
            dephasing: DephasingMethod::FlemingViot,
            start_position: [0.75, 0.75],
            start_direction: 0,
            trace_cap: crate::parrep::DEFAULT_TRACE_CAP,
            out_dir: None,
        };
        match scale {
            Scale::Desk => desk,
            Scale::Paper => RunConfig {
                replicas: vec![1, 10, 100],
                t_stop: 1e6,
                repetitions: 50,
                ..desk
            },
        }
    }

    /// The preset for `scale` overridden by the keys in `text`.
    pub fn parse(text: &str, scale: Scale) -> Result<Self> {
        let mut cfg = RunConfig::preset(scale);
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key '{key}' repeated", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, scale: Scale) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, scale)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "algorithms" => self.algorithms = list(value)?,
            "beta" => self.beta = scalar(key, value)?,
            "potential_depth" => self.potential_depth = scalar(key, value)?,
            "potential_tilt" => self.potential_tilt = scalar(key, value)?,
            "dt_time" => self.dt = scalar(key, value)?,
            "window_time" => self.window = scalar(key, value)?,
            "directions" => self.directions = directions(value)?,
            "basins" => {
                self.basins = match value {
                    "squares" => BasinScheme::Squares,
                    "descent" => BasinScheme::GradientDescent,
                    _ => return Err(Error::Config(format!("unknown basin scheme '{value}' (squares, descent)"))),
                }
            }
            "observable" => self.observable = value.parse()?,
            "replicas" => self.replicas = list(value)?,
            "t_corr_skeleton_steps" => self.t_corr_skeleton = list(value)?,
            "t_corr_continuous_time" => self.t_corr_continuous = list(value)?,
            "t_stop_time" => self.t_stop = scalar(key, value)?,
            "repetitions" => self.repetitions = scalar(key, value)?,
            "seed" => self.seed = scalar(key, value)?,
            "wallclock" => {
                self.wallclock = match value {
                    "unit" => WallClockSpec::Unit,
                    "iid_exponential" => WallClockSpec::IidExponential { mean: 1.0 },
                    "replica_heterogeneous" => WallClockSpec::ReplicaHeterogeneous { speeds: vec![1.0] },
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown wall clock '{value}' (unit, iid_exponential, replica_heterogeneous)"
                        )))
                    }
                }
            }
            "wallclock_mean_units" => {
                let mean = scalar(key, value)?;
                match &mut self.wallclock {
                    WallClockSpec::IidExponential { mean: m } => *m = mean,
                    _ => return Err(Error::Config("wallclock_mean_units needs wallclock = iid_exponential first".into())),
                }
            }
            "replica_speeds" => {
                let v = list(value)?;
                match &mut self.wallclock {
                    WallClockSpec::ReplicaHeterogeneous { speeds } => *speeds = v,
                    _ => {
                        return Err(Error::Config(
                            "replica_speeds needs wallclock = replica_heterogeneous first".into(),
                        ))
                    }
                }
            }
            "dephasing" => {
                self.dephasing = match value {
                    "fleming_viot" => DephasingMethod::FlemingViot,
                    "rejection" => DephasingMethod::Rejection,
                    _ => return Err(Error::Config(format!("unknown dephasing '{value}' (fleming_viot, rejection)"))),
                }
            }
            "start_position" => {
                let v: Vec<f64> = list(value)?;
                self.start_position = match v.as_slice() {
                    [x, y] => [*x, *y],
                    _ => return Err(Error::Config("start_position takes two coordinates".into())),
                }
            }
            "start_direction" => self.start_direction = scalar(key, value)?,
            "trace_cap_records" => self.trace_cap = scalar(key, value)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.algorithms.is_empty() || self.replicas.is_empty() {
            return fail("algorithms and replicas must be nonempty");
        }
        if self.algorithms.iter().any(|a| a.is_skeleton()) && self.t_corr_skeleton.is_empty() {
            return fail("t_corr_skeleton_steps must be nonempty");
        }
        if self.algorithms.iter().any(|a| !a.is_skeleton()) && self.t_corr_continuous.is_empty() {
            return fail("t_corr_continuous_time must be nonempty");
        }
        if self.replicas.contains(&0) {
            return fail("replicas must be >= 1");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return fail("beta must be finite and >= 0");
        }
        if !(self.dt > 0.0) || !(self.window > 0.0) || !(self.t_stop > 0.0) {
            return fail("dt_time, window_time and t_stop_time must be positive");
        }
        let steps = self.window / self.dt;
        if (steps.round() - steps).abs() > 1e-9 * steps || steps.round() < 1.0 {
            return fail("window_time must be a positive multiple of dt_time");
        }
        if self
            .t_corr_skeleton
            .iter()
            .chain(&self.t_corr_continuous)
            .any(|t| !(*t >= 0.0) || !t.is_finite())
        {
            return fail("decorrelation times must be finite and >= 0");
        }
        if self.repetitions == 0 {
            return fail("repetitions must be >= 1");
        }
        if self.start_direction as usize >= self.directions.len() {
            return fail("start_direction out of range");
        }
        match &self.wallclock {
            WallClockSpec::IidExponential { mean } if !(*mean > 0.0) => return fail("wallclock_mean_units must be positive"),
            WallClockSpec::ReplicaHeterogeneous { speeds } => {
                if speeds.is_empty() || speeds.iter().any(|s| !(*s > 0.0)) {
                    return fail("replica_speeds must be positive");
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn t_corr_grid(&self, algorithm: Algorithm) -> &[f64] {
        if algorithm.is_skeleton() {
            &self.t_corr_skeleton
        } else {
            &self.t_corr_continuous
        }
    }

    /// Native fragment length of `algorithm`: one step on the skeleton.
    pub fn fragment_length(&self, algorithm: Algorithm) -> f64 {
        if algorithm.is_skeleton() {
            1.0
        } else {
            self.window
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        e => e.to_string(),
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for {key}")))
}

fn list<T: FromStr>(value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| {
            let v = v.trim();
            v.parse().map_err(|_| Error::Config(format!("cannot parse list item '{v}'")))
        })
        .collect()
}

/// `axis`, or `dx:dy` pairs separated by commas.
fn directions(value: &str) -> Result<Vec<[f64; 2]>> {
    if value == "axis" {
        return Ok(axis_directions());
    }
    value
        .split(',')
        .map(|pair| {
            let (a, b) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("direction '{pair}' is not dx:dy")))?;
            Ok([scalar("directions", a.trim())?, scalar("directions", b.trim())?])
        })
        .collect()
}
