//! Simple random walk on the integers, the test bed where every quantity of
//! interest has a closed form.
//!
//! From the uniform distribution on the two-point region `{0, 1}` each step
//! leaves with probability 1/2, so the exit time is Geometric(1/2) and
//! independent of the exit point, which is `-1` or `2` with equal odds.

use rand::Rng;

use crate::error::Result;
use crate::process::{MarkovModel, Piece, Region, TimeAxis};

/// Symmetric +-1 walk on `i64`. The sign is the top bit of one 32-bit draw.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomWalk;

impl MarkovModel for RandomWalk {
    type State = i64;

    fn time_axis(&self) -> TimeAxis {
        TimeAxis::Discrete
    }

    fn advance<R: Rng + ?Sized>(&self, state: &i64, _horizon: f64, rng: &mut R) -> Result<Piece<i64>> {
        let up = rng.next_u32() >> 31 == 1;
        Ok(Piece {
            elapsed: 1.0,
            end: if up { state + 1 } else { state - 1 },
        })
    }
}

/// Inclusive integer interval `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerInterval {
    pub lo: i64,
    pub hi: i64,
    label: String,
}

impl IntegerInterval {
    pub fn new(lo: i64, hi: i64) -> Self {
        assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        IntegerInterval {
            lo,
            hi,
            label: format!("[{lo},{hi}]"),
        }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> impl Iterator<Item = i64> {
        self.lo..=self.hi
    }
}

impl Region<i64> for IntegerInterval {
    fn contains(&self, state: &i64) -> bool {
        (self.lo..=self.hi).contains(state)
    }

    fn label(&self) -> &str {
        &self.label
    }
}

/// The two-point region `{0, 1}` whose QSD is uniform.
pub fn unit_pair() -> IntegerInterval {
    IntegerInterval::new(0, 1)
}

/// Exact `P(T = t, X(T) = x)` for the walk started uniformly on `{0, 1}`:
/// `(1/2)^t * 1/2` for `x` in `{-1, 2}`.
pub fn pair_exit_probability(t: u64, x: i64) -> f64 {
    if t == 0 || !(x == -1 || x == 2) {
        return 0.0;
    }
    0.5f64.powi(t as i32) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn steps_are_unit_and_balanced() {
        let mut rng = RngStream::root(5);
        let n = 100_000;
        let mut ups = 0;
        for _ in 0..n {
            let p = RandomWalk.advance(&0, 1.0, &mut rng).unwrap();
            assert_eq!(p.elapsed, 1.0);
            assert!(p.end == 1 || p.end == -1);
            ups += (p.end == 1) as u32;
        }
        let z = (ups as f64 - n as f64 / 2.0) / (n as f64 / 4.0).sqrt();
        assert!(z.abs() < 4.0, "z = {z}");
    }

    #[test]
    fn exit_law_sums_to_one() {
        let total: f64 = (1..60).flat_map(|t| [-1, 2].map(|x| pair_exit_probability(t, x))).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(pair_exit_probability(1, 0), 0.0);
    }

    #[test]
    fn interval_membership() {
        let u = unit_pair();
        assert!(u.contains(&0) && u.contains(&1));
        assert!(!u.contains(&-1) && !u.contains(&2));
        assert_eq!(u.len(), 2);
        assert_eq!(u.label(), "[0,1]");
    }
}
