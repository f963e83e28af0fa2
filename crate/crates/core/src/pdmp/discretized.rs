//! Time discretization of the lifted Metropolis PDMP.
//!
//! From `(x, k)` the chain moves to `(x + d_k dt, k)` with probability
//! `p = min_l exp(beta V(x) - beta V(x + (d_k + ... + d_{k+l}) dt))` and
//! otherwise turns to `(x, k - 1)`. It leaves `exp(-beta V)` invariant for
//! every `dt`.

use rand::Rng;

use super::lifted::{LiftedMetropolisPdmp, LiftedState, Potential};
use super::torus::{fixed_delta, TorusPoint};
use crate::error::{Error, Result};
use crate::process::{MarkovModel, Piece, TimeAxis};

#[derive(Clone, Debug)]
pub struct DiscretizedChain<V> {
    pub base: LiftedMetropolisPdmp<V>,
    pub dt: f64,
    /// Fixed-point offsets of `(d_k + ... + d_{k+l}) dt`, built as running
    /// sums of the single-step offsets so shared prefixes agree bit for bit.
    offsets: Vec<Vec<[u64; 2]>>,
    separable: bool,
}

impl<V: Potential> DiscretizedChain<V> {
    pub fn new(base: LiftedMetropolisPdmp<V>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let n = base.n();
        let single: Vec<[u64; 2]> = base
            .directions()
            .iter()
            .map(|d| [fixed_delta(d[0] * dt), fixed_delta(d[1] * dt)])
            .collect();
        let offsets = (0..n)
            .map(|k| {
                let mut acc = [0u64, 0u64];
                (0..n)
                    .map(|l| {
                        let s = single[(k + l) % n];
                        acc = [acc[0].wrapping_add(s[0]), acc[1].wrapping_add(s[1])];
                        acc
                    })
                    .collect()
            })
            .collect();
        let separable = base.potential.separable_term(0.0).is_some();
        Ok(DiscretizedChain {
            base,
            dt,
            offsets,
            separable,
        })
    }

    /// Acceptance probability `A_k(x)`.
    pub fn acceptance(&self, pos: &TorusPoint, k: usize) -> f64 {
        if self.separable {
            return self.separable_acceptance(pos, k);
        }
        let v0 = self.base.potential.value(pos.coords());
        let vmax = self.offsets[k]
            .iter()
            .map(|&o| {
                if o == [0, 0] {
                    v0
                } else {
                    self.base.potential.value(pos.shift(o).coords())
                }
            })
            .fold(f64::NEG_INFINITY, f64::max);
        (self.base.beta * (v0 - vmax)).exp()
    }

    /// Same value as the general path, reusing one-dimensional terms: the
    /// shifted points share few distinct coordinates.
    fn separable_acceptance(&self, pos: &TorusPoint, k: usize) -> f64 {
        let pot = &self.base.potential;
        let term = |u: u64| pot.separable_term(TorusPoint { x: u, y: 0 }.coords()[0]).unwrap_or(f64::NAN);
        // The offsets of one direction touch at most a handful of distinct
        // coordinates per axis.
        let mut xs = [(0u64, 0.0f64); 8];
        let mut ys = [(0u64, 0.0f64); 8];
        let (mut nx, mut ny) = (0usize, 0usize);
        let lookup = |cache: &mut [(u64, f64); 8], len: &mut usize, u: u64| {
            if let Some(e) = cache[..*len].iter().find(|e| e.0 == u) {
                return e.1;
            }
            let v = term(u);
            if *len < cache.len() {
                cache[*len] = (u, v);
                *len += 1;
            }
            v
        };
        let v0 = lookup(&mut xs, &mut nx, pos.x) + lookup(&mut ys, &mut ny, pos.y);
        let mut vmax = f64::NEG_INFINITY;
        for &o in &self.offsets[k] {
            let v = if o == [0, 0] {
                v0
            } else {
                let p = pos.shift(o);
                lookup(&mut xs, &mut nx, p.x) + lookup(&mut ys, &mut ny, p.y)
            };
            vmax = vmax.max(v);
        }
        (self.base.beta * (v0 - vmax)).exp()
    }

    /// Position after one accepted move in direction `k`.
    pub fn moved(&self, pos: &TorusPoint, k: usize) -> TorusPoint {
        pos.shift(self.offsets[k][0])
    }

    /// One step of the chain.
    pub fn step<R: Rng + ?Sized>(&self, z: &LiftedState, rng: &mut R) -> LiftedState {
        let k = z.k as usize;
        let p = self.acceptance(&z.pos, k);
        if rng.random::<f64>() < p {
            LiftedState {
                pos: self.moved(&z.pos, k),
                k: z.k,
            }
        } else {
            let n = self.base.n() as u8;
            LiftedState {
                pos: z.pos,
                k: (z.k + n - 1) % n,
            }
        }
    }
}

impl<V: Potential> MarkovModel for DiscretizedChain<V> {
    type State = LiftedState;

    fn time_axis(&self) -> TimeAxis {
        TimeAxis::Continuous
    }

    fn lattice_step(&self) -> Option<f64> {
        Some(self.dt)
    }

    fn advance<R: Rng + ?Sized>(&self, state: &LiftedState, _horizon: f64, rng: &mut R) -> Result<Piece<LiftedState>> {
        Ok(Piece {
            elapsed: self.dt,
            end: self.step(state, rng),
        })
    }
}

/// `pi(x + d_k dt, k) - pi(x, k) A_k(x) - pi(x + d_k dt, k + 1) (1 - A_{k+1}(x + d_k dt))`
/// with `pi = exp(-beta V)`. The probability flowing into `(x + d_k dt, k)`
/// balances its weight, so this vanishes.
pub fn discrete_invariance_residual<V: Potential>(chain: &DiscretizedChain<V>, x: TorusPoint, k: usize) -> f64 {
    let n = chain.base.n();
    let beta = chain.base.beta;
    let pi = |p: &TorusPoint| (-beta * chain.base.potential.value(p.coords())).exp();
    let y = chain.moved(&x, k);
    let kp = (k + 1) % n;
    pi(&y) - pi(&x) * chain.acceptance(&x, k) - pi(&y) * (1.0 - chain.acceptance(&y, kp))
}
