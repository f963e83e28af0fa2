//! Piecewise deterministic Markov processes.
//!
//! A PDMP follows a deterministic flow and jumps at the events of a Poisson
//! process with state-dependent rate. Its skeleton chain is the sequence of
//! post-jump states `xi_n` together with the holding times `theta_n` that
//! follow them; holding times are sampled exactly by thinning against a
//! constant rate bound.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{MarkovModel, Observable, Piece, Region, TimeAxis};

pub mod discretized;
pub mod lifted;
pub mod torus;

pub use discretized::{discrete_invariance_residual, DiscretizedChain};
pub use lifted::{
    axis_directions, lifted_rate_identity_residual, Basin, BasinIndicator, BasinScheme, DescentLabeler, FlatPotential, LiftedMetropolisPdmp,
    LiftedState, Potential, TiltedCosine,
};
pub use torus::{basin_label, TorusPoint};

/// Cap on the holding time, guarding against flows along which the rate
/// vanishes identically.
pub const DEFAULT_HOLDING_CAP: f64 = 1e6;

pub trait Pdmp: Sync {
    type State: Clone + Debug + PartialEq + Send + Sync;

    /// `psi(t, z)`.
    fn flow(&self, z: &Self::State, t: f64) -> Self::State;

    /// Jump rate `lambda(z) >= 0`.
    fn rate(&self, z: &Self::State) -> f64;

    /// Sample the post-jump state from the kernel `Q(z, .)`.
    fn jump<R: Rng + ?Sized>(&self, z: &Self::State, rng: &mut R) -> Self::State;

    /// Constant bound on the rate along every flow line.
    fn rate_bound(&self) -> f64;

    /// `int_0^t f(psi(s, z)) ds`. The default is exact for constants and
    /// otherwise uses the left-endpoint rule with step `quadrature_step`.
    fn integrate_along<F: Observable<Self::State> + ?Sized>(&self, f: &F, z: &Self::State, t: f64) -> f64 {
        if let Some(c) = f.constant() {
            return c * t;
        }
        let h = self.quadrature_step();
        let n = (t / h).ceil().max(1.0) as usize;
        let dh = t / n as f64;
        (0..n).map(|i| f.value(&self.flow(z, i as f64 * dh)) * dh).sum()
    }

    fn quadrature_step(&self) -> f64 {
        1e-3
    }
}

/// Holding time after `xi` by thinning: propose exponential(`Lambda`)
/// increments along the flow and accept with probability `lambda / Lambda`.
pub fn sample_holding_time<P, R>(pdmp: &P, xi: &P::State, rng: &mut R, cap: f64) -> Result<f64>
where
    P: Pdmp,
    R: Rng + ?Sized,
{
    let bound = pdmp.rate_bound();
    if !(bound > 0.0) {
        return Err(Error::CapExceeded { cap });
    }
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / bound;
        if t > cap {
            return Err(Error::CapExceeded { cap });
        }
        let rate = pdmp.rate(&pdmp.flow(xi, t));
        if rate > bound * (1.0 + 1e-12) {
            return Err(Error::BoundViolated { rate, bound });
        }
        if rng.random::<f64>() * bound < rate {
            return Ok(t);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPoint<S> {
    pub xi: S,
    pub theta: f64,
}

/// First skeleton point: `xi` with a holding time drawn from its law.
pub fn initial_point<P, R>(pdmp: &P, xi: P::State, rng: &mut R) -> Result<SkeletonPoint<P::State>>
where
    P: Pdmp,
    R: Rng + ?Sized,
{
    let theta = sample_holding_time(pdmp, &xi, rng, DEFAULT_HOLDING_CAP)?;
    Ok(SkeletonPoint { xi, theta })
}

/// Flow for `theta`, jump, and draw the next holding time.
pub fn skeleton_step<P, R>(pdmp: &P, current: &SkeletonPoint<P::State>, rng: &mut R) -> Result<SkeletonPoint<P::State>>
where
    P: Pdmp,
    R: Rng + ?Sized,
{
    let pre = pdmp.flow(&current.xi, current.theta);
    let xi = pdmp.jump(&pre, rng);
    let theta = sample_holding_time(pdmp, &xi, rng, DEFAULT_HOLDING_CAP)?;
    Ok(SkeletonPoint { xi, theta })
}

/// The skeleton chain as a discrete-time model. One step is one jump; its
/// physical duration is the holding time of the point it starts from.
#[derive(Clone, Debug)]
pub struct SkeletonChain<P> {
    pub pdmp: P,
}

impl<P> SkeletonChain<P> {
    pub fn new(pdmp: P) -> Self {
        SkeletonChain { pdmp }
    }
}

impl<P: Pdmp> MarkovModel for SkeletonChain<P> {
    type State = SkeletonPoint<P::State>;

    fn time_axis(&self) -> TimeAxis {
        TimeAxis::Discrete
    }

    fn advance<R: Rng + ?Sized>(&self, state: &Self::State, _horizon: f64, rng: &mut R) -> Result<Piece<Self::State>> {
        Ok(Piece {
            elapsed: 1.0,
            end: skeleton_step(&self.pdmp, state, rng)?,
        })
    }

    /// A constant `c` integrates to `c * theta`; any other observable is
    /// expected to return the holding-interval integral itself (see
    /// [`HoldingIntegral`]).
    fn integrate<G: Observable<Self::State> + ?Sized>(&self, g: &G, start: &Self::State, len: f64) -> f64 {
        match g.constant() {
            Some(c) => c * (start.theta * len),
            None => g.value(start) * len,
        }
    }

    fn physical_duration(&self, start: &Self::State, len: f64) -> f64 {
        start.theta * len
    }
}

/// Lifts an observable `f` of PDMP states to skeleton points:
/// `(xi, theta) -> int_0^theta f(psi(t, xi)) dt`.
pub struct HoldingIntegral<'a, P, F: ?Sized> {
    pub pdmp: &'a P,
    pub f: &'a F,
}

impl<'a, P, F: ?Sized> HoldingIntegral<'a, P, F> {
    pub fn new(pdmp: &'a P, f: &'a F) -> Self {
        HoldingIntegral { pdmp, f }
    }
}

impl<P, F> Observable<SkeletonPoint<P::State>> for HoldingIntegral<'_, P, F>
where
    P: Pdmp,
    F: Observable<P::State> + ?Sized,
{
    fn value(&self, point: &SkeletonPoint<P::State>) -> f64 {
        self.pdmp.integrate_along(self.f, &point.xi, point.theta)
    }

    fn constant(&self) -> Option<f64> {
        self.f.constant()
    }
}

/// Skeleton membership is decided by the post-jump state alone.
pub struct OnJumpState<G>(pub G);

impl<S, G: Region<S>> Region<SkeletonPoint<S>> for OnJumpState<G> {
    fn contains(&self, point: &SkeletonPoint<S>) -> bool {
        self.0.contains(&point.xi)
    }

    fn label(&self) -> &str {
        self.0.label()
    }
}

/// `sum_{j != i} (lambda_i(x, j) - lambda_j(x, i)) + d_i . grad V(x)` for a
/// linear-flow PDMP, where `rate(to, from)` is the rate of switching from
/// velocity `from` to velocity `to` at the fixed point `x`. Zero exactly when
/// the rates balance the Boltzmann weight `exp(-V)`.
pub fn rate_balance_residual<F>(rate: F, directions: &[[f64; 2]], grad_v: [f64; 2], i: usize) -> f64
where
    F: Fn(usize, usize) -> f64,
{
    let flux: f64 = (0..directions.len())
        .filter(|&j| j != i)
        .map(|j| rate(i, j) - rate(j, i))
        .sum();
    flux + directions[i][0] * grad_v[0] + directions[i][1] * grad_v[1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stats::ks_one_sample;

    /// Constant-rate jump process on the circle, flow at unit speed.
    struct ConstantRate(f64);

    impl Pdmp for ConstantRate {
        type State = f64;

        fn flow(&self, z: &f64, t: f64) -> f64 {
            z + t
        }

        fn rate(&self, _z: &f64) -> f64 {
            self.0
        }

        fn jump<R: Rng + ?Sized>(&self, z: &f64, _rng: &mut R) -> f64 {
            *z
        }

        fn rate_bound(&self) -> f64 {
            self.0 * 1.5
        }
    }

    #[test]
    fn constant_rate_gives_exponential_holding_times() {
        let mut rng = RngStream::root(10);
        let c = 2.5;
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_holding_time(&ConstantRate(c), &0.0, &mut rng, 1e9).unwrap())
            .collect();
        let t = ks_one_sample(&xs, |x| 1.0 - (-c * x).exp()).unwrap();
        assert!(t.p_value > 0.01, "{t:?}");
    }

    #[test]
    fn zero_rate_never_jumps() {
        let mut rng = RngStream::root(0);
        let err = sample_holding_time(&ConstantRate(0.0), &0.0, &mut rng, 10.0).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { .. }));
    }

    #[test]
    fn rate_above_bound_aborts() {
        struct Liar;
        impl Pdmp for Liar {
            type State = f64;
            fn flow(&self, z: &f64, t: f64) -> f64 {
                z + t
            }
            fn rate(&self, _z: &f64) -> f64 {
                3.0
            }
            fn jump<R: Rng + ?Sized>(&self, z: &f64, _rng: &mut R) -> f64 {
                *z
            }
            fn rate_bound(&self) -> f64 {
                1.0
            }
        }
        let mut rng = RngStream::root(0);
        let err = sample_holding_time(&Liar, &0.0, &mut rng, 10.0).unwrap_err();
        assert!(matches!(err, Error::BoundViolated { .. }));
    }

    #[test]
    fn zigzag_rates_balance() {
        let mut rng = RngStream::root(3);
        let dirs = [[1.0, 0.0], [-1.0, 0.0]];
        for _ in 0..1000 {
            let g = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            let dot = |j: usize| -> f64 { dirs[j][0] * g[0] + dirs[j][1] * g[1] };
            let rate = |to: usize, _from: usize| (-dot(to)).max(0.0);
            for i in 0..2 {
                assert!(rate_balance_residual(rate, &dirs, g, i).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn balance_residual_is_linear_in_perturbation() {
        let dirs = [[1.0, 0.0], [-1.0, 0.0]];
        let g = [0.7, -0.2];
        let dot = |j: usize| -> f64 { dirs[j][0] * g[0] + dirs[j][1] * g[1] };
        let rate = |to: usize, from: usize| (-dot(to)).max(0.0) + if (to, from) == (1, 0) { 0.1 } else { 0.0 };
        assert!((rate_balance_residual(rate, &dirs, g, 0) + 0.1).abs() < 1e-15);
        assert!((rate_balance_residual(rate, &dirs, g, 1) - 0.1).abs() < 1e-15);
        let flat = |_: usize, _: usize| 0.4;
        assert_eq!(rate_balance_residual(flat, &dirs, [0.0, 0.0], 0), 0.0);
    }
}
