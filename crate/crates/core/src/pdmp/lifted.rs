//! The lifted Metropolis PDMP on the periodic unit square.
//!
//! The position moves with velocity `d_k`. The direction index switches
//! `k -> k - 1 (mod N)` at rate `max_l F_{k,l}(x)` with
//! `F_{k,l}(x) = beta (d_k + ... + d_{k+l}) . grad V(x)`. Because the
//! directions sum to zero, `F_{k,N-1} = 0` and the rate is never negative.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::torus::TorusPoint;
use super::{Pdmp, SkeletonPoint};
use crate::error::{Error, Result};
use crate::process::{Observable, Region};

pub trait Potential: Send + Sync {
    fn value(&self, x: [f64; 2]) -> f64;

    fn gradient(&self, x: [f64; 2]) -> [f64; 2];

    /// Upper bounds on `|dV/dx|` and `|dV/dy|` over the domain.
    fn gradient_bound(&self) -> [f64; 2];

    /// Global minimum of `V`, used to scale residuals.
    fn min_value(&self) -> f64;

    /// `a(u)` when `V(x, y) = a(x) + a(y)`, so that `value` equals
    /// `a(x) + a(y)` bit for bit. `None` for other potentials.
    fn separable_term(&self, _u: f64) -> Option<f64> {
        None
    }
}

/// `V(x, y) = depth (cos 4 pi x + cos 4 pi y) + tilt (sin 2 pi x + sin 2 pi y)`.
/// With the defaults (1, 1/5) the four wells sit near the centres of the
/// quarter squares and the one in `[1/2, 1)^2` is the deepest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltedCosine {
    pub depth: f64,
    pub tilt: f64,
}

impl Default for TiltedCosine {
    fn default() -> Self {
        TiltedCosine { depth: 1.0, tilt: 0.2 }
    }
}

impl TiltedCosine {
    /// One-dimensional factor `v(u)`; `V(x, y) = v(x) + v(y)`.
    pub fn v1(&self, u: f64) -> f64 {
        self.depth * (4.0 * PI * u).cos() + self.tilt * (2.0 * PI * u).sin()
    }

    pub fn dv1(&self, u: f64) -> f64 {
        -4.0 * PI * self.depth * (4.0 * PI * u).sin() + 2.0 * PI * self.tilt * (2.0 * PI * u).cos()
    }
}

impl Potential for TiltedCosine {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.v1(x[0]) + self.v1(x[1])
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        [self.dv1(x[0]), self.dv1(x[1])]
    }

    fn separable_term(&self, u: f64) -> Option<f64> {
        Some(self.v1(u))
    }

    fn gradient_bound(&self) -> [f64; 2] {
        let b = 4.0 * PI * self.depth.abs() + 2.0 * PI * self.tilt.abs();
        [b, b]
    }

    fn min_value(&self) -> f64 {
        // Minimize v on a fine grid, then polish with Newton steps.
        let n = 4096;
        let mut best = (0.0, f64::INFINITY);
        for i in 0..n {
            let u = i as f64 / n as f64;
            let v = self.v1(u);
            if v < best.1 {
                best = (u, v);
            }
        }
        let mut u = best.0;
        for _ in 0..20 {
            let h = 1e-6;
            let d2 = (self.dv1(u + h) - self.dv1(u - h)) / (2.0 * h);
            if d2 <= 0.0 {
                break;
            }
            u -= self.dv1(u) / d2;
        }
        2.0 * self.v1(u).min(best.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatPotential(pub f64);

impl Potential for FlatPotential {
    fn value(&self, _x: [f64; 2]) -> f64 {
        self.0
    }

    fn gradient(&self, _x: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn gradient_bound(&self) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn min_value(&self) -> f64 {
        self.0
    }
}

/// Position and direction index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LiftedState {
    pub pos: TorusPoint,
    pub k: u8,
}

impl LiftedState {
    pub fn new(x: f64, y: f64, k: u8) -> Self {
        LiftedState {
            pos: TorusPoint::new(x, y),
            k,
        }
    }
}

/// `(1,0), (-1,0), (0,1), (0,-1)`.
pub fn axis_directions() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[derive(Clone, Debug)]
pub struct LiftedMetropolisPdmp<V> {
    pub potential: V,
    pub beta: f64,
    directions: Vec<[f64; 2]>,
    /// `partial[k][l] = d_k + ... + d_{k+l}` (indices mod N).
    partial: Vec<Vec<[f64; 2]>>,
    bound: f64,
}

impl<V: Potential> LiftedMetropolisPdmp<V> {
    pub fn new(potential: V, beta: f64, directions: Vec<[f64; 2]>) -> Result<Self> {
        let n = directions.len();
        if !(2..=255).contains(&n) {
            return Err(Error::InvalidInput(format!("need 2..=255 directions, got {n}")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidInput(format!("beta must be finite and >= 0, got {beta}")));
        }
        let sum = directions.iter().fold([0.0, 0.0], |s, d| [s[0] + d[0], s[1] + d[1]]);
        let scale = directions.iter().map(|d| d[0].abs() + d[1].abs()).fold(1.0, f64::max);
        if sum[0].abs() > 1e-12 * scale || sum[1].abs() > 1e-12 * scale {
            return Err(Error::InvalidDirections { sum });
        }
        let partial: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|k| {
                let mut acc = [0.0, 0.0];
                (0..n)
                    .map(|l| {
                        let d = directions[(k + l) % n];
                        acc = [acc[0] + d[0], acc[1] + d[1]];
                        acc
                    })
                    .collect()
            })
            .collect();
        let max_partial = partial
            .iter()
            .flatten()
            .map(|s| s[0].hypot(s[1]))
            .fold(0.0, f64::max);
        let gb = potential.gradient_bound();
        let bound = beta * max_partial * gb[0].hypot(gb[1]);
        Ok(LiftedMetropolisPdmp {
            potential,
            beta,
            directions,
            partial,
            bound,
        })
    }

    /// The model with the four axis directions.
    pub fn axis(potential: V, beta: f64) -> Result<Self> {
        Self::new(potential, beta, axis_directions())
    }

    pub fn directions(&self) -> &[[f64; 2]] {
        &self.directions
    }

    pub fn n(&self) -> usize {
        self.directions.len()
    }

    /// `F_{k,l}(x)`.
    pub fn f_kl(&self, x: [f64; 2], k: usize, l: usize) -> f64 {
        self.beta * dot(self.partial[k][l], self.potential.gradient(x))
    }

    /// `max_l F_{k,l}(x)` without clamping.
    pub fn max_f(&self, x: [f64; 2], k: usize) -> f64 {
        let g = self.potential.gradient(x);
        self.partial[k]
            .iter()
            .map(|s| self.beta * dot(*s, g))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Switching rate at position `x` in direction `k`.
    pub fn switching_rate(&self, x: [f64; 2], k: usize) -> f64 {
        self.max_f(x, k).max(0.0)
    }

    /// Times in `(0, t)` at which the straight flow from `z` crosses a line
    /// `x = j/2` or `y = j/2`, sorted.
    fn crossings(&self, z: &LiftedState, t: f64) -> Vec<f64> {
        let d = self.directions[z.k as usize];
        let c = z.pos.coords();
        let mut out = Vec::new();
        for i in 0..2 {
            let v = d[i];
            if v == 0.0 {
                continue;
            }
            let u = c[i];
            let period = 0.5 / v.abs();
            let mut first = if v > 0.0 {
                (((2.0 * u).floor() + 1.0) / 2.0 - u) / v
            } else {
                (u - (2.0 * u).floor() / 2.0) / -v
            };
            if first <= 0.0 {
                first += period;
            }
            let mut s = first;
            while s < t {
                out.push(s);
                s += period;
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }
}

impl<V: Potential> Pdmp for LiftedMetropolisPdmp<V> {
    type State = LiftedState;

    fn flow(&self, z: &LiftedState, t: f64) -> LiftedState {
        LiftedState {
            pos: z.pos.flow(self.directions[z.k as usize], t),
            k: z.k,
        }
    }

    fn rate(&self, z: &LiftedState) -> f64 {
        self.switching_rate(z.pos.coords(), z.k as usize)
    }

    fn jump<R: Rng + ?Sized>(&self, z: &LiftedState, _rng: &mut R) -> LiftedState {
        let n = self.n() as u8;
        LiftedState {
            pos: z.pos,
            k: (z.k + n - 1) % n,
        }
    }

    fn rate_bound(&self) -> f64 {
        self.bound
    }

    /// Exact for observables that are constant on each basin: the flow is
    /// split at the basin edges and each piece is weighted by its length.
    fn integrate_along<F: Observable<LiftedState> + ?Sized>(&self, f: &F, z: &LiftedState, t: f64) -> f64 {
        if let Some(c) = f.constant() {
            return c * t;
        }
        if !f.cellwise_constant() {
            let h = self.quadrature_step();
            let n = (t / h).ceil().max(1.0) as usize;
            let dh = t / n as f64;
            return (0..n).map(|i| f.value(&self.flow(z, i as f64 * dh)) * dh).sum();
        }
        let mut total = 0.0;
        let mut a = 0.0;
        for b in self.crossings(z, t).into_iter().chain(std::iter::once(t)) {
            if b > a {
                total += f.value(&self.flow(z, 0.5 * (a + b))) * (b - a);
            }
            a = b;
        }
        total
    }
}

/// `beta d_k . grad V(x) + max_l F_{k+1,l}(x) - max_l F_{k,l}(x)`, which
/// vanishes identically when the directions sum to zero.
pub fn lifted_rate_identity_residual<V: Potential>(model: &LiftedMetropolisPdmp<V>, x: [f64; 2], k: usize) -> f64 {
    let n = model.n();
    let g = model.potential.gradient(x);
    model.beta * dot(model.directions[k], g) + model.max_f(x, (k + 1) % n) - model.max_f(x, k)
}

/// How positions are assigned to metastable sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasinScheme {
    /// The four half-open quarter squares.
    Squares,
    /// The quarter square containing the end point of gradient descent.
    GradientDescent,
}

/// Gradient descent to a local minimum; the label is the quarter square
/// holding the minimum.
#[derive(Clone)]
pub struct DescentLabeler {
    potential: Arc<dyn Potential>,
    step: f64,
    max_iter: usize,
}

impl DescentLabeler {
    pub fn new(potential: Arc<dyn Potential>) -> Self {
        DescentLabeler {
            potential,
            step: 2e-3,
            max_iter: 20_000,
        }
    }

    pub fn descend(&self, x: [f64; 2]) -> [f64; 2] {
        let mut p = x;
        for _ in 0..self.max_iter {
            let g = self.potential.gradient(p);
            if g[0].hypot(g[1]) < 1e-10 {
                break;
            }
            p = [super::torus::wrap(p[0] - self.step * g[0]), super::torus::wrap(p[1] - self.step * g[1])];
        }
        p
    }

    pub fn label(&self, x: [f64; 2]) -> u8 {
        super::torus::basin_label(self.descend(x))
    }
}

impl std::fmt::Debug for DescentLabeler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DescentLabeler").field("step", &self.step).finish()
    }
}

/// Metastable set `W_label`, tested on the position only.
#[derive(Clone, Debug)]
pub struct Basin {
    pub label: u8,
    name: String,
    descent: Option<DescentLabeler>,
}

impl Basin {
    pub fn square(label: u8) -> Self {
        assert!((1..=4).contains(&label), "basin labels are 1..=4");
        Basin {
            label,
            name: format!("W{label}"),
            descent: None,
        }
    }

    pub fn by_descent(label: u8, labeler: DescentLabeler) -> Self {
        Basin {
            descent: Some(labeler),
            ..Basin::square(label)
        }
    }

    /// All four basins under `scheme`.
    pub fn all(scheme: BasinScheme, potential: Arc<dyn Potential>) -> Vec<Basin> {
        match scheme {
            BasinScheme::Squares => (1..=4).map(Basin::square).collect(),
            BasinScheme::GradientDescent => {
                let labeler = DescentLabeler::new(potential);
                (1..=4).map(|l| Basin::by_descent(l, labeler.clone())).collect()
            }
        }
    }

    pub fn contains_point(&self, pos: &TorusPoint) -> bool {
        match &self.descent {
            None => pos.basin() == self.label,
            Some(d) => d.label(pos.coords()) == self.label,
        }
    }
}

impl Region<LiftedState> for Basin {
    fn contains(&self, state: &LiftedState) -> bool {
        self.contains_point(&state.pos)
    }

    fn label(&self) -> &str {
        &self.name
    }
}

impl Region<SkeletonPoint<LiftedState>> for Basin {
    fn contains(&self, point: &SkeletonPoint<LiftedState>) -> bool {
        self.contains_point(&point.xi.pos)
    }

    fn label(&self) -> &str {
        &self.name
    }
}

/// `f(x, k) = 1{x in W_label}` for the square basins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasinIndicator(pub u8);

impl Observable<LiftedState> for BasinIndicator {
    fn value(&self, state: &LiftedState) -> f64 {
        if state.pos.basin() == self.0 {
            1.0
        } else {
            0.0
        }
    }

    fn cellwise_constant(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdmp::sample_holding_time;
    use crate::rng::RngStream;

    fn model(beta: f64) -> LiftedMetropolisPdmp<TiltedCosine> {
        LiftedMetropolisPdmp::axis(TiltedCosine::default(), beta).unwrap()
    }

    #[test]
    fn bound_matches_closed_form() {
        // Longest partial direction sum is (-1, 1), of length sqrt(2).
        let m = model(3.0);
        let expected = 3.0 * 2f64.sqrt() * (4.0 * PI + 2.0 * PI / 5.0) * 2f64.sqrt();
        assert!((m.rate_bound() - expected).abs() < 1e-12);
    }

    #[test]
    fn rates_are_nonnegative_and_bounded() {
        let m = model(3.0);
        for i in 0..50 {
            for j in 0..50 {
                let x = [i as f64 / 50.0, j as f64 / 50.0];
                for k in 0..4 {
                    let r = m.switching_rate(x, k);
                    assert!(r >= 0.0 && r <= m.rate_bound());
                    assert!(m.max_f(x, k) >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn unbalanced_directions_rejected() {
        let err = LiftedMetropolisPdmp::new(TiltedCosine::default(), 1.0, vec![[1.0, 0.0], [0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidDirections { .. }));
    }

    #[test]
    fn identity_residual_vanishes_on_grid() {
        let m = model(3.0);
        for i in 0..100 {
            for j in 0..100 {
                let x = [i as f64 / 100.0, j as f64 / 100.0];
                for k in 0..4 {
                    assert!(lifted_rate_identity_residual(&m, x, k).abs() < 1e-12);
                }
            }
        }
        let flat = LiftedMetropolisPdmp::axis(FlatPotential(1.0), 3.0).unwrap();
        assert_eq!(lifted_rate_identity_residual(&flat, [0.3, 0.1], 2), 0.0);
    }

    #[test]
    fn jump_cycles_direction_down() {
        let m = model(3.0);
        let mut rng = RngStream::root(0);
        let mut z = LiftedState::new(0.1, 0.2, 0);
        for expect in [3, 2, 1, 0, 3] {
            z = m.jump(&z, &mut rng);
            assert_eq!(z.k, expect);
        }
    }

    #[test]
    fn flow_semigroup() {
        let m = model(3.0);
        let z = LiftedState::new(0.3, 0.9, 1);
        for (s, t) in [(0.1, 0.2), (0.37, 1.9), (2.5, 0.001)] {
            let a = m.flow(&z, s + t).pos.coords();
            let b = m.flow(&m.flow(&z, s), t).pos.coords();
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
        assert_eq!(m.flow(&z, 0.0), z);
    }

    #[test]
    fn indicator_integral_is_exact() {
        let m = model(3.0);
        let f = BasinIndicator(1);
        // From x = 0.6 moving right for 0.7: in W1 until x = 1.0, i.e. 0.4.
        let z = LiftedState::new(0.6, 0.7, 0);
        assert!((m.integrate_along(&f, &z, 0.7) - 0.4).abs() < 1e-15);
        // Moving left from 0.6 for 0.05: stays inside.
        let z = LiftedState::new(0.6, 0.7, 1);
        assert!((m.integrate_along(&f, &z, 0.05) - 0.05).abs() < 1e-15);
        // Two full laps in x: half the time inside.
        let z = LiftedState::new(0.0, 0.7, 0);
        assert!((m.integrate_along(&f, &z, 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deepest_minimum_is_in_w1() {
        let v = TiltedCosine::default();
        assert!((v.min_value() + 2.4).abs() < 1e-9);
        assert!((v.value([0.75, 0.75]) + 2.4).abs() < 1e-12);
        assert_eq!(crate::pdmp::basin_label([0.75, 0.75]), 1);
        let labeler = DescentLabeler::new(Arc::new(v));
        let min = labeler.descend([0.6, 0.9]);
        assert!((min[0] - 0.75).abs() < 1e-6 && (min[1] - 0.75).abs() < 1e-6);
        assert_eq!(labeler.label([0.6, 0.9]), 1);
    }

    #[test]
    fn thinning_on_flat_potential_never_jumps() {
        let m = LiftedMetropolisPdmp::axis(FlatPotential(0.0), 3.0).unwrap();
        let mut rng = RngStream::root(1);
        let err = sample_holding_time(&m, &LiftedState::new(0.1, 0.1, 0), &mut rng, 100.0).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { .. }));
    }
}
