//! Boltzmann averages by two-dimensional composite Simpson quadrature.

use crate::error::{Error, Result};
use crate::pdmp::Potential;

/// Default Simpson intervals per axis and per quarter square.
pub const DEFAULT_INTERVALS: usize = 512;

/// Relative agreement required between `n` and `2n` intervals.
pub const RELATIVE_TOLERANCE: f64 = 1e-8;

/// `int_rect exp(-beta V)` with `n` Simpson intervals per axis (`n` even).
pub fn simpson_2d<V: Potential + ?Sized>(potential: &V, beta: f64, x: [f64; 2], y: [f64; 2], n: usize) -> f64 {
    assert!(n >= 2 && n % 2 == 0, "Simpson needs an even interval count");
    let hx = (x[1] - x[0]) / n as f64;
    let hy = (y[1] - y[0]) / n as f64;
    let weight = |i: usize| match i {
        0 => 1.0,
        i if i == n => 1.0,
        i if i % 2 == 1 => 4.0,
        _ => 2.0,
    };
    let mut total = 0.0;
    for i in 0..=n {
        let u = x[0] + i as f64 * hx;
        let mut row = 0.0;
        for j in 0..=n {
            let v = y[0] + j as f64 * hy;
            row += weight(j) * (-beta * potential.value([u, v])).exp();
        }
        total += weight(i) * row;
    }
    total * hx * hy / 9.0
}

/// Quarter-square integrals of `exp(-beta V)`, indexed by basin label - 1.
fn quarter_integrals<V: Potential + ?Sized>(potential: &V, beta: f64, n: usize) -> [f64; 4] {
    let lo = [0.0, 0.5];
    let hi = [0.5, 1.0];
    [
        simpson_2d(potential, beta, hi, hi, n),
        simpson_2d(potential, beta, lo, hi, n),
        simpson_2d(potential, beta, hi, lo, n),
        simpson_2d(potential, beta, lo, lo, n),
    ]
}

/// `<1_{W_i}>` for the four quarter-square basins under `exp(-beta V)`,
/// checked between `n` and `2n` intervals.
pub fn basin_weights<V: Potential + ?Sized>(potential: &V, beta: f64, n: usize) -> Result<[f64; 4]> {
    let normalize = |q: [f64; 4]| {
        let z: f64 = q.iter().sum();
        q.map(|w| w / z)
    };
    let coarse = normalize(quarter_integrals(potential, beta, n));
    let fine = normalize(quarter_integrals(potential, beta, 2 * n));
    for (c, f) in coarse.iter().zip(&fine) {
        if (c - f).abs() > RELATIVE_TOLERANCE * f.abs() {
            return Err(Error::QuadratureNotConverged {
                n,
                coarse: *c,
                fine: *f,
            });
        }
    }
    Ok(fine)
}

/// `<1_W>` for the quarter-square basin with label `label`.
pub fn quadrature_reference<V: Potential + ?Sized>(potential: &V, beta: f64, label: u8) -> Result<f64> {
    if !(1..=4).contains(&label) {
        return Err(Error::InvalidInput(format!("basin labels are 1..=4, got {label}")));
    }
    Ok(basin_weights(potential, beta, DEFAULT_INTERVALS)?[label as usize - 1])
}
