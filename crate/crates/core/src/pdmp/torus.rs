//! Fixed-point points on the unit torus `[0, 1)^2`.
//!
//! Each coordinate is a `u64` holding `x * 2^64`, so wrapping is integer
//! overflow and `x + 1` is the same point bit for bit. The four basins are the
//! half-open squares of side 1/2, read off the top bit of each coordinate.

use serde::{Deserialize, Serialize};

const SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TorusPoint {
    pub x: u64,
    pub y: u64,
}

/// Fixed-point encoding of a real displacement modulo 1, odd in its argument
/// so that `v` and `-v` cancel exactly.
pub fn fixed_delta(v: f64) -> u64 {
    let a = v.abs();
    let frac = a - a.floor();
    let u = (frac * SCALE) as u64;
    if v < 0.0 {
        u.wrapping_neg()
    } else {
        u
    }
}

/// Wrap a real coordinate into `[0, 1)` as `x - floor(x)`.
pub fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0.
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl TorusPoint {
    pub fn new(x: f64, y: f64) -> Self {
        TorusPoint {
            x: (wrap(x) * SCALE) as u64,
            y: (wrap(y) * SCALE) as u64,
        }
    }

    pub fn coords(&self) -> [f64; 2] {
        [self.x as f64 / SCALE, self.y as f64 / SCALE]
    }

    /// `self + v t` for a velocity `v`.
    pub fn flow(&self, v: [f64; 2], t: f64) -> TorusPoint {
        self.shift([fixed_delta(v[0] * t), fixed_delta(v[1] * t)])
    }

    pub fn shift(&self, delta: [u64; 2]) -> TorusPoint {
        TorusPoint {
            x: self.x.wrapping_add(delta[0]),
            y: self.y.wrapping_add(delta[1]),
        }
    }

    /// Basin label in `1..=4`: 1 = [1/2,1)^2, 2 = [0,1/2)x[1/2,1),
    /// 3 = [1/2,1)x[0,1/2), 4 = [0,1/2)^2.
    pub fn basin(&self) -> u8 {
        match (self.x >> 63, self.y >> 63) {
            (1, 1) => 1,
            (0, 1) => 2,
            (1, 0) => 3,
            _ => 4,
        }
    }
}

/// Label of the basin containing a real point, after wrapping.
pub fn basin_label(x: [f64; 2]) -> u8 {
    TorusPoint::new(x[0], x[1]).basin()
}

/// Lower-left corner of basin `label`.
pub fn basin_corner(label: u8) -> [f64; 2] {
    match label {
        1 => [0.5, 0.5],
        2 => [0.0, 0.5],
        3 => [0.5, 0.0],
        4 => [0.0, 0.0],
        _ => panic!("basin labels are 1..=4, got {label}"),
    }
}
