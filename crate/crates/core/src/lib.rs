//! Parallel replica dynamics for Markov processes and piecewise
//! deterministic Markov processes.
//!
//! The crate is organized bottom-up:
//!
//! * [`process`]: the model abstraction, regions, fragments and the serial
//!   first-exit reference.
//! * [`qsd`]: quasistationary sampling (rejection and Fleming–Viot) and the
//!   decorrelation stage.
//! * [`scheduler`]: fragment orderings, virtual wall clocks and the general
//!   splicing step.
//! * [`pdmp`]: the lifted Metropolis process on the torus, its skeleton chain,
//!   its time discretization and exact identity checks.
//! * [`parrep`]: the synchronous and asynchronous parallel steps and the
//!   stationary-average drivers.
//! * [`stats`] and [`harness`]: goodness-of-fit tests, quadrature, sweeps and
//!   report emission.

pub mod error;
pub mod harness;
pub mod parrep;
pub mod pdmp;
pub mod process;
pub mod qsd;
pub mod rng;
pub mod scheduler;
pub mod stats;
pub mod toy;

pub use error::{Error, Result};
