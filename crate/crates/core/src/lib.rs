//! Finite-volume solvers for one-dimensional conservation laws whose flux
//! depends on the solution through a nonlocal operator in space, in space and
//! time (memory), or with a time delay.
//!
//! Each time step freezes the nonlocal field, applies a three-point scheme
//! (Godunov or Lax–Friedrichs) and iterates to a fixed point. The
//! [`diagnostics`] module checks mass balance, maximum principle, total
//! variation and a discrete entropy inequality on computed trajectories.

pub mod bench;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod kernels;
pub mod models;
pub mod nonlocal;
pub mod numerics;
pub mod output;
pub mod schemes;
pub mod solver;

pub use config::Config;
pub use error::{Error, Result};
pub use experiment::{ExperimentSpec, NonlocalMode};
pub use grid::{Boundary, Grid, TimeStepping};
pub use solver::{run, RunResult};
