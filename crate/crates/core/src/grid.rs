//! Uniform 1-D cell grid, CFL time-step selection and ghost-cell extension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Outflow,
}

/// Uniform cell discretization of `[x_left, x_right]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x_left: f64,
    pub x_right: f64,
    pub num_cells: usize,
    pub dx: f64,
    pub boundary: Boundary,
    cell_centers: Vec<f64>,
}

impl Grid {
    pub fn new(x_left: f64, x_right: f64, num_cells: usize, boundary: Boundary) -> Result<Self> {
        if !(x_left.is_finite() && x_right.is_finite()) || x_right <= x_left {
            return Err(Error::config(
                "domain",
                format!("degenerate interval [{x_left}, {x_right}]"),
            ));
        }
        if num_cells < 2 {
            return Err(Error::config(
                "domain.num_cells",
                format!("need at least 2 cells, got {num_cells}"),
            ));
        }
        let dx = (x_right - x_left) / num_cells as f64;
        let cell_centers = (0..num_cells)
            .map(|i| x_left + (i as f64 + 0.5) * dx)
            .collect();
        Ok(Grid {
            x_left,
            x_right,
            num_cells,
            dx,
            boundary,
            cell_centers,
        })
    }

    pub fn cell_centers(&self) -> &[f64] {
        &self.cell_centers
    }

    pub fn length(&self) -> f64 {
        self.x_right - self.x_left
    }

    /// Position of interface `i - 1/2`, so `interface(0)` is the left boundary.
    pub fn interface(&self, i: usize) -> f64 {
        self.x_left + i as f64 * self.dx
    }

    /// Cell index for a possibly out-of-range index under this grid's boundary rule.
    pub fn wrap(&self, i: isize) -> usize {
        let n = self.num_cells as isize;
        match self.boundary {
            Boundary::Periodic => i.rem_euclid(n) as usize,
            Boundary::Outflow => i.clamp(0, n - 1) as usize,
        }
    }
}

/// Uniform time ladder hitting `t_final` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStepping {
    pub t_final: f64,
    pub dt: f64,
    pub num_steps: usize,
    /// Wave-speed bound the step was selected for.
    pub alpha: f64,
    pub cfl: f64,
}

impl TimeStepping {
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// `alpha * dt / dx` for the given grid.
    pub fn courant(&self, grid: &Grid) -> f64 {
        self.alpha * self.dt / grid.dx
    }
}

/// Picks the largest uniform `dt <= cfl * dx / alpha` with `num_steps * dt == t_final`.
pub fn select_dt(grid: &Grid, alpha: f64, cfl: f64, t_final: f64) -> Result<TimeStepping> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::WaveSpeed(format!(
            "wave-speed bound must be positive and finite, got {alpha}"
        )));
    }
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::config("time.cfl", format!("must lie in (0, 1], got {cfl}")));
    }
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::config(
            "time.t_final",
            format!("must be positive, got {t_final}"),
        ));
    }
    let dt_max = cfl * grid.dx / alpha;
    let mut num_steps = (t_final / dt_max).ceil().max(1.0) as usize;
    let mut dt = t_final / num_steps as f64;
    // ceil can land one short when t_final / dt_max is integral up to rounding
    while dt > dt_max {
        num_steps += 1;
        dt = t_final / num_steps as f64;
    }
    Ok(TimeStepping {
        t_final,
        dt,
        num_steps,
        alpha,
        cfl,
    })
}

/// Extends `field` by `ghost_width` cells on each side.
pub fn apply_boundary(field: &[f64], boundary: Boundary, ghost_width: usize) -> Vec<f64> {
    let n = field.len() as isize;
    let g = ghost_width as isize;
    (-g..n + g)
        .map(|i| match boundary {
            Boundary::Periodic => field[i.rem_euclid(n) as usize],
            Boundary::Outflow => field[i.clamp(0, n - 1) as usize],
        })
        .collect()
}
