//! Timing of the memory-step and convolution fast paths.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ExperimentSpec, NonlocalMode};
use crate::grid::{Boundary, Grid};
use crate::kernels::{sample_spatial, TemporalKernel};
use crate::nonlocal::{Convolver, FastPath, FftConvolver, HistoricalDatum, MemoryEngine};
use crate::numerics::linear_fit;
use crate::solver::{run, time_stepping};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    /// Seconds per step of `n`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryBench {
    pub num_cells: usize,
    pub repeats: usize,
    /// Minimum over repeats of the wall time of level `n`'s memory step.
    pub quadrature: Vec<f64>,
    pub recursive: Vec<f64>,
    pub quadrature_fit: SlopeFit,
    pub recursive_fit: SlopeFit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvBench {
    pub num_cells: Vec<usize>,
    pub direct: Vec<f64>,
    pub fft: Vec<f64>,
    /// Smallest ladder entry from which FFT is faster for the rest of the ladder.
    pub crossover: Option<usize>,
}

fn fit(times: &[f64]) -> Result<SlopeFit> {
    let n: Vec<f64> = (0..times.len()).map(|k| k as f64).collect();
    let f = linear_fit(&n, times)
        .ok_or_else(|| Error::Argument("need at least two timed steps".into()))?;
    Ok(SlopeFit {
        slope: f.slope,
        intercept: f.intercept,
        r_squared: f.r_squared,
    })
}

/// Times one memory step (field evaluation plus history update) at every
/// level of the run, for both the quadrature and the recursive path.
///
/// The fields fed to the engines come from one solver run, so both paths see
/// the actual trajectory. The engines start from a zero historical datum, so
/// the quadrature cost at level `n` is the sum over the `n` computed levels.
pub fn bench_memory(spec: &ExperimentSpec, repeats: usize) -> Result<MemoryBench> {
    let kernel = match spec.mode {
        NonlocalMode::Memory { kernel, .. } => kernel,
        _ => {
            return Err(Error::Argument(
                "bench needs a memory-mode configuration".into(),
            ))
        }
    };
    let TemporalKernel::Exponential { .. } = kernel else {
        return Err(Error::Argument(
            "bench compares against the recursive path, which needs an exponential kernel".into(),
        ));
    };
    let repeats = repeats.max(1);
    let mut s = spec.clone();
    s.stride = 1;
    let traj = run(&s)?.trajectory;
    let stepping = time_stepping(spec)?;
    let weights = spec
        .spatial_weights()?
        .ok_or_else(|| Error::Argument("memory mode needs a spatial kernel".into()))?;
    let conv = Convolver::select(&weights, &spec.grid, FastPath::Direct)?;
    let j = |q: f64| spec.model.nonlinearity(q);
    let steps = stepping.num_steps;
    let time_path = |recursive: bool| -> Result<Vec<f64>> {
        let mut best = vec![f64::INFINITY; steps];
        for _ in 0..repeats {
            let mut engine = MemoryEngine::new(
                &kernel,
                recursive,
                &spec.grid,
                stepping.dt,
                steps,
                HistoricalDatum::Zero,
                0,
                conv.clone(),
                &j,
            )?;
            for (n, slot) in best.iter_mut().enumerate() {
                let start = Instant::now();
                let w = engine.field(n)?;
                engine.push(&traj[n], &j);
                let elapsed = start.elapsed().as_secs_f64();
                std::hint::black_box(&w);
                *slot = slot.min(elapsed);
            }
        }
        Ok(best)
    };
    let quadrature = time_path(false)?;
    let recursive = time_path(true)?;
    Ok(MemoryBench {
        num_cells: spec.grid.num_cells,
        repeats,
        quadrature_fit: fit(&quadrature)?,
        recursive_fit: fit(&recursive)?,
        quadrature,
        recursive,
    })
}

/// Direct vs FFT convolution of the spec's spatial kernel on periodic grids
/// over the same domain.
pub fn bench_convolution(spec: &ExperimentSpec, ladder: &[usize], repeats: usize) -> Result<ConvBench> {
    let kernel = spec
        .spatial
        .as_ref()
        .ok_or_else(|| Error::Argument("bench needs a spatial kernel".into()))?;
    let repeats = repeats.max(1);
    let mut direct = Vec::new();
    let mut fft = Vec::new();
    for &n in ladder {
        let grid = Grid::new(spec.grid.x_left, spec.grid.x_right, n, Boundary::Periodic)?;
        let w = sample_spatial(kernel, grid.dx)?;
        let field: Vec<f64> = grid
            .cell_centers()
            .iter()
            .map(|&x| 0.5 + 0.3 * (7.0 * x).sin())
            .collect();
        let d = Convolver::direct(&w, &grid);
        let f = Convolver::Fft(FftConvolver::new(&w, &grid)?);
        let time = |c: &Convolver| {
            (0..repeats)
                .map(|_| {
                    let start = Instant::now();
                    std::hint::black_box(c.apply(&field));
                    start.elapsed().as_secs_f64()
                })
                .fold(f64::INFINITY, f64::min)
        };
        direct.push(time(&d));
        fft.push(time(&f));
    }
    let crossover = (0..ladder.len())
        .find(|&k| (k..ladder.len()).all(|m| fft[m] < direct[m]))
        .map(|k| ladder[k]);
    Ok(ConvBench {
        num_cells: ladder.to_vec(),
        direct,
        fft,
        crossover,
    })
}
