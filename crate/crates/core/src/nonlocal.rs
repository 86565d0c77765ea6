//! Discrete nonlocal operators.
//!
//! All variants are built from the spatial convolution
//! `conv(u)_i = Σ_j w_j dx J(u[i - o_j])`. The memory operator sums that
//! convolution over strictly past time levels with lag weights
//! `K(m dt) dt`; the delayed operator reads one past level.

use std::borrow::Cow;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};
use crate::kernels::{temporal_lag_weights, DiscreteWeights, TemporalKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    Spatial,
    MemoryQuadrature,
    MemoryRecursive,
    Delayed,
}

/// Values `W_i` at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalField {
    pub values: Vec<f64>,
    pub source: FieldSource,
}

/// Direct evaluation of the discrete convolution of `J(field)`.
pub fn conv_direct(
    field: &[f64],
    weights: &DiscreteWeights,
    grid: &Grid,
    j: impl Fn(f64) -> f64,
) -> NonlocalField {
    let jq: Vec<f64> = field.iter().map(|&q| j(q)).collect();
    NonlocalField {
        values: convolve_direct(&jq, &weights.offsets, &weights.masses(), grid),
        source: FieldSource::Spatial,
    }
}

fn convolve_direct(jq: &[f64], offsets: &[isize], masses: &[f64], grid: &Grid) -> Vec<f64> {
    let n = jq.len() as isize;
    let max_off = offsets.iter().copied().max().unwrap_or(0);
    let min_off = offsets.iter().copied().min().unwrap_or(0);
    // extended[k] holds jq at cell (k - pad_left) under the boundary rule
    let pad_left = max_off.max(0);
    let pad_right = (-min_off).max(0);
    let extended: Vec<f64> = (-pad_left..n + pad_right).map(|i| jq[grid.wrap(i)]).collect();
    (0..n)
        .map(|i| {
            offsets
                .iter()
                .zip(masses)
                .map(|(&o, &m)| m * extended[(i - o + pad_left) as usize])
                .sum()
        })
        .collect()
}

/// Circular convolution through the FFT; reusable across time levels.
#[derive(Clone)]
pub struct FftConvolver {
    n: usize,
    kernel_hat: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftConvolver").field("n", &self.n).finish()
    }
}

impl FftConvolver {
    pub fn new(weights: &DiscreteWeights, grid: &Grid) -> Result<Self> {
        if grid.boundary != Boundary::Periodic {
            return Err(Error::Mode(
                "FFT convolution requires a periodic grid".into(),
            ));
        }
        let n = grid.num_cells;
        if weights.span() > n {
            return Err(Error::Mode(format!(
                "kernel stencil spans {} cells but the periodic grid has {n}",
                weights.span()
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut kernel_hat = vec![Complex::new(0.0, 0.0); n];
        for (&o, m) in weights.offsets.iter().zip(weights.masses()) {
            kernel_hat[o.rem_euclid(n as isize) as usize].re += m;
        }
        forward.process(&mut kernel_hat);
        Ok(FftConvolver {
            n,
            kernel_hat,
            forward,
            inverse,
        })
    }

    pub fn apply(&self, jq: &[f64]) -> Vec<f64> {
        assert_eq!(jq.len(), self.n, "field length does not match the grid");
        let mut buf: Vec<Complex<f64>> = jq.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.into_iter().map(|c| c.re * scale).collect()
    }
}

/// FFT evaluation of the periodic convolution of `J(field)`.
pub fn conv_fft_periodic(
    field: &[f64],
    weights: &DiscreteWeights,
    grid: &Grid,
    j: impl Fn(f64) -> f64,
) -> Result<NonlocalField> {
    let conv = FftConvolver::new(weights, grid)?;
    let jq: Vec<f64> = field.iter().map(|&q| j(q)).collect();
    Ok(NonlocalField {
        values: conv.apply(&jq),
        source: FieldSource::Spatial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FastPath {
    Auto,
    Direct,
    Fft,
    Recursive,
}

/// Spatial convolution engine chosen once per run.
#[derive(Debug, Clone)]
pub enum Convolver {
    Direct {
        offsets: Vec<isize>,
        masses: Vec<f64>,
        grid: Grid,
    },
    Fft(FftConvolver),
}

impl Convolver {
    pub fn direct(weights: &DiscreteWeights, grid: &Grid) -> Self {
        Convolver::Direct {
            offsets: weights.offsets.clone(),
            masses: weights.masses(),
            grid: grid.clone(),
        }
    }

    /// Picks FFT on periodic grids once the stencil is wide enough to pay for it.
    pub fn select(weights: &DiscreteWeights, grid: &Grid, fast_path: FastPath) -> Result<Self> {
        match fast_path {
            FastPath::Fft => Ok(Convolver::Fft(FftConvolver::new(weights, grid)?)),
            FastPath::Direct | FastPath::Recursive => Ok(Self::direct(weights, grid)),
            FastPath::Auto => {
                let n = grid.num_cells as f64;
                let periodic = grid.boundary == Boundary::Periodic;
                if periodic && weights.span() <= grid.num_cells && weights.span() as f64 > 6.0 * n.log2() {
                    Ok(Convolver::Fft(FftConvolver::new(weights, grid)?))
                } else {
                    Ok(Self::direct(weights, grid))
                }
            }
        }
    }

    pub fn is_fft(&self) -> bool {
        matches!(self, Convolver::Fft(_))
    }

    /// Convolves values that already have `J` applied.
    pub fn apply(&self, jq: &[f64]) -> Vec<f64> {
        match self {
            Convolver::Direct {
                offsets,
                masses,
                grid,
            } => convolve_direct(jq, offsets, masses, grid),
            Convolver::Fft(f) => f.apply(jq),
        }
    }

    pub fn apply_with(&self, field: &[f64], j: &dyn Fn(f64) -> f64) -> Vec<f64> {
        let jq: Vec<f64> = field.iter().map(|&q| j(q)).collect();
        self.apply(&jq)
    }
}

/// Prescribed datum `q(t, x)` for `t <= 0`.
#[derive(Clone)]
pub enum HistoricalDatum {
    Zero,
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for HistoricalDatum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HistoricalDatum::Zero => write!(f, "Zero"),
            HistoricalDatum::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl HistoricalDatum {
    pub fn sample(&self, t: f64, centers: &[f64]) -> Vec<f64> {
        match self {
            HistoricalDatum::Zero => vec![0.0; centers.len()],
            HistoricalDatum::Function(f) => centers.iter().map(|&x| f(t, x)).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, HistoricalDatum::Zero)
    }
}

/// Computed levels `0..n` plus the historical datum below zero.
#[derive(Debug, Clone)]
pub struct History {
    past: Vec<Vec<f64>>,
    historical: HistoricalDatum,
    centers: Vec<f64>,
    dt: f64,
    /// Number of historical levels `-1, …, -depth` the memory sum retains.
    pub truncation_depth: usize,
}

impl History {
    pub fn new(grid: &Grid, dt: f64, historical: HistoricalDatum, truncation_depth: usize) -> Self {
        History {
            past: Vec::new(),
            historical,
            centers: grid.cell_centers().to_vec(),
            dt,
            truncation_depth,
        }
    }

    pub fn push(&mut self, level: Vec<f64>) {
        self.past.push(level);
    }

    /// Number of computed levels stored.
    pub fn len(&self) -> usize {
        self.past.len()
    }

    pub fn is_empty(&self) -> bool {
        self.past.is_empty()
    }

    pub fn historical(&self) -> &HistoricalDatum {
        &self.historical
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Field at time level `k`; negative levels sample the historical datum at `t = k dt`.
    pub fn level(&self, k: i64) -> Result<Cow<'_, [f64]>> {
        if k >= 0 {
            self.past
                .get(k as usize)
                .map(|v| Cow::Borrowed(v.as_slice()))
                .ok_or(Error::Sequencing { level: k })
        } else {
            Ok(Cow::Owned(self.historical.sample(k as f64 * self.dt, &self.centers)))
        }
    }
}

/// Causal memory sum at level `n`:
/// `W^n = Σ_{m ≥ 1} lagw[m] conv(J(q^{n-m}))` over computed levels `0..n`
/// and historical levels `-1..=-truncation_depth`.
///
/// `lagw` must cover lags up to `n + truncation_depth`.
pub fn memory_quadrature(
    history: &History,
    conv: &Convolver,
    lagw: &[f64],
    n: usize,
    j: &dyn Fn(f64) -> f64,
) -> Result<NonlocalField> {
    let needed = if history.historical.is_zero() {
        n
    } else {
        n + history.truncation_depth
    };
    if lagw.len() <= needed {
        return Err(Error::Argument(format!(
            "lag weights cover {} lags but level {n} needs {needed}",
            lagw.len().saturating_sub(1)
        )));
    }
    let mut w = vec![0.0; history.centers.len()];
    let mut add = |level: i64, weight: f64| -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let c = conv.apply_with(&history.level(level)?, j);
        w.iter_mut().zip(&c).for_each(|(a, b)| *a += weight * b);
        Ok(())
    };
    for m in 1..=n {
        add(n as i64 - m as i64, lagw[m])?;
    }
    if !history.historical.is_zero() {
        for depth in 1..=history.truncation_depth {
            add(-(depth as i64), lagw[n + depth])?;
        }
    }
    Ok(NonlocalField {
        values: w,
        source: FieldSource::MemoryQuadrature,
    })
}

/// Accumulator for the exponential kernel `(1/τ0) e^{-τ/τ0}`.
///
/// Stores `S^n = Σ_{m ≥ 1} K(m dt) dt conv(J(q^{n-m}))` directly, so the
/// nonlocal field at level `n` is `S^n` with no extra factor.
#[derive(Debug, Clone)]
pub struct ExpRecursive {
    pub s: Vec<f64>,
    decay: f64,
    gain: f64,
    level: usize,
}

impl ExpRecursive {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn field(&self) -> NonlocalField {
        NonlocalField {
            values: self.s.clone(),
            source: FieldSource::MemoryRecursive,
        }
    }
}

/// Seeds `S^0` with the truncated historical quadrature.
pub fn exp_recursive_init(
    history: &History,
    kernel: &TemporalKernel,
    conv: &Convolver,
    j: &dyn Fn(f64) -> f64,
) -> Result<ExpRecursive> {
    let tau0 = match *kernel {
        TemporalKernel::Exponential { tau0 } => tau0,
        other => {
            return Err(Error::UnsupportedKernel(format!(
                "recursive update needs an exponential temporal kernel, got {other:?}"
            )))
        }
    };
    let dt = history.dt;
    let n = history.centers.len();
    let decay = (-dt / tau0).exp();
    let mut s = vec![0.0; n];
    if !history.historical.is_zero() {
        for depth in 1..=history.truncation_depth {
            let weight = kernel.eval(depth as f64 * dt)? * dt;
            let c = conv.apply_with(&history.level(-(depth as i64))?, j);
            s.iter_mut().zip(&c).for_each(|(a, b)| *a += weight * b);
        }
    }
    Ok(ExpRecursive {
        s,
        decay,
        gain: dt / tau0 * decay,
        level: 0,
    })
}

/// `S^{n+1} = e^{-dt/τ0} S^n + (dt/τ0) e^{-dt/τ0} conv(J(q^n))`.
pub fn exp_recursive_update(
    state: &mut ExpRecursive,
    field_prev: &[f64],
    conv: &Convolver,
    j: &dyn Fn(f64) -> f64,
) -> NonlocalField {
    let c = conv.apply_with(field_prev, j);
    let (decay, gain) = (state.decay, state.gain);
    state
        .s
        .iter_mut()
        .zip(&c)
        .for_each(|(s, v)| *s = decay * *s + gain * v);
    state.level += 1;
    state.field()
}

/// Spatial convolution of the level `n - delay_steps`.
pub fn delayed_lookup(
    history: &History,
    delay_steps: usize,
    n: usize,
    conv: &Convolver,
    j: &dyn Fn(f64) -> f64,
) -> Result<NonlocalField> {
    if delay_steps == 0 {
        return Err(Error::Argument("delay must be at least one step".into()));
    }
    let level = n as i64 - delay_steps as i64;
    Ok(NonlocalField {
        values: conv.apply_with(&history.level(level)?, j),
        source: FieldSource::Delayed,
    })
}

/// Memory-field engine used by the time loop.
///
/// Call [`MemoryEngine::field`] for level `n` once levels `0..n` have been
/// pushed.
#[derive(Debug, Clone)]
pub enum MemoryEngine {
    Quadrature(CachedQuadrature),
    Recursive {
        state: ExpRecursive,
        conv: Convolver,
    },
}

/// Quadrature path that convolves every level once and reuses it.
#[derive(Debug, Clone)]
pub struct CachedQuadrature {
    lagw: Vec<f64>,
    conv: Convolver,
    past: Vec<Vec<f64>>,
    historical: Vec<Vec<f64>>,
    /// Lags past this index carry zero weight.
    max_lag: usize,
}

impl MemoryEngine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel: &TemporalKernel,
        recursive: bool,
        grid: &Grid,
        dt: f64,
        num_steps: usize,
        historical: HistoricalDatum,
        truncation_depth: usize,
        conv: Convolver,
        j: &dyn Fn(f64) -> f64,
    ) -> Result<Self> {
        let history = History::new(grid, dt, historical, truncation_depth);
        if recursive {
            let state = exp_recursive_init(&history, kernel, &conv, j)?;
            return Ok(MemoryEngine::Recursive { state, conv });
        }
        let hist_levels = if history.historical.is_zero() { 0 } else { truncation_depth };
        let mut max_lag = num_steps + 1 + hist_levels;
        if let Some(s) = kernel.support_lags(dt) {
            max_lag = max_lag.min(s);
        }
        let lagw = temporal_lag_weights(kernel, dt, max_lag)?;
        let historical = (1..=hist_levels)
            .map(|d| conv.apply_with(&history.level(-(d as i64)).unwrap(), j))
            .collect();
        Ok(MemoryEngine::Quadrature(CachedQuadrature {
            lagw,
            conv,
            past: Vec::new(),
            historical,
            max_lag,
        }))
    }

    /// Appends the next computed level.
    pub fn push(&mut self, level: &[f64], j: &dyn Fn(f64) -> f64) {
        match self {
            MemoryEngine::Quadrature(q) => {
                let c = q.conv.apply_with(level, j);
                q.past.push(c);
            }
            MemoryEngine::Recursive { state, conv } => {
                exp_recursive_update(state, level, conv, j);
            }
        }
    }

    /// Strictly causal memory field at level `n`.
    pub fn field(&self, n: usize) -> Result<NonlocalField> {
        match self {
            MemoryEngine::Recursive { state, .. } => {
                if state.level != n {
                    return Err(Error::Sequencing { level: n as i64 });
                }
                Ok(state.field())
            }
            MemoryEngine::Quadrature(q) => {
                if q.past.len() < n {
                    return Err(Error::Sequencing { level: n as i64 - 1 });
                }
                let mut w = vec![0.0; q.conv_len()];
                let top = n.min(q.max_lag);
                for m in 1..=top {
                    let weight = q.lagw[m];
                    if weight != 0.0 {
                        axpy(&mut w, weight, &q.past[n - m]);
                    }
                }
                for (d, c) in q.historical.iter().enumerate() {
                    let m = n + d + 1;
                    if m > q.max_lag {
                        break;
                    }
                    let weight = q.lagw[m];
                    if weight != 0.0 {
                        axpy(&mut w, weight, c);
                    }
                }
                Ok(NonlocalField {
                    values: w,
                    source: FieldSource::MemoryQuadrature,
                })
            }
        }
    }

    pub fn convolver(&self) -> &Convolver {
        match self {
            MemoryEngine::Quadrature(q) => &q.conv,
            MemoryEngine::Recursive { conv, .. } => conv,
        }
    }
}

impl CachedQuadrature {
    fn conv_len(&self) -> usize {
        self.past
            .first()
            .or(self.historical.first())
            .map(Vec::len)
            .unwrap_or_else(|| match &self.conv {
                Convolver::Direct { grid, .. } => grid.num_cells,
                Convolver::Fft(f) => f.n,
            })
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(y, v)| *y += a * v);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{sample_spatial, SpatialKernel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn id(q: f64) -> f64 {
        q
    }

    fn naive(field: &[f64], w: &DiscreteWeights, grid: &Grid) -> Vec<f64> {
        let n = field.len() as isize;
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for (o, wt) in w.offsets.iter().zip(&w.weights) {
                    let k = i - o;
                    let k = match grid.boundary {
                        Boundary::Periodic => ((k % n) + n) % n,
                        Boundary::Outflow => k.max(0).min(n - 1),
                    };
                    s += wt * w.dx * field[k as usize];
                }
                s
            })
            .collect()
    }

    fn rc_weights(grid: &Grid, r: f64) -> DiscreteWeights {
        sample_spatial(&SpatialKernel::RaisedCosineLeft { radius: r }, grid.dx).unwrap()
    }

    #[test]
    fn direct_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for b in [Boundary::Periodic, Boundary::Outflow] {
            let g = Grid::new(0.0, 1.0, 16, b).unwrap();
            let w = rc_weights(&g, 0.3);
            let f: Vec<f64> = (0..16).map(|_| rng.gen::<f64>()).collect();
            let a = conv_direct(&f, &w, &g, id).values;
            for (x, y) in a.iter().zip(naive(&f, &w, &g)) {
                assert!((x - y).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn constant_and_zero_fields() {
        let g = Grid::new(0.0, 4.0, 400, Boundary::Outflow).unwrap();
        let w = rc_weights(&g, 0.4);
        let c = vec![0.37; 400];
        assert!(conv_direct(&c, &w, &g, id).values.iter().all(|v| (v - 0.37).abs() < 1e-15));
        assert!(conv_direct(&c, &w, &g, |_| 0.0).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_sided_kernel_looks_ahead() {
        // a step located at cells 200.. must raise W to its left, not its right
        let g = Grid::new(0.0, 4.0, 400, Boundary::Outflow).unwrap();
        let w = rc_weights(&g, 0.4);
        let f: Vec<f64> = (0..400).map(|i| if i >= 200 { 1.0 } else { 0.0 }).collect();
        let wf = conv_direct(&f, &w, &g, id).values;
        assert!(wf[190] > 0.0);
        assert!(wf[150] == 0.0);
        assert!((wf[250] - 1.0).abs() < 1e-14);
        assert!(wf[199] > 0.0 && wf[199] < 1.0);
    }

    #[test]
    fn fft_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [64usize, 1000] {
            let g = Grid::new(-1.0, 1.0, n, Boundary::Periodic).unwrap();
            let w = sample_spatial(&SpatialKernel::QuinticShifted { eta: 0.1, delta: 0.06 }, g.dx).unwrap();
            let f: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let a = conv_fft_periodic(&f, &w, &g, id).unwrap().values;
            let b = conv_direct(&f, &w, &g, id).values;
            let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-12, "{err}");
        }
    }

    #[test]
    fn fft_delta_sifts_weights() {
        let n = 128;
        let g = Grid::new(0.0, 1.0, n, Boundary::Periodic).unwrap();
        let w = rc_weights(&g, 0.1);
        let mut f = vec![0.0; n];
        let src = 40;
        f[src] = 1.0 / g.dx;
        let out = conv_fft_periodic(&f, &w, &g, id).unwrap().values;
        // W_i = w_j where i - o_j = src
        for (o, wt) in w.offsets.iter().zip(&w.weights) {
            let i = (src as isize + o).rem_euclid(n as isize) as usize;
            assert!((out[i] - wt).abs() < 1e-11);
        }
    }

    #[test]
    fn fft_rejects_outflow() {
        let g = Grid::new(0.0, 1.0, 64, Boundary::Outflow).unwrap();
        let w = rc_weights(&g, 0.1);
        assert!(matches!(conv_fft_periodic(&[0.0; 64], &w, &g, id), Err(Error::Mode(_))));
    }

    fn triple_loop(
        history: &History,
        w: &DiscreteWeights,
        grid: &Grid,
        kernel: &TemporalKernel,
        n: usize,
        hist_lags: usize,
    ) -> Vec<f64> {
        let dt = history.dt();
        let mut out = vec![0.0; grid.num_cells];
        for m in 1..=(n + hist_lags) {
            let level = history.level(n as i64 - m as i64).unwrap();
            let kw = kernel.eval(m as f64 * dt).unwrap() * dt;
            let c = naive(&level, w, grid);
            for i in 0..grid.num_cells {
                out[i] += kw * c[i];
            }
        }
        out
    }

    #[test]
    fn empty_past_gives_zero() {
        let g = Grid::new(0.0, 1.0, 16, Boundary::Periodic).unwrap();
        let w = rc_weights(&g, 0.2);
        let h = History::new(&g, 0.01, HistoricalDatum::Zero, 0);
        let conv = Convolver::direct(&w, &g);
        let lagw = temporal_lag_weights(&TemporalKernel::Exponential { tau0: 1.0 }, 0.01, 10).unwrap();
        let f = memory_quadrature(&h, &conv, &lagw, 0, &id).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadrature_matches_triple_loop_constant_history() {
        let g = Grid::new(0.0, 1.0, 16, Boundary::Periodic).unwrap();
        let w = rc_weights(&g, 0.25);
        let dt = 0.02;
        let tau0 = 0.5;
        let k = TemporalKernel::Exponential { tau0 };
        let c = 0.6;
        let hist = HistoricalDatum::Function(Arc::new(move |_, _| c));
        let depth = k.truncation_lags(dt, 1e-10);
        let mut h = History::new(&g, dt, hist, depth);
        let m_levels = 50;
        for _ in 0..m_levels {
            h.push(vec![c; 16]);
        }
        let conv = Convolver::direct(&w, &g);
        let lagw = temporal_lag_weights(&k, dt, m_levels + depth).unwrap();
        let got = memory_quadrature(&h, &conv, &lagw, m_levels, &id).unwrap();
        let oracle = triple_loop(&h, &w, &g, &k, m_levels, depth);
        // closed form of the truncated geometric series
        let r = (-dt / tau0).exp();
        let total = m_levels + depth;
        let geo = c * (dt / tau0) * r * (1.0 - r.powi(total as i32)) / (1.0 - r);
        for i in 0..16 {
            assert!((got.values[i] - oracle[i]).abs() < 1e-13);
            assert!((got.values[i] - geo).abs() < 1e-13);
        }
    }

    #[test]
    fn triangular_compact_support() {
        let g = Grid::new(0.0, 1.0, 16, Boundary::Periodic).unwrap();
        let w = rc_weights(&g, 0.25);
        let dt = 0.1;
        let k = TemporalKernel::Triangular { width: 1.0 };
        let mut h = History::new(&g, dt, HistoricalDatum::Zero, 0);
        let n = 30;
        for lvl in 0..n {
            // only the last ten levels carry mass inside the support
            let v = if lvl + 10 >= n { 1.0 } else { 1.0e6 };
            h.push(vec![v; 16]);
        }
        let lagw = temporal_lag_weights(&k, dt, n).unwrap();
        let f = memory_quadrature(&h, &Convolver::direct(&w, &g), &lagw, n, &id).unwrap();
        let expected: f64 = (1..10).map(|m| k.eval(m as f64 * dt).unwrap() * dt).sum();
        assert!(f.values.iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn recursive_requires_exponential() {
        let g = Grid::new(0.0, 1.0, 16, Boundary::Periodic).unwrap();
        let w = rc_weights(&g, 0.25);
        let h = History::new(&g, 0.1, HistoricalDatum::Zero, 0);
        let r = exp_recursive_init(&h, &TemporalKernel::Erlang { tau0: 1.0 }, &Convolver::direct(&w, &g), &id);
        assert!(matches!(r, Err(Error::UnsupportedKernel(_))));
    }

    #[test]
    fn recursive_zero_stays_zero() {
        let g = Grid::new(0.0, 1.0, 16, Boundary::Periodic).unwrap();
        let w = rc_weights(&g, 0.25);
        let conv = Convolver::direct(&w, &g);
        let h = History::new(&g, 0.1, HistoricalDatum::Zero, 5);
        let mut s = exp_recursive_init(&h, &TemporalKernel::Exponential { tau0: 1.0 }, &conv, &id).unwrap();
        assert!(s.s.iter().all(|&v| v == 0.0));
        let f = exp_recursive_update(&mut s, &[0.0; 16], &conv, &id);
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recursive_init_matches_quadrature() {
        let g = Grid::new(0.0, 4.0, 64, Boundary::Outflow).unwrap();
        let w = rc_weights(&g, 0.4);
        let dt = 0.05;
        let k = TemporalKernel::Exponential { tau0: 0.8 };
        let q0 = |x: f64| if (0.5..=1.2).contains(&x) { 0.8 } else if (2.2..=2.9).contains(&x) { 0.7 } else { 0.0 };
        let hist = HistoricalDatum::Function(Arc::new(move |t, x| q0(x) * t.exp()));
        let depth = k.truncation_lags(dt, 1e-10);
        let h = History::new(&g, dt, hist, depth);
        let conv = Convolver::direct(&w, &g);
        let s = exp_recursive_init(&h, &k, &conv, &id).unwrap();
        let lagw = temporal_lag_weights(&k, dt, depth).unwrap();
        let q = memory_quadrature(&h, &conv, &lagw, 0, &id).unwrap();
        for (a, b) in s.s.iter().zip(&q.values) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn recursive_constant_input_is_geometric() {
        let g = Grid::new(0.0, 1.0, 16, Boundary::Periodic).unwrap();
        let w = rc_weights(&g, 0.25);
        let conv = Convolver::direct(&w, &g);
        let (dt, tau0, c) = (0.03, 0.4, 0.7);
        let h = History::new(&g, dt, HistoricalDatum::Zero, 0);
        let mut s = exp_recursive_init(&h, &TemporalKernel::Exponential { tau0 }, &conv, &id).unwrap();
        let r = (-dt / tau0).exp();
        for n in 1..=40 {
            let f = exp_recursive_update(&mut s, &[c; 16], &conv, &id);
            let closed = c * (dt / tau0) * r * (1.0 - r.powi(n)) / (1.0 - r);
            assert!(f.values.iter().all(|v| (v - closed).abs() < 1e-14));
        }
    }

    #[test]
    fn recursive_matches_quadrature_over_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::new(0.0, 1.0, 32, Boundary::Periodic).unwrap();
        let w = rc_weights(&g, 0.2);
        let conv = Convolver::direct(&w, &g);
        let dt = 0.01;
        let k = TemporalKernel::Exponential { tau0: 0.3 };
        let hist = HistoricalDatum::Function(Arc::new(|t, x| (1.0 + (6.0 * x).sin()) * (2.0 * t).exp()));
        let depth = k.truncation_lags(dt, 1e-10);
        let mut h = History::new(&g, dt, hist, depth);
        let mut s = exp_recursive_init(&h, &k, &conv, &id).unwrap();
        let lagw = temporal_lag_weights(&k, dt, 100 + depth).unwrap();
        for n in 0..100 {
            let quad = memory_quadrature(&h, &conv, &lagw, n, &id).unwrap();
            for (a, b) in s.s.iter().zip(&quad.values) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300));
            }
            let f: Vec<f64> = (0..32).map(|_| rng.gen::<f64>()).collect();
            exp_recursive_update(&mut s, &f, &conv, &id);
            h.push(f);
        }
    }

    #[test]
    fn delayed_reads_shifted_level() {
        let g = Grid::new(0.0, 1.0, 16, Boundary::Outflow).unwrap();
        let w = rc_weights(&g, 0.25);
        let conv = Convolver::direct(&w, &g);
        let dt = 0.1;
        let hist = HistoricalDatum::Function(Arc::new(|t, x| x + t));
        let mut h = History::new(&g, dt, hist.clone(), 0);
        let levels: Vec<Vec<f64>> = (0..5).map(|k| (0..16).map(|i| (i * (k + 1)) as f64 * 0.01).collect()).collect();
        for l in &levels {
            h.push(l.clone());
        }
        let got = delayed_lookup(&h, 2, 4, &conv, &id).unwrap();
        let want = naive(&levels[2], &w, &g);
        for (a, b) in got.values.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-14);
        }
        // before the delay has elapsed the historical datum is used
        let early = delayed_lookup(&h, 3, 1, &conv, &id).unwrap();
        let sampled = hist.sample(-2.0 * dt, g.cell_centers());
        for (a, b) in early.values.iter().zip(naive(&sampled, &w, &g)) {
            assert!((a - b).abs() <= 1e-14);
        }
        assert!(matches!(delayed_lookup(&h, 1, 9, &conv, &id), Err(Error::Sequencing { .. })));
    }

    #[test]
    fn cached_engine_matches_reference_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::new(0.0, 1.0, 24, Boundary::Outflow).unwrap();
        let w = rc_weights(&g, 0.2);
        let conv = Convolver::direct(&w, &g);
        let dt = 0.02;
        for k in [
            TemporalKernel::Erlang { tau0: 0.2 },
            TemporalKernel::Triangular { width: 0.3 },
            TemporalKernel::Exponential { tau0: 0.1 },
        ] {
            let hist = HistoricalDatum::Function(Arc::new(|t, x| x * t.exp()));
            let depth = k.truncation_lags(dt, 1e-10);
            let mut h = History::new(&g, dt, hist.clone(), depth);
            let mut eng = MemoryEngine::new(&k, false, &g, dt, 30, hist, depth, conv.clone(), &id).unwrap();
            let lagw = temporal_lag_weights(&k, dt, 30 + depth).unwrap();
            for n in 0..30 {
                let a = eng.field(n).unwrap();
                let b = memory_quadrature(&h, &conv, &lagw, n, &id).unwrap();
                for (x, y) in a.values.iter().zip(&b.values) {
                    assert!((x - y).abs() < 1e-13, "{k:?} n={n}");
                }
                let f: Vec<f64> = (0..24).map(|_| rng.gen::<f64>()).collect();
                eng.push(&f, &id);
                h.push(f);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn range_preserved(v in prop::collection::vec(0.0f64..1.0, 40), periodic in any::<bool>()) {
                let b = if periodic { Boundary::Periodic } else { Boundary::Outflow };
                let g = Grid::new(0.0, 1.0, 40, b).unwrap();
                let w = rc_weights(&g, 0.2);
                let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for x in conv_direct(&v, &w, &g, id).values {
                    prop_assert!(x >= lo - 1e-15 && x <= hi + 1e-15);
                }
            }

            #[test]
            fn linear_in_field(
                f in prop::collection::vec(-1.0f64..1.0, 32),
                h in prop::collection::vec(-1.0f64..1.0, 32),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
            ) {
                let g = Grid::new(0.0, 1.0, 32, Boundary::Periodic).unwrap();
                let w = rc_weights(&g, 0.3);
                let mix: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
                let lhs = conv_direct(&mix, &w, &g, id).values;
                let wf = conv_direct(&f, &w, &g, id).values;
                let wh = conv_direct(&h, &w, &g, id).values;
                for i in 0..32 {
                    prop_assert!((lhs[i] - (a * wf[i] + b * wh[i])).abs() < 1e-13);
                }
            }

            #[test]
            fn fft_equals_direct(v in prop::collection::vec(-2.0f64..2.0, 50)) {
                let g = Grid::new(-1.0, 1.0, 50, Boundary::Periodic).unwrap();
                let w = sample_spatial(&SpatialKernel::QuinticShifted { eta: 0.3, delta: 0.1 }, g.dx).unwrap();
                let a = conv_fft_periodic(&v, &w, &g, id).unwrap().values;
                let b = conv_direct(&v, &w, &g, id).values;
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
