//! Time loop with per-step Picard iteration, the direct scheme, and the
//! delay driver.

use crate::config::{Causality, PicardMode};
use crate::error::{Error, Result};
use crate::experiment::{ExperimentSpec, NonlocalMode};
use crate::grid::{select_dt, Grid, TimeStepping};
use crate::kernels::{DiscreteWeights, TemporalKernel};
use crate::models::FluxModel;
use crate::nonlocal::{Convolver, FastPath, History, MemoryEngine};
use crate::schemes::{conservative_update, estimate_alpha, interface_fluxes, SchemeKind};

/// Trajectory and per-step records of one run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub grid: Grid,
    pub stepping: TimeStepping,
    pub scheme: SchemeKind,
    pub picard_mode: PicardMode,
    pub stride: usize,
    /// Time level of each stored field.
    pub levels: Vec<usize>,
    pub trajectory: Vec<Vec<f64>>,
    /// Iterations used at each step (1 for a direct step).
    pub picard_iters: Vec<usize>,
    /// `‖q^{(k+1)} - q^{(k)}‖_∞` per iteration, per step.
    pub residuals: Vec<Vec<f64>>,
    /// Frozen `W` of the accepted update at each step; empty unless `stride == 1`.
    pub w_fields: Vec<Vec<f64>>,
    /// `[H_{-1/2}, H_{N-1/2}]` of the accepted update at each step.
    pub boundary_fluxes: Vec<[f64; 2]>,
    /// Historical levels kept by the memory sum.
    pub truncation_depth: usize,
    /// Continuous kernel mass beyond the truncated historical window.
    pub dropped_mass: f64,
    pub delay_steps: Option<usize>,
    pub convolver: Option<&'static str>,
}

impl RunResult {
    pub fn times(&self) -> Vec<f64> {
        self.levels.iter().map(|&n| self.stepping.time(n)).collect()
    }

    pub fn final_field(&self) -> &[f64] {
        self.trajectory.last().expect("trajectory holds the initial level")
    }

    /// True when every level is stored.
    pub fn is_full(&self) -> bool {
        self.levels.len() == self.stepping.num_steps + 1
    }
}

/// Run outcome that keeps the partial trajectory when a step fails.
#[derive(Debug)]
pub struct RunOutcome {
    pub result: RunResult,
    pub error: Option<Error>,
}

impl RunOutcome {
    pub fn into_result(self) -> Result<RunResult> {
        match self.error {
            None => Ok(self.result),
            Some(e) => Err(e),
        }
    }
}

/// Wave-speed bound and uniform time ladder for a spec.
pub fn time_stepping(spec: &ExperimentSpec) -> Result<TimeStepping> {
    let model = spec.model.as_ref();
    let w_range = match spec.mode {
        NonlocalMode::Local => (0.0, 0.0),
        _ => nonlinearity_range(model),
    };
    let alpha = estimate_alpha(model, w_range, (0.0, spec.t_final), &spec.grid)?;
    select_dt(&spec.grid, alpha, spec.cfl, spec.t_final)
}

/// Range of `W` reachable from states in the box: weights are nonnegative
/// with total mass at most one, so `W` stays in the hull of `J(box) ∪ {0}`.
fn nonlinearity_range(model: &dyn FluxModel) -> (f64, f64) {
    let (a, b) = model.state_box();
    let mut lo: f64 = 0.0;
    let mut hi: f64 = 0.0;
    for k in 0..=200 {
        let v = model.nonlinearity(a + (b - a) * k as f64 / 200.0);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Where the frozen field of each step comes from.
enum Source {
    Local,
    Spatial(Convolver),
    Memory {
        engine: MemoryEngine,
        causal: Causality,
        lag_zero: f64,
    },
    Delay {
        history: History,
        steps: usize,
        conv: Convolver,
    },
}

struct Solver<'a> {
    spec: &'a ExperimentSpec,
    grid: &'a Grid,
    stepping: TimeStepping,
    source: Source,
    truncation_depth: usize,
    dropped_mass: f64,
}

impl<'a> Solver<'a> {
    fn new(spec: &'a ExperimentSpec) -> Result<Self> {
        let stepping = time_stepping(spec)?;
        let grid = &spec.grid;
        let dt = stepping.dt;
        let weights = spec.spatial_weights()?;
        let convolver = |w: &DiscreteWeights| Convolver::select(w, grid, spec.fast_path);
        let j = |q: f64| spec.model.nonlinearity(q);
        let mut truncation_depth = 0;
        let mut dropped_mass = 0.0;
        let source = match spec.mode {
            NonlocalMode::Local => Source::Local,
            NonlocalMode::Spatial => Source::Spatial(convolver(weights.as_ref().unwrap())?),
            NonlocalMode::Memory { kernel, causal } => {
                let recursive = match spec.fast_path {
                    FastPath::Recursive => true,
                    FastPath::Auto => matches!(kernel, TemporalKernel::Exponential { .. }),
                    _ => false,
                };
                if !spec.historical.is_zero() {
                    truncation_depth = kernel.truncation_lags(dt, spec.truncation_eps);
                    if let Some(s) = kernel.support_lags(dt) {
                        truncation_depth = truncation_depth.min(s);
                    }
                    dropped_mass = kernel.tail_mass(truncation_depth as f64 * dt);
                    log::info!(
                        "historical datum truncated after {truncation_depth} lags, dropped kernel mass {dropped_mass:e}"
                    );
                }
                let conv = convolver(weights.as_ref().unwrap())?;
                let engine = MemoryEngine::new(
                    &kernel,
                    recursive,
                    grid,
                    dt,
                    stepping.num_steps,
                    spec.historical.clone(),
                    truncation_depth,
                    conv,
                    &j,
                )?;
                Source::Memory {
                    engine,
                    causal,
                    lag_zero: kernel.lag_zero_weight(dt),
                }
            }
            NonlocalMode::Delay { delta } => {
                let steps = ((delta / dt).round() as usize).max(1);
                if (steps as f64 * dt - delta).abs() > 0.5 * dt {
                    log::warn!(
                        "delay {delta} rounded to {steps} steps of {dt} (error exceeds half a step)"
                    );
                }
                Source::Delay {
                    history: History::new(grid, dt, spec.historical.clone(), 0),
                    steps,
                    conv: convolver(weights.as_ref().unwrap())?,
                }
            }
        };
        Ok(Solver {
            spec,
            grid,
            stepping,
            source,
            truncation_depth,
            dropped_mass,
        })
    }

    fn j(&self) -> impl Fn(f64) -> f64 + '_ {
        |q| self.spec.model.nonlinearity(q)
    }

    /// Feeds an already computed level to the history-carrying sources.
    fn record(&mut self, level: &[f64]) {
        let model = self.spec.model.clone();
        let j = move |q: f64| model.nonlinearity(q);
        match &mut self.source {
            Source::Memory { engine, .. } => engine.push(level, &j),
            Source::Delay { history, .. } => history.push(level.to_vec()),
            _ => {}
        }
    }

    /// One frozen-field update from `q`.
    fn advance(&self, q: &[f64], w: &[f64], n: usize) -> Result<(Vec<f64>, [f64; 2])> {
        let t = self.stepping.time(n);
        let dt = self.stepping.dt;
        let model = self.spec.model.as_ref();
        let h = interface_fluxes(self.spec.scheme, q, w, self.grid, dt, model, t);
        let out = conservative_update(q, &h, self.grid, dt, model, n)?;
        Ok((out, [h[0], h[self.grid.num_cells]]))
    }

    /// Advances level `n` to `n + 1`; `q` is level `n` and all earlier levels are recorded.
    fn step(&mut self, q: &[f64], n: usize) -> Result<Step> {
        let num_cells = self.grid.num_cells;
        let fixed_point = self.spec.picard_mode == PicardMode::FixedPoint;
        match &self.source {
            Source::Local => {
                let w = vec![0.0; num_cells];
                self.iterate(q, n, |_| Ok(w.clone()), fixed_point)
            }
            Source::Spatial(conv) => {
                let j = self.j();
                self.iterate(q, n, |it| Ok(conv.apply_with(it, &j)), fixed_point)
            }
            Source::Memory {
                causal: Causality::Strict,
                engine,
                ..
            } => {
                let w = engine.field(n)?.values;
                let out = self.iterate(q, n, |_| Ok(w.clone()), false);
                self.record(q);
                out
            }
            Source::Memory {
                causal: Causality::SemiImplicit,
                ..
            } => {
                self.record(q);
                let Source::Memory {
                    engine, lag_zero, ..
                } = &self.source
                else {
                    unreachable!()
                };
                let base = engine.field(n + 1)?.values;
                let conv = engine.convolver();
                let j = self.j();
                let k0 = *lag_zero;
                self.iterate(
                    q,
                    n,
                    |it| {
                        let c = conv.apply_with(it, &j);
                        Ok(base.iter().zip(&c).map(|(b, v)| b + k0 * v).collect())
                    },
                    fixed_point,
                )
            }
            Source::Delay { .. } => {
                self.record(q);
                let Source::Delay {
                    history,
                    steps,
                    conv,
                } = &self.source
                else {
                    unreachable!()
                };
                let level = n as i64 - *steps as i64;
                let w = conv.apply_with(&history.level(level)?, &self.j());
                self.iterate(q, n, |_| Ok(w.clone()), false)
            }
        }
    }

    /// Picard loop `q^{(k+1)} = Q_h[W(q^{(k)})](q_n)` from `q^{(0)} = q_n`.
    /// With `fixed_point == false` this is the single direct update.
    fn iterate(
        &self,
        q: &[f64],
        n: usize,
        w_of: impl Fn(&[f64]) -> Result<Vec<f64>>,
        fixed_point: bool,
    ) -> Result<Step> {
        if !fixed_point {
            let w = w_of(q)?;
            let (next, bf) = self.advance(q, &w, n)?;
            return Ok(Step {
                q: next,
                w,
                boundary: bf,
                iters: 1,
                residuals: Vec::new(),
            });
        }
        let tol = self.spec.picard_tol;
        let mut iterate = q.to_vec();
        let mut residuals = Vec::new();
        for k in 1..=self.spec.picard_max_iters {
            let w = w_of(&iterate)?;
            let (next, bf) = self.advance(q, &w, n)?;
            let r = next
                .iter()
                .zip(&iterate)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            residuals.push(r);
            if r < tol {
                return Ok(Step {
                    q: next,
                    w,
                    boundary: bf,
                    iters: k,
                    residuals,
                });
            }
            iterate = next;
        }
        Err(Error::NonConvergence {
            step: n,
            iters: self.spec.picard_max_iters,
            last: *residuals.last().unwrap_or(&f64::NAN),
            residuals,
        })
    }
}

struct Step {
    q: Vec<f64>,
    w: Vec<f64>,
    boundary: [f64; 2],
    iters: usize,
    residuals: Vec<f64>,
}

/// Runs the experiment, keeping whatever was computed if a step fails.
pub fn run_partial(spec: &ExperimentSpec) -> RunOutcome {
    run_from_partial(spec, vec![spec.initial_field()])
}

/// Runs the experiment to `t_final`.
pub fn run(spec: &ExperimentSpec) -> Result<RunResult> {
    run_partial(spec).into_result()
}

/// Runs a delay experiment.
pub fn run_delay(spec: &ExperimentSpec) -> Result<RunResult> {
    if !matches!(spec.mode, NonlocalMode::Delay { .. }) {
        return Err(Error::Mode("run_delay needs nonlocal.mode = \"delay\"".into()));
    }
    run(spec)
}

/// Continues a run from previously computed levels `0..=s`.
///
/// The returned trajectory covers all levels, with the given prefix copied in.
pub fn resume(spec: &ExperimentSpec, prefix: Vec<Vec<f64>>) -> Result<RunResult> {
    run_from_partial(spec, prefix).into_result()
}

fn empty_result(spec: &ExperimentSpec, stepping: TimeStepping) -> RunResult {
    RunResult {
        grid: spec.grid.clone(),
        stepping,
        scheme: spec.scheme,
        picard_mode: spec.picard_mode,
        stride: spec.stride,
        levels: Vec::new(),
        trajectory: Vec::new(),
        picard_iters: Vec::new(),
        residuals: Vec::new(),
        w_fields: Vec::new(),
        boundary_fluxes: Vec::new(),
        truncation_depth: 0,
        dropped_mass: 0.0,
        delay_steps: None,
        convolver: None,
    }
}

fn run_from_partial(spec: &ExperimentSpec, prefix: Vec<Vec<f64>>) -> RunOutcome {
    let failed = |e: Error| {
        let stepping = TimeStepping {
            t_final: spec.t_final,
            dt: f64::NAN,
            num_steps: 0,
            alpha: f64::NAN,
            cfl: spec.cfl,
        };
        RunOutcome {
            result: empty_result(spec, stepping),
            error: Some(e),
        }
    };
    let mut solver = match Solver::new(spec) {
        Ok(s) => s,
        Err(e) => return failed(e),
    };
    let stepping = solver.stepping;
    let mut result = empty_result(spec, stepping);
    result.truncation_depth = solver.truncation_depth;
    result.dropped_mass = solver.dropped_mass;
    result.delay_steps = match &solver.source {
        Source::Delay { steps, .. } => Some(*steps),
        _ => None,
    };
    result.convolver = match &solver.source {
        Source::Local => None,
        Source::Spatial(c) | Source::Delay { conv: c, .. } => Some(conv_name(c)),
        Source::Memory { engine, .. } => Some(conv_name(engine.convolver())),
    };
    if prefix.is_empty() || prefix.len() > stepping.num_steps + 1 {
        return failed(Error::Argument(format!(
            "restart prefix must hold 1..={} levels, got {}",
            stepping.num_steps + 1,
            prefix.len()
        )));
    }
    if prefix.iter().any(|l| l.len() != spec.grid.num_cells) {
        return failed(Error::Argument("restart level has the wrong length".into()));
    }
    let stride = spec.stride.max(1);
    let keep = |n: usize| n % stride == 0 || n == stepping.num_steps;
    let start = prefix.len() - 1;
    for (n, level) in prefix.iter().enumerate() {
        if keep(n) {
            result.levels.push(n);
            result.trajectory.push(level.clone());
        }
        if n < start {
            solver.record(level);
        }
    }
    let mut q = prefix.into_iter().last().unwrap();
    for n in start..stepping.num_steps {
        match solver.step(&q, n) {
            Ok(s) => {
                result.picard_iters.push(s.iters);
                result.residuals.push(s.residuals);
                result.boundary_fluxes.push(s.boundary);
                if stride == 1 {
                    result.w_fields.push(s.w);
                }
                q = s.q;
                if keep(n + 1) {
                    result.levels.push(n + 1);
                    result.trajectory.push(q.clone());
                }
            }
            Err(e) => {
                if !keep(n) {
                    result.levels.push(n);
                    result.trajectory.push(q);
                }
                return RunOutcome {
                    result,
                    error: Some(e),
                };
            }
        }
    }
    RunOutcome {
        result,
        error: None,
    }
}

fn conv_name(c: &Convolver) -> &'static str {
    if c.is_fft() {
        "fft"
    } else {
        "direct"
    }
}

/// Fixed-point and direct runs of one experiment with their pointwise difference.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub fixed_point: RunResult,
    pub direct: RunResult,
    /// `|q_fp - q_direct|` at every stored level.
    pub pointwise: Vec<Vec<f64>>,
    pub max_error: f64,
    /// Largest per-level `Σ |q_fp - q_direct| dx`.
    pub l1_error: f64,
}

pub fn compare(spec: &ExperimentSpec) -> Result<Comparison> {
    let mut fp = spec.clone();
    fp.picard_mode = PicardMode::FixedPoint;
    fp.config.picard.mode = PicardMode::FixedPoint;
    let mut direct = spec.clone();
    direct.picard_mode = PicardMode::Direct;
    direct.config.picard.mode = PicardMode::Direct;
    compare_runs(run(&fp)?, run(&direct)?)
}

/// Pointwise comparison of two runs on the same grid, ladder and scheme.
pub fn compare_runs(fixed_point: RunResult, direct: RunResult) -> Result<Comparison> {
    if fixed_point.scheme != direct.scheme {
        return Err(Error::config(
            "scheme.kind",
            "comparison requires the same scheme in both runs",
        ));
    }
    if fixed_point.grid != direct.grid
        || fixed_point.levels != direct.levels
        || fixed_point.stepping.dt != direct.stepping.dt
    {
        return Err(Error::Argument(
            "comparison requires identical grids and time levels".into(),
        ));
    }
    let dx = fixed_point.grid.dx;
    let pointwise: Vec<Vec<f64>> = fixed_point
        .trajectory
        .iter()
        .zip(&direct.trajectory)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect())
        .collect();
    let max_error = pointwise
        .iter()
        .flatten()
        .copied()
        .fold(0.0, f64::max);
    let l1_error = pointwise
        .iter()
        .map(|l| l.iter().sum::<f64>() * dx)
        .fold(0.0, f64::max);
    Ok(Comparison {
        fixed_point,
        direct,
        pointwise,
        max_error,
        l1_error,
    })
}
