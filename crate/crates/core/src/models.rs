//! Flux models `F(t, x, w, q)`, nonlinearities `J`, and initial data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flux `F(t, x, w, q)` together with the structural facts the schemes rely on.
pub trait FluxModel: Send + Sync {
    fn name(&self) -> &str;

    fn flux(&self, t: f64, x: f64, w: f64, q: f64) -> f64;

    /// `∂F/∂q`; central difference unless overridden.
    fn dflux_dq(&self, t: f64, x: f64, w: f64, q: f64) -> f64 {
        let h = 1e-6;
        (self.flux(t, x, w, q + h) - self.flux(t, x, w, q - h)) / (2.0 * h)
    }

    /// The map `J` applied before convolving; `J(0) = 0`.
    fn nonlinearity(&self, q: f64) -> f64 {
        q
    }

    /// Interior extrema of `q ↦ F(t, x, w, q)`, valid for every `(t, x, w)`.
    /// `None` means unknown, which sends the Godunov flux to a numerical search.
    fn critical_points(&self) -> Option<&[f64]>;

    /// States `(q_min, q_max)` at which the flux vanishes identically.
    fn vanishing_states(&self) -> Option<(f64, f64)>;

    /// A-priori admissible state interval.
    fn state_box(&self) -> (f64, f64);

    fn depends_on_x(&self) -> bool {
        false
    }

    fn depends_on_t(&self) -> bool {
        false
    }

    fn depends_on_w(&self) -> bool {
        true
    }
}

/// `q(1 - q) V_max (1 - w)` with `J = id`.
#[derive(Debug, Clone)]
pub struct LwrNonlocal {
    pub v_max: f64,
}

pub fn lwr_nonlocal_flux(v_max: f64) -> Result<LwrNonlocal> {
    if !(v_max > 0.0) {
        return Err(Error::config("model.vmax", "V_max must be positive"));
    }
    Ok(LwrNonlocal { v_max })
}

const HALF: [f64; 1] = [0.5];

impl FluxModel for LwrNonlocal {
    fn name(&self) -> &str {
        "lwr_nonlocal"
    }
    fn flux(&self, _t: f64, _x: f64, w: f64, q: f64) -> f64 {
        q * (1.0 - q) * self.v_max * (1.0 - w)
    }
    fn dflux_dq(&self, _t: f64, _x: f64, w: f64, q: f64) -> f64 {
        (1.0 - 2.0 * q) * self.v_max * (1.0 - w)
    }
    fn critical_points(&self) -> Option<&[f64]> {
        Some(&HALF)
    }
    fn vanishing_states(&self) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
    fn state_box(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

/// Classical local LWR flux `V_max q(1 - q)`, independent of `w`.
#[derive(Debug, Clone)]
pub struct LwrLocal {
    pub v_max: f64,
}

impl FluxModel for LwrLocal {
    fn name(&self) -> &str {
        "lwr_local"
    }
    fn flux(&self, _t: f64, _x: f64, _w: f64, q: f64) -> f64 {
        self.v_max * q * (1.0 - q)
    }
    fn dflux_dq(&self, _t: f64, _x: f64, _w: f64, q: f64) -> f64 {
        self.v_max * (1.0 - 2.0 * q)
    }
    fn critical_points(&self) -> Option<&[f64]> {
        Some(&HALF)
    }
    fn vanishing_states(&self) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
    fn state_box(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn depends_on_w(&self) -> bool {
        false
    }
}

/// Speed limit `V_max(x)`: piecewise-constant levels smoothed by a Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    /// Interval edges, `levels.len() + 1` of them, increasing.
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
    /// Standard deviation of the smoothing Gaussian; zero keeps the steps.
    pub gaussian_sigma: f64,
    /// Period of the domain; when set the profile is smoothed periodically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        SpeedProfile {
            breakpoints: vec![f64::NEG_INFINITY, f64::INFINITY],
            levels: vec![v],
            gaussian_sigma: 0.0,
            period: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.breakpoints.len() != self.levels.len() + 1 {
            return Err(Error::config(
                "model.vmax.breakpoints",
                "need exactly one more breakpoint than levels",
            ));
        }
        if self.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config(
                "model.vmax.breakpoints",
                "breakpoints must be strictly increasing",
            ));
        }
        if self.levels.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config(
                "model.vmax.levels",
                "levels must be finite and nonnegative",
            ));
        }
        if !(self.gaussian_sigma >= 0.0) {
            return Err(Error::config(
                "model.vmax.gaussian_sigma",
                "sigma must be nonnegative",
            ));
        }
        if let Some(p) = self.period {
            if !(p > 0.0) {
                return Err(Error::config("domain", "period must be positive"));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.period {
            None => self.eval_line(x),
            Some(p) => {
                // smoothing tails beyond two periods are below erf precision for sane sigmas
                let images = if self.gaussian_sigma == 0.0 { 0 } else { 2 };
                let lo = self.breakpoints[0];
                let base = lo + (x - lo).rem_euclid(p);
                (-images..=images)
                    .map(|k| self.eval_line(base + k as f64 * p))
                    .sum()
            }
        }
    }

    fn eval_line(&self, x: f64) -> f64 {
        let s = self.gaussian_sigma;
        self.levels
            .iter()
            .zip(self.breakpoints.windows(2))
            .map(|(&v, ab)| {
                let (a, b) = (ab[0], ab[1]);
                if s == 0.0 {
                    if x >= a && x < b {
                        v
                    } else {
                        0.0
                    }
                } else {
                    v * (normal_cdf((x - a) / s) - normal_cdf((x - b) / s))
                }
            })
            .sum()
    }

    pub fn max_level(&self) -> f64 {
        self.levels.iter().copied().fold(0.0, f64::max)
    }
}

fn normal_cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
    }
}

/// `V_max(x) ρ(1 - ρ) v(w)` with `v(w) = (1 - w)^{m-1} (1 + w)^m`.
#[derive(Debug, Clone)]
pub struct GoatinFlux {
    pub m: f64,
    pub speed: SpeedProfile,
}

pub fn goatin_flux(m: f64, speed: SpeedProfile) -> Result<GoatinFlux> {
    if !(m >= 1.0) {
        return Err(Error::config("model.m", format!("exponent must be >= 1, got {m}")));
    }
    speed.validate()?;
    Ok(GoatinFlux { m, speed })
}

impl GoatinFlux {
    pub fn velocity(&self, w: f64) -> f64 {
        (1.0 - w).powf(self.m - 1.0) * (1.0 + w).powf(self.m)
    }
}

impl FluxModel for GoatinFlux {
    fn name(&self) -> &str {
        "goatin"
    }
    fn flux(&self, _t: f64, x: f64, w: f64, q: f64) -> f64 {
        self.speed.eval(x) * q * (1.0 - q) * self.velocity(w)
    }
    fn dflux_dq(&self, _t: f64, x: f64, w: f64, q: f64) -> f64 {
        self.speed.eval(x) * (1.0 - 2.0 * q) * self.velocity(w)
    }
    fn critical_points(&self) -> Option<&[f64]> {
        Some(&HALF)
    }
    fn vanishing_states(&self) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
    fn state_box(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn depends_on_x(&self) -> bool {
        self.speed.levels.len() > 1
    }
}

/// `V_max(x) q(1 - q) v(w)` with `v` interpolated from a table.
#[derive(Debug, Clone)]
pub struct TabulatedVelocityFlux {
    w_nodes: Vec<f64>,
    v_nodes: Vec<f64>,
    pub speed: SpeedProfile,
}

impl TabulatedVelocityFlux {
    pub fn new(table: Vec<[f64; 2]>, speed: SpeedProfile) -> Result<Self> {
        if table.len() < 2 {
            return Err(Error::config(
                "model.velocity_table",
                "need at least two [w, v] rows",
            ));
        }
        if table.windows(2).any(|r| !(r[1][0] > r[0][0])) {
            return Err(Error::config(
                "model.velocity_table",
                "w nodes must be strictly increasing",
            ));
        }
        if table.iter().any(|r| !r[1].is_finite()) {
            return Err(Error::config("model.velocity_table", "non-finite velocity"));
        }
        speed.validate()?;
        Ok(TabulatedVelocityFlux {
            w_nodes: table.iter().map(|r| r[0]).collect(),
            v_nodes: table.iter().map(|r| r[1]).collect(),
            speed,
        })
    }

    /// Piecewise-linear velocity, held constant beyond the table ends.
    pub fn velocity(&self, w: f64) -> f64 {
        let n = self.w_nodes.len();
        if w <= self.w_nodes[0] {
            return self.v_nodes[0];
        }
        if w >= self.w_nodes[n - 1] {
            return self.v_nodes[n - 1];
        }
        let k = self.w_nodes.partition_point(|&x| x <= w).clamp(1, n - 1);
        let t = (w - self.w_nodes[k - 1]) / (self.w_nodes[k] - self.w_nodes[k - 1]);
        self.v_nodes[k - 1] * (1.0 - t) + self.v_nodes[k] * t
    }
}

impl FluxModel for TabulatedVelocityFlux {
    fn name(&self) -> &str {
        "custom"
    }
    fn flux(&self, _t: f64, x: f64, w: f64, q: f64) -> f64 {
        self.speed.eval(x) * q * (1.0 - q) * self.velocity(w)
    }
    fn dflux_dq(&self, _t: f64, x: f64, w: f64, q: f64) -> f64 {
        self.speed.eval(x) * (1.0 - 2.0 * q) * self.velocity(w)
    }
    fn critical_points(&self) -> Option<&[f64]> {
        // q(1 - q) v has its extremum at 1/2 only when v keeps one sign
        if self.v_nodes.iter().all(|&v| v >= 0.0) || self.v_nodes.iter().all(|&v| v <= 0.0) {
            Some(&HALF)
        } else {
            None
        }
    }
    fn vanishing_states(&self) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
    fn state_box(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn depends_on_x(&self) -> bool {
        self.speed.levels.len() > 1
    }
}

/// Initial density profiles, evaluated as exact cell averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    /// Sum of `height * 1_[a, b]`.
    Plateaus { plateaus: Vec<[f64; 3]> },
    Constant { value: f64 },
    /// `mean + amplitude sin(2π wavenumber (x - x0) / length)`.
    Sine {
        mean: f64,
        amplitude: f64,
        wavenumber: f64,
        x0: f64,
        length: f64,
    },
    /// `left` for `x < x0`, `right` beyond.
    Riemann { left: f64, right: f64, x0: f64 },
}

impl InitialDatum {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            InitialDatum::Plateaus { plateaus } => plateaus
                .iter()
                .filter(|p| x >= p[0] && x <= p[1])
                .map(|p| p[2])
                .sum(),
            InitialDatum::Constant { value } => *value,
            InitialDatum::Sine {
                mean,
                amplitude,
                wavenumber,
                x0,
                length,
            } => {
                mean + amplitude
                    * (2.0 * std::f64::consts::PI * wavenumber * (x - x0) / length).sin()
            }
            InitialDatum::Riemann { left, right, x0 } => {
                if x < *x0 {
                    *left
                } else {
                    *right
                }
            }
        }
    }

    /// Exact average over `[a, b]`.
    pub fn cell_average(&self, a: f64, b: f64) -> f64 {
        let h = b - a;
        let overlap = |lo: f64, hi: f64| (b.min(hi) - a.max(lo)).max(0.0);
        match self {
            InitialDatum::Plateaus { plateaus } => {
                plateaus.iter().map(|p| p[2] * overlap(p[0], p[1])).sum::<f64>() / h
            }
            InitialDatum::Constant { value } => *value,
            InitialDatum::Sine {
                mean,
                amplitude,
                wavenumber,
                x0,
                length,
            } => {
                let k = 2.0 * std::f64::consts::PI * wavenumber / length;
                mean + amplitude * ((k * (a - x0)).cos() - (k * (b - x0)).cos()) / (k * h)
            }
            InitialDatum::Riemann { left, right, x0 } => {
                (left * overlap(f64::NEG_INFINITY, *x0) + right * overlap(*x0, f64::INFINITY)) / h
            }
        }
    }

    /// Cell averages on a grid.
    pub fn sample(&self, grid: &crate::grid::Grid) -> Vec<f64> {
        (0..grid.num_cells)
            .map(|i| self.cell_average(grid.interface(i), grid.interface(i + 1)))
            .collect()
    }

    pub fn range(&self) -> (f64, f64) {
        match self {
            InitialDatum::Plateaus { plateaus } => {
                // the profile is constant between consecutive endpoints, and
                // zero outside all plateaus
                let mut ends: Vec<f64> = plateaus.iter().flat_map(|p| [p[0], p[1]]).collect();
                ends.sort_by(f64::total_cmp);
                let mut probes = ends.clone();
                probes.extend(ends.windows(2).map(|w| 0.5 * (w[0] + w[1])));
                probes.push(f64::NEG_INFINITY);
                probes
                    .iter()
                    .map(|&x| self.eval(x))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            }
            InitialDatum::Constant { value } => (*value, *value),
            InitialDatum::Sine {
                mean, amplitude, ..
            } => (mean - amplitude.abs(), mean + amplitude.abs()),
            InitialDatum::Riemann { left, right, .. } => (left.min(*right), left.max(*right)),
        }
    }
}
