//! Spatial and temporal kernels and their discrete, renormalized images.
//!
//! Spatial kernels act through `W(x) = ∫ γ(x - y) J(q(y)) dy`; the variable
//! `z = x - y` is the offset from the evaluation point to the source point
//! with the sign flipped, so a kernel supported on `[-R, 0]` reads the
//! field ahead of `x`. On the grid an offset `j` means `z = j * dx` and the
//! source cell is `i - j`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::neumaier_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpatialKernel {
    /// `(2/R) cos²(πz / 2R)` on `[-R, 0]`.
    RaisedCosineLeft { radius: f64 },
    /// Wendland-type quintic bump of radius `eta` centred at `delta`:
    /// `3/(2η) (1 - s)^4 (1 + 4s)` with `s = |z - δ| / η ≤ 1`.
    QuinticShifted { eta: f64, delta: f64 },
    /// Piecewise-linear kernel through `(z, value)` nodes, zero outside.
    Tabulated(TabulatedKernel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedKernel {
    z: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedKernel {
    /// Builds a tabulated kernel and rescales it to unit trapezoidal mass.
    pub fn new(z: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if z.len() != values.len() || z.len() < 2 {
            return Err(Error::config(
                "kernel.spatial.table",
                "need at least two (z, value) rows of equal length",
            ));
        }
        if z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config(
                "kernel.spatial.table",
                "offsets must be strictly increasing",
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config(
                "kernel.spatial.table",
                "kernel values must be finite and nonnegative",
            ));
        }
        let mass = neumaier_sum(
            z.windows(2)
                .zip(values.windows(2))
                .map(|(zz, vv)| 0.5 * (zz[1] - zz[0]) * (vv[0] + vv[1])),
        );
        if !(mass > 0.0) {
            return Err(Error::config("kernel.spatial.table", "kernel has zero mass"));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(TabulatedKernel { z, values })
    }

    /// Parses `z,value` rows; blank lines and `#` comments are skipped, as is a
    /// non-numeric header row.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut z = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (a, b) = match (parts.next(), parts.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::config(
                        "kernel.spatial.table",
                        format!("line {}: expected `z,value`", lineno + 1),
                    ))
                }
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    z.push(a);
                    values.push(b);
                }
                _ if z.is_empty() => continue,
                _ => {
                    return Err(Error::config(
                        "kernel.spatial.table",
                        format!("line {}: not a number", lineno + 1),
                    ))
                }
            }
        }
        Self::new(z, values)
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.z.len();
        if x < self.z[0] || x > self.z[n - 1] {
            return 0.0;
        }
        let k = self.z.partition_point(|&zz| zz <= x).clamp(1, n - 1);
        let (z0, z1) = (self.z[k - 1], self.z[k]);
        let t = (x - z0) / (z1 - z0);
        self.values[k - 1] * (1.0 - t) + self.values[k] * t
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.z, &self.values)
    }
}

impl SpatialKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SpatialKernel::RaisedCosineLeft { radius } if !(radius > 0.0) => {
                Err(Error::config("kernel.spatial.R", "radius must be positive"))
            }
            SpatialKernel::QuinticShifted { eta, delta } => {
                if !(eta > 0.0) {
                    Err(Error::config("kernel.spatial.eta", "eta must be positive"))
                } else if !delta.is_finite() {
                    Err(Error::config("kernel.spatial.delta", "delta must be finite"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Closed support interval in `z`.
    pub fn support(&self) -> (f64, f64) {
        match self {
            SpatialKernel::RaisedCosineLeft { radius } => (-radius, 0.0),
            SpatialKernel::QuinticShifted { eta, delta } => (delta - eta, delta + eta),
            SpatialKernel::Tabulated(t) => (t.z[0], t.z[t.z.len() - 1]),
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            SpatialKernel::RaisedCosineLeft { radius } => {
                if (-radius..=0.0).contains(&z) {
                    let c = (PI * z / (2.0 * radius)).cos();
                    2.0 / radius * c * c
                } else {
                    0.0
                }
            }
            SpatialKernel::QuinticShifted { eta, delta } => {
                let s = (z - delta).abs() / eta;
                if s <= 1.0 {
                    1.5 / eta * (1.0 - s).powi(4) * (1.0 + 4.0 * s)
                } else {
                    0.0
                }
            }
            SpatialKernel::Tabulated(t) => t.eval(z),
        }
    }
}

/// Discrete image of a spatial kernel: `W_i = Σ_j weights[j] dx J(q[i - offsets[j]])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteWeights {
    pub offsets: Vec<isize>,
    pub weights: Vec<f64>,
    pub dx: f64,
}

impl DiscreteWeights {
    /// `Σ weights · dx`, compensated.
    pub fn discrete_mass(&self) -> f64 {
        neumaier_sum(self.weights.iter().map(|w| w * self.dx))
    }

    /// Per-offset quadrature masses `weights[j] * dx`.
    pub fn masses(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w * self.dx).collect()
    }

    pub fn min_offset(&self) -> isize {
        self.offsets.iter().copied().min().unwrap_or(0)
    }

    pub fn max_offset(&self) -> isize {
        self.offsets.iter().copied().max().unwrap_or(0)
    }

    /// Number of cells spanned by the stencil.
    pub fn span(&self) -> usize {
        (self.max_offset() - self.min_offset()) as usize + 1
    }
}

/// Raw midpoint samples `γ(j dx)` over the support, before renormalization.
pub fn sample_spatial_raw(kernel: &SpatialKernel, dx: f64) -> Result<(Vec<isize>, Vec<f64>)> {
    if !(dx > 0.0) {
        return Err(Error::Argument(format!("dx must be positive, got {dx}")));
    }
    kernel.validate()?;
    let (lo, hi) = kernel.support();
    if hi - lo < dx {
        return Err(Error::KernelResolution(format!(
            "kernel support width {} is narrower than one cell (dx = {dx})",
            hi - lo
        )));
    }
    let j_lo = (lo / dx - 1e-9).ceil() as isize;
    let j_hi = (hi / dx + 1e-9).floor() as isize;
    let offsets: Vec<isize> = (j_lo..=j_hi).collect();
    // nodes that sit on the support boundary up to rounding are pulled inside
    let values: Vec<f64> = offsets
        .iter()
        .map(|&j| kernel.eval((j as f64 * dx).clamp(lo, hi)))
        .collect();
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::KernelResolution(
            "all sampled kernel values are zero".into(),
        ));
    }
    Ok((offsets, values))
}

/// Samples the kernel at cell offsets and renormalizes to `Σ w dx = 1`.
pub fn sample_spatial(kernel: &SpatialKernel, dx: f64) -> Result<DiscreteWeights> {
    let (offsets, raw) = sample_spatial_raw(kernel, dx)?;
    let total = neumaier_sum(raw.iter().map(|v| v * dx));
    let mut weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // second pass removes the rounding left by the division
    let residual = neumaier_sum(weights.iter().map(|w| w * dx));
    if residual != 1.0 {
        weights.iter_mut().for_each(|w| *w /= residual);
    }
    Ok(DiscreteWeights {
        offsets,
        weights,
        dx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TemporalKernel {
    /// `(1/τ0) e^{-τ/τ0}`.
    Exponential { tau0: f64 },
    /// `(τ/τ0²) e^{-τ/τ0}`.
    Erlang { tau0: f64 },
    /// `(2/w)(1 - τ/w)` on `[0, w]`.
    Triangular { width: f64 },
    None,
}

impl TemporalKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TemporalKernel::Exponential { tau0 } | TemporalKernel::Erlang { tau0 }
                if !(tau0 > 0.0) =>
            {
                Err(Error::config("kernel.temporal.tau0", "tau0 must be positive"))
            }
            TemporalKernel::Triangular { width } if !(width > 0.0) => {
                Err(Error::config("kernel.temporal.width", "width must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, tau: f64) -> Result<f64> {
        if tau < 0.0 || tau.is_nan() {
            return Err(Error::Argument(format!(
                "temporal kernel evaluated at negative lag {tau}"
            )));
        }
        Ok(self.eval_unchecked(tau))
    }

    fn eval_unchecked(&self, tau: f64) -> f64 {
        match *self {
            TemporalKernel::Exponential { tau0 } => (-tau / tau0).exp() / tau0,
            TemporalKernel::Erlang { tau0 } => tau / (tau0 * tau0) * (-tau / tau0).exp(),
            TemporalKernel::Triangular { width } => {
                if tau < width {
                    2.0 / width * (1.0 - tau / width)
                } else {
                    0.0
                }
            }
            TemporalKernel::None => 0.0,
        }
    }

    /// Continuous tail mass `∫_T^∞ K`.
    pub fn tail_mass(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match *self {
            TemporalKernel::Exponential { tau0 } => (-t / tau0).exp(),
            TemporalKernel::Erlang { tau0 } => (1.0 + t / tau0) * (-t / tau0).exp(),
            TemporalKernel::Triangular { width } => {
                if t < width {
                    let r = 1.0 - t / width;
                    r * r
                } else {
                    0.0
                }
            }
            TemporalKernel::None => 0.0,
        }
    }

    /// Smallest lag count `M` with `tail_mass(M dt) < eps`.
    pub fn truncation_lags(&self, dt: f64, eps: f64) -> usize {
        if matches!(self, TemporalKernel::None) {
            return 0;
        }
        // tails are monotone, so a doubling search followed by bisection is exact
        let mut hi = 1usize;
        while self.tail_mass(hi as f64 * dt) >= eps {
            hi *= 2;
        }
        let mut lo = hi / 2;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.tail_mass(mid as f64 * dt) < eps {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// Last lag with a possibly nonzero weight, if the kernel has compact support.
    pub fn support_lags(&self, dt: f64) -> Option<usize> {
        match *self {
            TemporalKernel::Triangular { width } => Some((width / dt).ceil() as usize),
            TemporalKernel::None => Some(0),
            _ => None,
        }
    }

    /// Lag-0 weight `K(0) dt`, used only by the semi-implicit memory rule.
    pub fn lag_zero_weight(&self, dt: f64) -> f64 {
        self.eval_unchecked(0.0) * dt
    }
}

/// `weights[m] = K(m dt) dt` for `m = 1..=num_lags`; `weights[0] = 0` since the
/// current level never contributes to the causal sum.
pub fn temporal_lag_weights(kernel: &TemporalKernel, dt: f64, num_lags: usize) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("dt must be positive, got {dt}")));
    }
    let mut w = Vec::with_capacity(num_lags + 1);
    w.push(0.0);
    w.extend((1..=num_lags).map(|m| kernel.eval_unchecked(m as f64 * dt) * dt));
    Ok(w)
}
