//! Checks of the analytic guarantees on computed trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentSpec;
use crate::grid::{apply_boundary, Boundary, Grid};
use crate::numerics::{linear_fit, neumaier_sum};
use crate::schemes::numerical_flux;
use crate::solver::{run, RunResult};

/// `Σ |q_{i+1} - q_i|`, with the wrap-around jump on periodic grids.
pub fn tv_seminorm(field: &[f64], grid: &Grid) -> f64 {
    let inner: f64 = field.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    match (grid.boundary, field.first(), field.last()) {
        (Boundary::Periodic, Some(a), Some(b)) => inner + (a - b).abs(),
        _ => inner,
    }
}

pub fn mass(field: &[f64], grid: &Grid) -> f64 {
    neumaier_sum(field.iter().map(|q| q * grid.dx))
}

pub fn l1_norm(field: &[f64], grid: &Grid) -> f64 {
    neumaier_sum(field.iter().map(|q| q.abs() * grid.dx))
}

pub fn linf_norm(field: &[f64]) -> f64 {
    field.iter().fold(0.0, |m, q| m.max(q.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub q_min: f64,
    pub q_max: f64,
    pub tol: f64,
    pub violations: usize,
    /// Largest distance outside the box, zero when there are no violations.
    pub worst: f64,
}

/// Counts cells with `q < q_min - tol` or `q > q_max + tol`.
pub fn check_max_principle(
    trajectory: &[Vec<f64>],
    q_min: f64,
    q_max: f64,
    tol: f64,
) -> MaxPrincipleReport {
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for &q in trajectory.iter().flatten() {
        let out = (q_min - q).max(q - q_max);
        if out > tol {
            violations += 1;
            worst = worst.max(out);
        }
    }
    MaxPrincipleReport {
        q_min,
        q_max,
        tol,
        violations,
        worst,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// `min_n (42 ‖q0‖_∞ - ‖q^n‖_∞)`.
    pub linf_margin: f64,
    /// `min_n (42 ‖q0‖_1 - ‖q^n‖_1)`.
    pub l1_margin: f64,
    pub satisfied: bool,
}

pub const ENVELOPE_FACTOR: f64 = 42.0;

/// The coarse a-priori boxes `‖q(t)‖ <= 42 ‖q0‖` in `L∞` and `L1`.
pub fn check_bound_envelopes(trajectory: &[Vec<f64>], grid: &Grid) -> EnvelopeReport {
    let Some(q0) = trajectory.first() else {
        return EnvelopeReport {
            linf_margin: 0.0,
            l1_margin: 0.0,
            satisfied: true,
        };
    };
    let linf0 = ENVELOPE_FACTOR * linf_norm(q0);
    let l10 = ENVELOPE_FACTOR * l1_norm(q0, grid);
    let mut linf_margin = f64::INFINITY;
    let mut l1_margin = f64::INFINITY;
    for q in trajectory {
        linf_margin = linf_margin.min(linf0 - linf_norm(q));
        l1_margin = l1_margin.min(l10 - l1_norm(q, grid));
    }
    EnvelopeReport {
        linf_margin,
        l1_margin,
        satisfied: linf_margin >= 0.0 && l1_margin >= 0.0,
    }
}

/// Default Kružkov constants: nine equispaced interior values plus both box ends.
pub fn default_k_samples(q_min: f64, q_max: f64) -> Vec<f64> {
    let mut ks = vec![q_min];
    ks.extend((1..=9).map(|i| q_min + (q_max - q_min) * i as f64 / 10.0));
    ks.push(q_max);
    ks
}

/// Minimum over interior cells and steps of the discrete cell-entropy residual
/// for each `k`.
///
/// Per cell and step the residual is
/// `-(|q_i^{n+1} - k| - |q_i^n - k|)/dt - (Q_{i+1/2} - Q_{i-1/2})/dx - sign(q_i^{n+1} - k)(G_{i+1/2}(k, k) - G_{i-1/2}(k, k))/dx`
/// with the Crandall–Majda entropy flux `Q = G(a ∨ k, b ∨ k) - G(a ∧ k, b ∧ k)`
/// built from the scheme's own numerical flux `G` under the frozen field of
/// that step. The last term accounts for the `x` and `W` dependence of the
/// flux. Entropy-admissible steps give residuals `>= 0`.
pub fn entropy_residual(run: &RunResult, spec: &ExperimentSpec, ks: &[f64]) -> Result<Vec<f64>> {
    if !run.is_full() || run.w_fields.len() != run.stepping.num_steps {
        return Err(Error::Unsupported(
            "entropy residual needs a full-stride trajectory with stored W fields".into(),
        ));
    }
    let grid = &run.grid;
    let n = grid.num_cells;
    let dt = run.stepping.dt;
    let dx = grid.dx;
    let ratio = dx / dt;
    let model = spec.model.as_ref();
    let interior = |i: usize| grid.boundary == Boundary::Periodic || (i > 0 && i + 1 < n);
    let mut mins = vec![f64::INFINITY; ks.len()];
    for step in 0..run.stepping.num_steps {
        let t = run.stepping.time(step);
        let q = apply_boundary(&run.trajectory[step], grid.boundary, 1);
        let w = apply_boundary(&run.w_fields[step], grid.boundary, 1);
        let next = &run.trajectory[step + 1];
        let g = |k: usize, a: f64, b: f64| {
            numerical_flux(run.scheme, a, b, model, t, grid.interface(k), (w[k], w[k + 1]), ratio)
        };
        for (slot, &kc) in ks.iter().enumerate() {
            let entropy_flux: Vec<f64> = (0..=n)
                .map(|k| {
                    let (a, b) = (q[k], q[k + 1]);
                    g(k, a.max(kc), b.max(kc)) - g(k, a.min(kc), b.min(kc))
                })
                .collect();
            let steady: Vec<f64> = (0..=n).map(|k| g(k, kc, kc)).collect();
            for i in (0..n).filter(|&i| interior(i)) {
                let deta = ((next[i] - kc).abs() - (q[i + 1] - kc).abs()) / dt;
                let dq = (entropy_flux[i + 1] - entropy_flux[i]) / dx;
                let src = sign(next[i] - kc) * (steady[i + 1] - steady[i]) / dx;
                let r = -deta - dq - src;
                if r < mins[slot] {
                    mins[slot] = r;
                }
            }
        }
    }
    Ok(mins)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-step discrete balance `mass(n+1) - mass(n) + dt (H_right - H_left)`.
pub fn mass_ledger(run: &RunResult) -> Result<Vec<f64>> {
    if !run.is_full() {
        return Err(Error::Unsupported(
            "mass ledger needs a full-stride trajectory".into(),
        ));
    }
    let dt = run.stepping.dt;
    Ok(run
        .boundary_fluxes
        .iter()
        .enumerate()
        .map(|(n, [left, right])| {
            let dm = mass(&run.trajectory[n + 1], &run.grid) - mass(&run.trajectory[n], &run.grid);
            dm + dt * (right - left)
        })
        .collect())
}

/// Fit of `ln TV(t) ≈ ln TV(0) + c t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvGrowth {
    /// Least-squares rate `c`.
    pub rate: f64,
    pub r_squared: f64,
    /// Smallest `c` with `TV(t) <= TV(0) e^{c t}` on every stored level.
    pub envelope_rate: f64,
}

pub fn tv_growth(times: &[f64], tv: &[f64]) -> Option<TvGrowth> {
    let tv0 = *tv.first()?;
    if !(tv0 > 0.0) {
        return None;
    }
    let pairs: Vec<(f64, f64)> = times
        .iter()
        .zip(tv)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let fit = linear_fit(&x, &y)?;
    let envelope_rate = times
        .iter()
        .zip(tv)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &v)| (v / tv0).ln() / t)
        .fold(f64::NEG_INFINITY, f64::max);
    Some(TvGrowth {
        rate: fit.slope,
        r_squared: fit.r_squared,
        envelope_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub resolutions: Vec<usize>,
    /// `‖q_h - R q_finest‖_{L1}` at the final time for every non-finest grid.
    pub errors: Vec<f64>,
    /// `log2(e_h / e_{h/2})` between consecutive entries of `errors`.
    pub orders: Vec<f64>,
    /// All errors vanish to rounding.
    pub exact: bool,
}

/// Cell-average restriction from a fine grid onto a coarser nested one.
pub fn restrict(fine: &[f64], coarse_cells: usize) -> Result<Vec<f64>> {
    if coarse_cells == 0 || fine.len() % coarse_cells != 0 {
        return Err(Error::Restriction(format!(
            "{} cells do not nest into {coarse_cells}",
            fine.len()
        )));
    }
    let r = fine.len() / coarse_cells;
    Ok(fine
        .chunks(r)
        .map(|c| c.iter().sum::<f64>() / r as f64)
        .collect())
}

/// L1 self-convergence against the finest resolution.
pub fn convergence_study(spec: &ExperimentSpec, resolutions: &[usize]) -> Result<ConvergenceReport> {
    if resolutions.len() < 3 {
        return Err(Error::Argument(
            "convergence study needs at least three resolutions".into(),
        ));
    }
    let mut res = resolutions.to_vec();
    res.sort_unstable();
    res.dedup();
    if res.len() < 3 {
        return Err(Error::Argument("resolutions must be distinct".into()));
    }
    let finest = *res.last().unwrap();
    for &r in &res {
        if finest % r != 0 {
            return Err(Error::Restriction(format!(
                "{r} cells do not nest into the finest grid of {finest}"
            )));
        }
    }
    let finals: Vec<(Vec<f64>, Grid)> = res
        .iter()
        .map(|&r| {
            let s = spec.with_resolution(r)?;
            let out = run(&s)?;
            Ok((out.final_field().to_vec(), out.grid))
        })
        .collect::<Result<_>>()?;
    let (reference, _) = finals.last().unwrap();
    let errors: Vec<f64> = finals[..finals.len() - 1]
        .iter()
        .map(|(q, g)| {
            let r = restrict(reference, g.num_cells)?;
            Ok(neumaier_sum(q.iter().zip(&r).map(|(a, b)| (a - b).abs() * g.dx)))
        })
        .collect::<Result<_>>()?;
    let exact = errors.iter().all(|&e| e <= 1e-13);
    let orders = if exact {
        Vec::new()
    } else {
        errors
            .windows(2)
            .zip(res.windows(2))
            .map(|(e, r)| (e[0] / e[1]).ln() / (r[1] as f64 / r[0] as f64).ln())
            .collect()
    };
    Ok(ConvergenceReport {
        resolutions: res,
        errors,
        orders,
        exact,
    })
}

/// Everything written to `diagnostics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub time: Vec<f64>,
    pub mass: Vec<f64>,
    pub l1: Vec<f64>,
    pub linf: Vec<f64>,
    pub tv: Vec<f64>,
    pub max_principle: Option<MaxPrincipleReport>,
    pub envelopes: EnvelopeReport,
    pub entropy_k: Vec<f64>,
    pub entropy_min: Vec<f64>,
    pub mass_ledger_max: Option<f64>,
    pub tv_growth: Option<TvGrowth>,
    pub picard_iters: Vec<usize>,
    pub picard_median: f64,
    pub picard_max: usize,
    pub dt: f64,
    pub num_steps: usize,
    pub alpha: f64,
    pub courant: f64,
    pub truncation_depth: usize,
    pub dropped_kernel_mass: f64,
    pub config_echo: serde_json::Value,
}

pub fn median(values: &[usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        0.5 * (v[m - 1] + v[m]) as f64
    }
}

pub fn report(run: &RunResult, spec: &ExperimentSpec) -> DiagnosticsReport {
    let grid = &run.grid;
    let traj = &run.trajectory;
    let tv: Vec<f64> = traj.iter().map(|q| tv_seminorm(q, grid)).collect();
    let time = run.times();
    let max_principle = spec
        .model
        .vanishing_states()
        .map(|(lo, hi)| check_max_principle(traj, lo, hi, 1e-10));
    let (entropy_k, entropy_min) = if run.is_full() && !run.w_fields.is_empty() {
        let (lo, hi) = spec.model.state_box();
        let ks = default_k_samples(lo, hi);
        match entropy_residual(run, spec, &ks) {
            Ok(m) => (ks, m),
            Err(_) => (Vec::new(), Vec::new()),
        }
    } else {
        (Vec::new(), Vec::new())
    };
    let mass_ledger_max = mass_ledger(run)
        .ok()
        .map(|v| v.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
    DiagnosticsReport {
        mass: traj.iter().map(|q| mass(q, grid)).collect(),
        l1: traj.iter().map(|q| l1_norm(q, grid)).collect(),
        linf: traj.iter().map(|q| linf_norm(q)).collect(),
        tv_growth: tv_growth(&time, &tv),
        tv,
        time,
        max_principle,
        envelopes: check_bound_envelopes(traj, grid),
        entropy_k,
        entropy_min,
        mass_ledger_max,
        picard_median: median(&run.picard_iters),
        picard_max: run.picard_iters.iter().copied().max().unwrap_or(0),
        picard_iters: run.picard_iters.clone(),
        dt: run.stepping.dt,
        num_steps: run.stepping.num_steps,
        alpha: run.stepping.alpha,
        courant: run.stepping.courant(grid),
        truncation_depth: run.truncation_depth,
        dropped_kernel_mass: run.dropped_mass,
        config_echo: serde_json::to_value(&spec.config).expect("config serializes"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use crate::grid::Boundary;
    use proptest::prelude::*;

    fn g(n: usize, b: Boundary) -> Grid {
        Grid::new(0.0, 1.0, n, b).unwrap()
    }

    #[test]
    fn tv_examples() {
        let grid = g(5, Boundary::Outflow);
        assert_eq!(tv_seminorm(&[0.3; 5], &grid), 0.0);
        let ramp = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(tv_seminorm(&ramp, &grid), 1.0);
        assert_eq!(tv_seminorm(&ramp, &g(5, Boundary::Periodic)), 2.0);
    }

    #[test]
    fn norms_of_negated_field() {
        let grid = g(4, Boundary::Outflow);
        let f = [0.1, -0.4, 0.3, 0.2];
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert_eq!(l1_norm(&f, &grid), l1_norm(&neg, &grid));
        assert_eq!(linf_norm(&f), linf_norm(&neg));
        assert_eq!(mass(&f, &grid), -mass(&neg, &grid));
    }

    #[test]
    fn max_principle_detector() {
        let traj = vec![vec![0.2, 0.8], vec![0.3, 0.8 + 1e-6]];
        let r = check_max_principle(&traj, 0.0, 0.8, 1e-10);
        assert_eq!(r.violations, 1);
        assert!((r.worst - 1e-6).abs() < 1e-12);
        let c = check_max_principle(&[vec![0.5; 3]], 0.0, 1.0, 1e-10);
        assert_eq!(c.violations, 0);
    }

    #[test]
    fn envelope_detector() {
        let grid = g(3, Boundary::Periodic);
        let q0 = vec![0.1, 0.2, 0.3];
        let scaled: Vec<f64> = q0.iter().map(|v| v * 50.0).collect();
        assert!(!check_bound_envelopes(&[q0.clone(), scaled], &grid).satisfied);
        assert!(check_bound_envelopes(&[q0.clone(), q0], &grid).satisfied);
        let zero = check_bound_envelopes(&[vec![0.0; 3], vec![0.0; 3]], &grid);
        assert!(zero.satisfied);
        assert_eq!(zero.linf_margin, 0.0);
    }

    #[test]
    fn restriction_requires_nesting() {
        assert_eq!(restrict(&[1.0, 3.0, 5.0, 7.0], 2).unwrap(), vec![2.0, 6.0]);
        assert!(matches!(restrict(&[1.0; 6], 4), Err(Error::Restriction(_))));
    }

    #[test]
    fn constant_datum_is_exact() {
        let mut c = presets::goatin(3.0, 0.1, 0.06);
        c.model.vmax = crate::config::VmaxConfig::default();
        c.time.t_final = 0.05;
        let s = ExperimentSpec::from_config(&c).unwrap();
        let r = convergence_study(&s, &[50, 100, 200]).unwrap();
        assert!(r.exact, "{:?}", r.errors);
        assert!(convergence_study(&s, &[50, 100]).is_err());
    }

    #[test]
    fn constant_trajectory_has_zero_entropy_residual() {
        let mut c = presets::goatin(3.0, 0.1, 0.06);
        c.model.vmax = crate::config::VmaxConfig::default();
        c.domain.num_cells = 50;
        c.time.t_final = 0.05;
        let s = ExperimentSpec::from_config(&c).unwrap();
        let r = run(&s).unwrap();
        let m = entropy_residual(&r, &s, &[0.1, 0.5, 0.9]).unwrap();
        for v in m {
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    proptest! {
        #[test]
        fn tv_is_shift_invariant_on_periodic_grids(
            v in proptest::collection::vec(-1.0f64..1.0, 3..40),
            s in 0usize..40,
        ) {
            let grid = g(v.len(), Boundary::Periodic);
            let mut r = v.clone();
            r.rotate_left(s % v.len());
            prop_assert!((tv_seminorm(&v, &grid) - tv_seminorm(&r, &grid)).abs() < 1e-12);
        }
    }
}
