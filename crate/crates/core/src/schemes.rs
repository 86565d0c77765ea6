//! Three-point finite-volume updates for a frozen nonlocal field.
//!
//! Both schemes are written in conservation form
//! `q_i^{n+1} = q_i^n - dt/dx (H_{i+1/2} - H_{i-1/2})`, with the interface
//! fluxes returned by [`interface_fluxes`] so callers can keep a boundary
//! mass ledger.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_boundary, Boundary, Grid};
use crate::models::FluxModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Godunov,
    LaxFriedrichs,
}

const GOLDEN_TOL: f64 = 1e-10;

/// Exact Riemann flux: `min F` over `[qL, qR]` when `qL <= qR`, else `max F` over `[qR, qL]`.
pub fn godunov_flux(ql: f64, qr: f64, model: &dyn FluxModel, t: f64, x: f64, w: f64) -> f64 {
    let f = |u: f64| model.flux(t, x, w, u);
    if ql == qr {
        return f(ql);
    }
    let (lo, hi, minimize) = if ql < qr { (ql, qr, true) } else { (qr, ql, false) };
    let pick = |a: f64, b: f64| if minimize { a.min(b) } else { a.max(b) };
    let mut best = pick(f(ql), f(qr));
    match model.critical_points() {
        Some(points) => {
            for &c in points {
                if c > lo && c < hi {
                    best = pick(best, f(c));
                }
            }
        }
        None => {
            log::debug!("godunov flux: no critical points declared, using golden-section search");
            let sign = if minimize { 1.0 } else { -1.0 };
            let u = golden_section_min(|u| sign * f(u), lo, hi, GOLDEN_TOL);
            best = pick(best, f(u));
        }
    }
    best
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Two-point numerical flux at one interface with the neighbouring `W` values
/// frozen; `ratio = dx / dt`.
#[allow(clippy::too_many_arguments)]
pub fn numerical_flux(
    scheme: SchemeKind,
    ql: f64,
    qr: f64,
    model: &dyn FluxModel,
    t: f64,
    x: f64,
    w: (f64, f64),
    ratio: f64,
) -> f64 {
    match scheme {
        SchemeKind::Godunov => godunov_flux(ql, qr, model, t, x, 0.5 * (w.0 + w.1)),
        SchemeKind::LaxFriedrichs => {
            0.5 * (model.flux(t, x, w.0, ql) + model.flux(t, x, w.1, qr)) - 0.5 * ratio * (qr - ql)
        }
    }
}

/// Interface fluxes `H_{k-1/2}` for `k = 0..=num_cells`.
pub fn interface_fluxes(
    scheme: SchemeKind,
    field: &[f64],
    w: &[f64],
    grid: &Grid,
    dt: f64,
    model: &dyn FluxModel,
    t: f64,
) -> Vec<f64> {
    let n = grid.num_cells;
    debug_assert_eq!(field.len(), n);
    debug_assert_eq!(w.len(), n);
    let q = apply_boundary(field, grid.boundary, 1);
    let wx = apply_boundary(w, grid.boundary, 1);
    let ratio = grid.dx / dt;
    let mut h: Vec<f64> = (0..=n)
        .map(|k| {
            // left cell k-1 sits at ghost-extended index k, right cell k at k+1
            let x = grid.interface(k);
            numerical_flux(scheme, q[k], q[k + 1], model, t, x, (wx[k], wx[k + 1]), ratio)
        })
        .collect();
    if grid.boundary == Boundary::Periodic {
        // the two ends are the same interface
        h[n] = h[0];
    }
    h
}

/// Applies the conservative update and checks the result stays in the inflated state box.
pub fn conservative_update(
    field: &[f64],
    fluxes: &[f64],
    grid: &Grid,
    dt: f64,
    model: &dyn FluxModel,
    step: usize,
) -> Result<Vec<f64>> {
    let r = dt / grid.dx;
    let out: Vec<f64> = field
        .iter()
        .enumerate()
        .map(|(i, &q)| q - r * (fluxes[i + 1] - fluxes[i]))
        .collect();
    check_box(&out, model, step)?;
    Ok(out)
}

fn check_box(field: &[f64], model: &dyn FluxModel, step: usize) -> Result<()> {
    let (lo, hi) = model.state_box();
    let slack = 1e-9;
    for (i, &v) in field.iter().enumerate() {
        if !(v >= lo - slack && v <= hi + slack) {
            return Err(Error::Stability {
                step,
                cell: i,
                value: v,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// One Godunov step with `W` frozen.
pub fn godunov_step(
    field: &[f64],
    w: &[f64],
    grid: &Grid,
    dt: f64,
    model: &dyn FluxModel,
    t: f64,
) -> Result<Vec<f64>> {
    let h = interface_fluxes(SchemeKind::Godunov, field, w, grid, dt, model, t);
    conservative_update(field, &h, grid, dt, model, 0)
}

/// One Lax–Friedrichs step with `W` frozen.
///
/// For fluxes without explicit `x` dependence this is exactly
/// `(q_{i+1} + q_{i-1})/2 - dt/(2dx) (F(W_{i+1}, q_{i+1}) - F(W_{i-1}, q_{i-1}))`.
/// With a space-dependent flux both neighbours of an interface are evaluated at
/// that interface position, which keeps the update conservative.
pub fn lax_friedrichs_step(
    field: &[f64],
    w: &[f64],
    grid: &Grid,
    dt: f64,
    model: &dyn FluxModel,
    t: f64,
) -> Result<Vec<f64>> {
    let h = interface_fluxes(SchemeKind::LaxFriedrichs, field, w, grid, dt, model, t);
    conservative_update(field, &h, grid, dt, model, 0)
}

/// Upper bound on `|∂F/∂q|` by dense sampling, times a 1.1 safety factor.
pub fn estimate_alpha(
    model: &dyn FluxModel,
    w_range: (f64, f64),
    t_window: (f64, f64),
    grid: &Grid,
) -> Result<f64> {
    let (qa, qb) = model.state_box();
    if !(qa.is_finite() && qb.is_finite() && w_range.0.is_finite() && w_range.1.is_finite()) {
        return Err(Error::Model("state box and w range must be finite".into()));
    }
    let lin = |a: f64, b: f64, k: usize| -> Vec<f64> {
        if b <= a || k < 2 {
            vec![a]
        } else {
            (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
        }
    };
    let mut qs = lin(qa, qb, 201);
    if let Some(c) = model.critical_points() {
        qs.extend(c.iter().copied().filter(|&c| c >= qa && c <= qb));
    }
    let ws = if model.depends_on_w() {
        lin(w_range.0, w_range.1, 41)
    } else {
        vec![w_range.0]
    };
    let xs: Vec<f64> = if model.depends_on_x() {
        (0..=2 * grid.num_cells)
            .map(|k| grid.x_left + 0.5 * k as f64 * grid.dx)
            .collect()
    } else {
        vec![grid.x_left]
    };
    let ts = if model.depends_on_t() {
        lin(t_window.0, t_window.1, 11)
    } else {
        vec![t_window.0]
    };
    let mut sup = 0.0f64;
    for &t in &ts {
        for &x in &xs {
            for &w in &ws {
                for &q in &qs {
                    let d = model.dflux_dq(t, x, w, q);
                    if !d.is_finite() {
                        return Err(Error::Model(format!(
                            "non-finite flux derivative at (t={t}, x={x}, w={w}, q={q})"
                        )));
                    }
                    sup = sup.max(d.abs());
                }
            }
        }
    }
    Ok((1.1 * sup).max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use crate::models::{lwr_nonlocal_flux, LwrLocal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn scan(ql: f64, qr: f64, f: impl Fn(f64) -> f64) -> f64 {
        let (lo, hi) = (ql.min(qr), ql.max(qr));
        let n = ((hi - lo) / 1e-4).ceil() as usize;
        let vals = (0..=n).map(|i| f(lo + (hi - lo) * i as f64 / n.max(1) as f64));
        if ql <= qr {
            vals.fold(f64::INFINITY, f64::min)
        } else {
            vals.fold(f64::NEG_INFINITY, f64::max)
        }
    }

    #[test]
    fn riemann_examples() {
        let m = LwrLocal { v_max: 1.0 };
        assert!((godunov_flux(0.8, 0.7, &m, 0.0, 0.0, 0.0) - 0.21).abs() < 1e-15);
        assert!((godunov_flux(0.6, 0.4, &m, 0.0, 0.0, 0.0) - 0.25).abs() < 1e-15);
        assert!((scan(0.8, 0.7, |u| u * (1.0 - u)) - 0.21).abs() < 1e-12);
        assert!((scan(0.6, 0.4, |u| u * (1.0 - u)) - 0.25).abs() < 1e-12);
        for c in [0.0, 0.3, 0.5, 1.0] {
            assert_eq!(godunov_flux(c, c, &m, 0.0, 0.0, 0.0), c * (1.0 - c));
        }
    }

    struct Counting<'a> {
        inner: &'a dyn FluxModel,
        calls: AtomicUsize,
        hide_critical: bool,
    }

    impl FluxModel for Counting<'_> {
        fn name(&self) -> &str {
            "counting"
        }
        fn flux(&self, t: f64, x: f64, w: f64, q: f64) -> f64 {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.flux(t, x, w, q)
        }
        fn critical_points(&self) -> Option<&[f64]> {
            if self.hide_critical {
                None
            } else {
                self.inner.critical_points()
            }
        }
        fn vanishing_states(&self) -> Option<(f64, f64)> {
            self.inner.vanishing_states()
        }
        fn state_box(&self) -> (f64, f64) {
            self.inner.state_box()
        }
    }

    #[test]
    fn godunov_matches_scan_with_three_evaluations() {
        let lwr = lwr_nonlocal_flux(1.0).unwrap();
        let m = Counting {
            inner: &lwr,
            calls: AtomicUsize::new(0),
            hide_critical: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let (ql, qr, w) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            m.calls.store(0, Ordering::Relaxed);
            let g = godunov_flux(ql, qr, &m, 0.0, 0.0, w);
            assert!(m.calls.load(Ordering::Relaxed) <= 3);
            let s = scan(ql, qr, |u| lwr.flux(0.0, 0.0, w, u));
            assert!((g - s).abs() <= 1e-8);
        }
    }

    #[test]
    fn golden_section_fallback() {
        let lwr = lwr_nonlocal_flux(1.0).unwrap();
        let m = Counting {
            inner: &lwr,
            calls: AtomicUsize::new(0),
            hide_critical: true,
        };
        for (ql, qr) in [(0.9, 0.1), (0.2, 0.95), (0.3, 0.45)] {
            let a = godunov_flux(ql, qr, &m, 0.0, 0.0, 0.2);
            let b = godunov_flux(ql, qr, &lwr, 0.0, 0.0, 0.2);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_state_is_steady() {
        let g = Grid::new(0.0, 1.0, 50, Boundary::Periodic).unwrap();
        let m = lwr_nonlocal_flux(1.0).unwrap();
        let q = vec![0.3; 50];
        let w = vec![0.3; 50];
        for step in [godunov_step, lax_friedrichs_step] {
            let out = step(&q, &w, &g, 0.005, &m, 0.0).unwrap();
            assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-15));
        }
    }

    #[test]
    fn lax_friedrichs_matches_transcription() {
        // independent transcription of the pointwise LF formula, periodic, 10 cells
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let g = Grid::new(0.0, 1.0, 10, Boundary::Periodic).unwrap();
        let m = lwr_nonlocal_flux(1.0).unwrap();
        let q: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
        let w: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
        let dt = 0.04;
        let out = lax_friedrichs_step(&q, &w, &g, dt, &m, 0.0).unwrap();
        for i in 0..10 {
            let ip = (i + 1) % 10;
            let im = (i + 9) % 10;
            let f = |k: usize| q[k] * (1.0 - q[k]) * (1.0 - w[k]);
            let want = 0.5 * (q[ip] + q[im]) - dt / (2.0 * g.dx) * (f(ip) - f(im));
            assert!((out[i] - want).abs() <= 1e-15, "{i}: {} vs {want}", out[i]);
        }
    }

    #[test]
    fn lax_friedrichs_variation_follows_speed_limit() {
        use crate::models::{goatin_flux, SpeedProfile};
        let g = Grid::new(-1.0, 1.0, 200, Boundary::Periodic).unwrap();
        let prof = SpeedProfile {
            breakpoints: vec![-1.0, -0.2, 0.2, 1.0],
            levels: vec![1.0, 0.5, 1.0],
            gaussian_sigma: 0.0,
            period: Some(2.0),
        };
        let m = goatin_flux(3.0, prof).unwrap();
        let q = vec![0.6; 200];
        let w = vec![0.6; 200];
        let out = lax_friedrichs_step(&q, &w, &g, 0.002, &m, 0.0).unwrap();
        let mut changed = 0;
        for (i, &v) in out.iter().enumerate() {
            let jump = m.speed.eval(g.interface(i)) != m.speed.eval(g.interface(i + 1));
            if jump {
                changed += 1;
                assert!((v - 0.6).abs() > 1e-6, "cell {i}");
            } else {
                assert!((v - 0.6).abs() < 1e-15, "cell {i}");
            }
        }
        assert_eq!(changed, 2);
    }

    #[test]
    fn alpha_estimates() {
        let g = Grid::new(0.0, 1.0, 10, Boundary::Outflow).unwrap();
        let local = LwrLocal { v_max: 1.0 };
        let a = estimate_alpha(&local, (0.0, 1.0), (0.0, 1.0), &g).unwrap();
        assert!((a - 1.1).abs() < 1e-14);

        let m = lwr_nonlocal_flux(1.0).unwrap();
        let a = estimate_alpha(&m, (0.0, 1.0), (0.0, 1.0), &g).unwrap();
        let mut oracle = 0.0f64;
        for i in 0..=1000 {
            for k in 0..=1000 {
                let (q, w) = (i as f64 * 1e-3, k as f64 * 1e-3);
                oracle = oracle.max(((1.0 - 2.0 * q) * (1.0 - w)).abs());
            }
        }
        assert!((a - 1.1 * oracle).abs() < 1e-12);
    }

    #[test]
    fn alpha_floor_for_degenerate_box() {
        struct Flat;
        impl FluxModel for Flat {
            fn name(&self) -> &str {
                "flat"
            }
            fn flux(&self, _: f64, _: f64, _: f64, q: f64) -> f64 {
                q * (1.0 - q)
            }
            fn critical_points(&self) -> Option<&[f64]> {
                None
            }
            fn vanishing_states(&self) -> Option<(f64, f64)> {
                None
            }
            fn state_box(&self) -> (f64, f64) {
                (0.5, 0.5)
            }
        }
        let g = Grid::new(0.0, 1.0, 10, Boundary::Outflow).unwrap();
        let a = estimate_alpha(&Flat, (0.0, 0.0), (0.0, 0.0), &g).unwrap();
        assert!(a >= 1e-12 && a < 1e-9);
    }

    fn tv(q: &[f64], periodic: bool) -> f64 {
        let wrap = if periodic { (q[0] - q[q.len() - 1]).abs() } else { 0.0 };
        q.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() + wrap
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn godunov_consistency(c in 0.0f64..1.0, w in 0.0f64..1.0) {
                let m = lwr_nonlocal_flux(1.0).unwrap();
                prop_assert_eq!(godunov_flux(c, c, &m, 0.0, 0.0, w), m.flux(0.0, 0.0, w, c));
            }

            #[test]
            fn periodic_steps_conserve(v in prop::collection::vec(0.0f64..1.0, 30), wv in prop::collection::vec(0.0f64..1.0, 30)) {
                let g = Grid::new(0.0, 1.0, 30, Boundary::Periodic).unwrap();
                let m = lwr_nonlocal_flux(1.0).unwrap();
                let dt = 0.9 * g.dx / 1.1;
                for step in [godunov_step, lax_friedrichs_step] {
                    let out = step(&v, &wv, &g, dt, &m, 0.0).unwrap();
                    let before: f64 = v.iter().sum();
                    let after: f64 = out.iter().sum();
                    prop_assert!((before - after).abs() <= 1e-13);
                }
            }

            #[test]
            fn local_schemes_are_monotone_and_tvd(v in prop::collection::vec(0.0f64..1.0, 40), periodic in any::<bool>()) {
                let b = if periodic { Boundary::Periodic } else { Boundary::Outflow };
                let g = Grid::new(0.0, 1.0, 40, b).unwrap();
                let m = LwrLocal { v_max: 1.0 };
                let w = vec![0.0; 40];
                let dt = 0.9 * g.dx / 1.1;
                let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for step in [godunov_step, lax_friedrichs_step] {
                    let out = step(&v, &w, &g, dt, &m, 0.0).unwrap();
                    prop_assert!(out.iter().all(|&x| x >= lo - 1e-15 && x <= hi + 1e-15));
                }
                let out = godunov_step(&v, &w, &g, dt, &m, 0.0).unwrap();
                prop_assert!(tv(&out, periodic) <= tv(&v, periodic) + 1e-12);
            }
        }
    }
}
