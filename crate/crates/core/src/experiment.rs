//! Resolved experiments: a validated [`Config`] turned into grid, model,
//! kernels and data.

use std::sync::Arc;

use crate::config::{
    presets, Causality, Config, HistoryKind, ModeKind, ModelKind, PicardMode, SpatialKind,
    TemporalKind,
};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};
use crate::kernels::{sample_spatial, DiscreteWeights, SpatialKernel, TabulatedKernel, TemporalKernel};
use crate::models::{
    goatin_flux, lwr_nonlocal_flux, FluxModel, InitialDatum, LwrLocal, SpeedProfile,
    TabulatedVelocityFlux,
};
use crate::nonlocal::{FastPath, HistoricalDatum};
use crate::schemes::SchemeKind;

/// Which nonlocal operator feeds the flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NonlocalMode {
    Local,
    Spatial,
    Memory { kernel: TemporalKernel, causal: Causality },
    Delay { delta: f64 },
}

#[derive(Clone)]
pub struct ExperimentSpec {
    pub grid: Grid,
    pub t_final: f64,
    pub cfl: f64,
    pub model: Arc<dyn FluxModel>,
    pub init: InitialDatum,
    pub historical: HistoricalDatum,
    pub spatial: Option<SpatialKernel>,
    pub mode: NonlocalMode,
    pub fast_path: FastPath,
    pub truncation_eps: f64,
    pub scheme: SchemeKind,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub picard_mode: PicardMode,
    pub stride: usize,
    /// The configuration this spec was built from, defaults expanded.
    pub config: Config,
}

impl std::fmt::Debug for ExperimentSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExperimentSpec")
            .field("grid", &self.grid)
            .field("t_final", &self.t_final)
            .field("model", &self.model.name())
            .field("mode", &self.mode)
            .field("scheme", &self.scheme)
            .finish_non_exhaustive()
    }
}

impl ExperimentSpec {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        let d = &cfg.domain;
        let grid = Grid::new(d.x_left, d.x_right, d.num_cells, d.boundary)?;

        let period = (d.boundary == Boundary::Periodic).then(|| grid.length());
        let speed = match &cfg.model.vmax.breakpoints {
            None => {
                if cfg.model.vmax.levels.len() != 1 {
                    return Err(Error::config(
                        "model.vmax.breakpoints",
                        "required when more than one level is given",
                    ));
                }
                SpeedProfile::constant(cfg.model.vmax.levels[0])
            }
            Some(b) => SpeedProfile {
                breakpoints: b.clone(),
                levels: cfg.model.vmax.levels.clone(),
                gaussian_sigma: cfg.model.vmax.gaussian_sigma,
                period,
            },
        };
        speed.validate()?;
        let model: Arc<dyn FluxModel> = match cfg.model.kind {
            ModelKind::LwrNonlocal => Arc::new(lwr_nonlocal_flux(speed.levels[0])?),
            ModelKind::LwrLocal => {
                let v_max = speed.levels[0];
                if !(v_max > 0.0) {
                    return Err(Error::config("model.vmax.levels", "V_max must be positive"));
                }
                Arc::new(LwrLocal { v_max })
            }
            ModelKind::Goatin => Arc::new(goatin_flux(cfg.model.m.unwrap_or(1.0), speed)?),
            ModelKind::Custom => Arc::new(TabulatedVelocityFlux::new(
                cfg.model.velocity_table.clone().unwrap_or_default(),
                speed,
            )?),
        };

        let (lo, hi) = model.state_box();
        let (a, b) = cfg.init.range();
        if a < lo || b > hi {
            return Err(Error::config(
                "init",
                format!("initial datum range [{a}, {b}] leaves the state box [{lo}, {hi}]"),
            ));
        }

        let spatial = match (&cfg.kernel.spatial, cfg.nonlocal.mode) {
            (_, ModeKind::Local) | (None, _) => None,
            (Some(sp), _) => Some(match sp.kind {
                SpatialKind::RaisedCosineLeft => SpatialKernel::RaisedCosineLeft {
                    radius: sp.radius.unwrap_or_default(),
                },
                SpatialKind::QuinticShifted => SpatialKernel::QuinticShifted {
                    eta: sp.eta.unwrap_or_default(),
                    delta: sp.delta.unwrap_or(0.0),
                },
                SpatialKind::Tabulated => {
                    let path = cfg.resolve_path(sp.table.as_deref().unwrap_or(std::path::Path::new("")));
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        Error::config("kernel.spatial.table", format!("{}: {e}", path.display()))
                    })?;
                    SpatialKernel::Tabulated(TabulatedKernel::from_csv_str(&text)?)
                }
            }),
        };

        let tk = &cfg.kernel.temporal;
        let temporal = match tk.kind {
            TemporalKind::None => TemporalKernel::None,
            TemporalKind::Exponential => TemporalKernel::Exponential { tau0: tk.tau0 },
            TemporalKind::Erlang => TemporalKernel::Erlang { tau0: tk.tau0 },
            TemporalKind::Triangular => TemporalKernel::Triangular { width: tk.width },
        };
        let mode = match cfg.nonlocal.mode {
            ModeKind::Local => NonlocalMode::Local,
            ModeKind::Spatial => NonlocalMode::Spatial,
            ModeKind::Memory => NonlocalMode::Memory {
                kernel: temporal,
                causal: cfg.memory.causal,
            },
            ModeKind::Delay => NonlocalMode::Delay {
                delta: cfg.delay.delta.unwrap_or_default(),
            },
        };

        let historical = match cfg.history.kind {
            HistoryKind::None => HistoricalDatum::Zero,
            HistoryKind::Constant => {
                let init = cfg.init.clone();
                HistoricalDatum::Function(Arc::new(move |_t, x| init.eval(x)))
            }
            HistoryKind::ExpDecayOfInit => {
                let init = cfg.init.clone();
                HistoricalDatum::Function(Arc::new(move |t, x| init.eval(x) * t.exp()))
            }
        };

        let spec = ExperimentSpec {
            grid,
            t_final: cfg.time.t_final,
            cfl: cfg.time.cfl,
            model,
            init: cfg.init.clone(),
            historical,
            spatial,
            mode,
            fast_path: cfg.nonlocal.fast_path,
            truncation_eps: cfg.nonlocal.truncation_eps,
            scheme: cfg.scheme.kind,
            picard_tol: cfg.picard.tol,
            picard_max_iters: cfg.picard.max_iters,
            picard_mode: cfg.picard.mode,
            stride: cfg.output.stride,
            config: cfg.clone(),
        };
        // surfaces kernel-resolution problems before the run starts
        spec.spatial_weights()?;
        Ok(spec)
    }

    /// Renormalized spatial weights on this grid, if the mode uses a kernel.
    pub fn spatial_weights(&self) -> Result<Option<DiscreteWeights>> {
        match (&self.spatial, self.mode) {
            (_, NonlocalMode::Local) => Ok(None),
            (Some(k), _) => sample_spatial(k, self.grid.dx).map(Some),
            (None, _) => Err(Error::config("kernel.spatial", "missing spatial kernel")),
        }
    }

    /// Initial cell averages.
    pub fn initial_field(&self) -> Vec<f64> {
        self.init.sample(&self.grid)
    }

    /// Same experiment on a grid with `num_cells` cells.
    pub fn with_resolution(&self, num_cells: usize) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.domain.num_cells = num_cells;
        Self::from_config(&cfg)
    }
}

/// The two-plateau LWR experiment on `(0, 4)` up to `T = 5`.
pub fn lwr_experiment(temporal: TemporalKind) -> Result<ExperimentSpec> {
    let cfg = match temporal {
        TemporalKind::None => presets::lwr_spatial(),
        k => presets::lwr_memory(k),
    };
    ExperimentSpec::from_config(&cfg)
}

/// The periodic speed-limit experiment on `(-1, 1)` up to `T = 0.5`.
pub fn goatin_experiment(m: f64, eta: f64, delta: f64) -> Result<ExperimentSpec> {
    ExperimentSpec::from_config(&presets::goatin(m, eta, delta))
}
