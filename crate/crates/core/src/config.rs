//! Experiment configuration files.
//!
//! Configs are TOML; every section rejects unknown keys. Defaults are
//! expanded on load so that [`Config`] serialized back out is the fully
//! resolved configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Boundary;
use crate::models::InitialDatum;
use crate::nonlocal::FastPath;
use crate::schemes::SchemeKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub domain: DomainConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub nonlocal: NonlocalConfig,
    #[serde(default)]
    pub delay: DelayConfig,
    pub scheme: SchemeConfig,
    pub model: ModelConfig,
    pub init: InitialDatum,
    #[serde(default)]
    pub history: HistoryConfig,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub x_left: f64,
    pub x_right: f64,
    pub num_cells: usize,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

fn default_cfl() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default)]
    pub spatial: Option<SpatialKernelConfig>,
    #[serde(default)]
    pub temporal: TemporalKernelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialKind {
    RaisedCosineLeft,
    QuinticShifted,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialKernelConfig {
    pub kind: SpatialKind,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// CSV of `z,value` rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    #[default]
    None,
    Exponential,
    Erlang,
    Triangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalKernelConfig {
    #[serde(default)]
    pub kind: TemporalKind,
    #[serde(default = "one")]
    pub tau0: f64,
    #[serde(default = "one")]
    pub width: f64,
}

impl Default for TemporalKernelConfig {
    fn default() -> Self {
        TemporalKernelConfig {
            kind: TemporalKind::None,
            tau0: 1.0,
            width: 1.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    /// `W ≡ 0`: the classical local conservation law.
    Local,
    #[default]
    Spatial,
    Memory,
    Delay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlocalConfig {
    #[serde(default)]
    pub mode: ModeKind,
    #[serde(default = "default_fast_path")]
    pub fast_path: FastPath,
    #[serde(default = "default_truncation_eps")]
    pub truncation_eps: f64,
}

impl Default for NonlocalConfig {
    fn default() -> Self {
        NonlocalConfig {
            mode: ModeKind::Spatial,
            fast_path: FastPath::Auto,
            truncation_eps: default_truncation_eps(),
        }
    }
}

fn default_fast_path() -> FastPath {
    FastPath::Auto
}

fn default_truncation_eps() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LwrNonlocal,
    LwrLocal,
    Goatin,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default)]
    pub vmax: VmaxConfig,
    /// `[w, v]` rows for the custom model's velocity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_table: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmaxConfig {
    /// Omitted for a single constant level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<f64>>,
    pub levels: Vec<f64>,
    #[serde(default)]
    pub gaussian_sigma: f64,
}

impl Default for VmaxConfig {
    fn default() -> Self {
        VmaxConfig {
            breakpoints: None,
            levels: vec![1.0],
            gaussian_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryKind {
    /// `q(t, x) = q0(x) e^t` for `t <= 0`.
    ExpDecayOfInit,
    /// `q(t, x) = q0(x)` for `t <= 0`.
    Constant,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryConfig {
    #[serde(default)]
    pub kind: HistoryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicardMode {
    FixedPoint,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_picard_mode")]
    pub mode: PicardMode,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            tol: default_tol(),
            max_iters: default_max_iters(),
            mode: default_picard_mode(),
        }
    }
}

fn default_tol() -> f64 {
    1e-7
}

fn default_max_iters() -> usize {
    50
}

fn default_picard_mode() -> PicardMode {
    PicardMode::FixedPoint
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Causality {
    /// Only levels strictly before the current one enter the memory sum.
    #[default]
    Strict,
    /// Adds the lag-zero term evaluated on the Picard iterate.
    SemiImplicit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    #[serde(default)]
    pub causal: Causality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            stride: 1,
            dir: None,
        }
    }
}

fn default_stride() -> usize {
    1
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_owned)
                .unwrap_or_else(|| "<root>".into());
            Error::config(key, e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Range checks that the type system does not cover.
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(d.x_right > d.x_left) {
            return Err(Error::config("domain.x_right", "must exceed domain.x_left"));
        }
        if d.num_cells < 2 {
            return Err(Error::config("domain.num_cells", "must be at least 2"));
        }
        if !(self.time.t_final > 0.0) || !self.time.t_final.is_finite() {
            return Err(Error::config("time.t_final", "must be positive"));
        }
        if !(self.time.cfl > 0.0 && self.time.cfl <= 1.0) {
            return Err(Error::config(
                "time.cfl",
                format!("must lie in (0, 1], got {}", self.time.cfl),
            ));
        }
        if self.nonlocal.mode != ModeKind::Local {
            let sp = self.kernel.spatial.as_ref().ok_or_else(|| {
                Error::config("kernel.spatial", "required unless nonlocal.mode = \"local\"")
            })?;
            match sp.kind {
                SpatialKind::RaisedCosineLeft => {
                    if !(sp.radius.unwrap_or(f64::NAN) > 0.0) {
                        return Err(Error::config("kernel.spatial.R", "positive radius required"));
                    }
                }
                SpatialKind::QuinticShifted => {
                    if !(sp.eta.unwrap_or(f64::NAN) > 0.0) {
                        return Err(Error::config("kernel.spatial.eta", "positive eta required"));
                    }
                    if !sp.delta.unwrap_or(0.0).is_finite() {
                        return Err(Error::config("kernel.spatial.delta", "must be finite"));
                    }
                }
                SpatialKind::Tabulated => {
                    if sp.table.is_none() {
                        return Err(Error::config("kernel.spatial.table", "path required"));
                    }
                }
            }
        }
        let tk = &self.kernel.temporal;
        if !(tk.tau0 > 0.0) {
            return Err(Error::config("kernel.temporal.tau0", "must be positive"));
        }
        if !(tk.width > 0.0) {
            return Err(Error::config("kernel.temporal.width", "must be positive"));
        }
        match self.nonlocal.mode {
            ModeKind::Memory if tk.kind == TemporalKind::None => {
                return Err(Error::config(
                    "kernel.temporal.kind",
                    "memory mode needs a temporal kernel",
                ))
            }
            ModeKind::Delay => match self.delay.delta {
                Some(v) if v > 0.0 => {}
                _ => return Err(Error::config("delay.delta", "positive delay required")),
            },
            _ => {}
        }
        if self.nonlocal.fast_path == FastPath::Recursive
            && !(self.nonlocal.mode == ModeKind::Memory && tk.kind == TemporalKind::Exponential)
        {
            return Err(Error::config(
                "nonlocal.fast_path",
                "recursive fast path needs memory mode with an exponential kernel",
            ));
        }
        if !(self.nonlocal.truncation_eps > 0.0 && self.nonlocal.truncation_eps < 1.0) {
            return Err(Error::config("nonlocal.truncation_eps", "must lie in (0, 1)"));
        }
        if !(self.picard.tol > 0.0) {
            return Err(Error::config("picard.tol", "must be positive"));
        }
        if self.picard.max_iters < 1 {
            return Err(Error::config("picard.max_iters", "must be at least 1"));
        }
        if self.output.stride < 1 {
            return Err(Error::config("output.stride", "must be at least 1"));
        }
        if let Some(m) = self.model.m {
            if !(m >= 1.0) {
                return Err(Error::config("model.m", "must be >= 1"));
            }
        }
        match self.model.kind {
            ModelKind::Goatin if self.model.m.is_none() => {
                return Err(Error::config("model.m", "required for the goatin model"))
            }
            ModelKind::Custom if self.model.velocity_table.is_none() => {
                return Err(Error::config(
                    "model.velocity_table",
                    "required for the custom model",
                ))
            }
            ModelKind::LwrNonlocal | ModelKind::LwrLocal if self.model.vmax.levels.len() != 1 => {
                return Err(Error::config(
                    "model.vmax.levels",
                    "LWR models take a single constant V_max",
                ))
            }
            _ => {}
        }
        if self.model.vmax.levels.is_empty() {
            return Err(Error::config("model.vmax.levels", "at least one level required"));
        }
        Ok(())
    }
}

/// Shipped experiment configurations.
pub mod presets {
    use super::*;

    fn lwr_base() -> Config {
        Config {
            domain: DomainConfig {
                x_left: 0.0,
                x_right: 4.0,
                num_cells: 400,
                boundary: Boundary::Outflow,
            },
            time: TimeConfig {
                t_final: 5.0,
                cfl: 0.9,
            },
            kernel: KernelConfig {
                spatial: Some(SpatialKernelConfig {
                    kind: SpatialKind::RaisedCosineLeft,
                    radius: Some(0.4),
                    eta: None,
                    delta: None,
                    table: None,
                }),
                temporal: TemporalKernelConfig::default(),
            },
            nonlocal: NonlocalConfig::default(),
            delay: DelayConfig::default(),
            scheme: SchemeConfig {
                kind: SchemeKind::Godunov,
            },
            model: ModelConfig {
                kind: ModelKind::LwrNonlocal,
                m: None,
                vmax: VmaxConfig::default(),
                velocity_table: None,
            },
            init: InitialDatum::Plateaus {
                plateaus: vec![[0.5, 1.2, 0.8], [2.2, 2.9, 0.7]],
            },
            history: HistoryConfig::default(),
            picard: PicardConfig::default(),
            memory: MemoryConfig::default(),
            output: OutputConfig::default(),
            base_dir: None,
        }
    }

    /// Two-plateau LWR run with purely spatial nonlocality.
    pub fn lwr_spatial() -> Config {
        lwr_base()
    }

    /// Two-plateau LWR run with a memory kernel of unit time scale.
    pub fn lwr_memory(kind: TemporalKind) -> Config {
        let mut c = lwr_base();
        c.kernel.temporal = TemporalKernelConfig {
            kind,
            tau0: 1.0,
            width: 1.0,
        };
        c.nonlocal.mode = ModeKind::Memory;
        c.history.kind = HistoryKind::ExpDecayOfInit;
        c
    }

    pub fn lwr_delay(delta: f64) -> Config {
        let mut c = lwr_base();
        c.nonlocal.mode = ModeKind::Delay;
        c.delay.delta = Some(delta);
        c.history.kind = HistoryKind::ExpDecayOfInit;
        c
    }

    /// Speed limit used for the periodic validation runs: a slow zone in the
    /// middle of the ring with Gaussian-smoothed edges.
    pub fn goatin_speed() -> VmaxConfig {
        VmaxConfig {
            breakpoints: Some(vec![-1.0, -0.5, 0.5, 1.0]),
            levels: vec![1.0, 0.5, 1.0],
            gaussian_sigma: 0.05,
        }
    }

    pub fn goatin(m: f64, eta: f64, delta: f64) -> Config {
        Config {
            domain: DomainConfig {
                x_left: -1.0,
                x_right: 1.0,
                num_cells: 2000,
                boundary: Boundary::Periodic,
            },
            time: TimeConfig {
                t_final: 0.5,
                cfl: 0.9,
            },
            kernel: KernelConfig {
                spatial: Some(SpatialKernelConfig {
                    kind: SpatialKind::QuinticShifted,
                    radius: None,
                    eta: Some(eta),
                    delta: Some(delta),
                    table: None,
                }),
                temporal: TemporalKernelConfig::default(),
            },
            nonlocal: NonlocalConfig::default(),
            delay: DelayConfig::default(),
            scheme: SchemeConfig {
                kind: SchemeKind::LaxFriedrichs,
            },
            model: ModelConfig {
                kind: ModelKind::Goatin,
                m: Some(m),
                vmax: goatin_speed(),
                velocity_table: None,
            },
            init: InitialDatum::Constant { value: 0.6 },
            history: HistoryConfig::default(),
            picard: PicardConfig::default(),
            memory: MemoryConfig::default(),
            output: OutputConfig::default(),
            base_dir: None,
        }
    }

    pub fn goatin_validation() -> Config {
        goatin(3.0, 0.1, 0.06)
    }

    /// Wide-kernel set with a memory kernel of time scale 0.1.
    pub fn goatin_memory(kind: TemporalKind) -> Config {
        let mut c = goatin(3.0, 1.0, 0.0);
        if kind != TemporalKind::None {
            c.kernel.temporal = TemporalKernelConfig {
                kind,
                tau0: 0.1,
                width: 0.1,
            };
            c.nonlocal.mode = ModeKind::Memory;
            c.history.kind = HistoryKind::Constant;
        }
        c
    }
}
