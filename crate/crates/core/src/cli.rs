//! `claws` command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::bench::{bench_convolution, bench_memory};
use crate::config::{Config, PicardMode};
use crate::diagnostics::{convergence_study, report, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::experiment::{ExperimentSpec, NonlocalMode};
use crate::kernels::TemporalKernel;
use crate::nonlocal::FastPath;
use crate::output::{space_time_csv, summary_lines, table_csv, write_json, write_text};
use crate::solver::{compare, run_partial, time_stepping, RunResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ASSERT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "claws", version, about = "Nonlocal conservation-law solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write trajectory, diagnostics and summary.
    Run(CommonArgs),
    /// Run the fixed-point and direct solvers on one config and diff them.
    Compare(CommonArgs),
    /// L1 self-convergence study over a resolution ladder.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated cell counts, at least three.
        #[arg(long, value_delimiter = ',', required = true)]
        resolutions: Vec<usize>,
    },
    /// Time the memory and convolution fast paths.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Cell counts for the direct/FFT ladder.
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
        ladder: Vec<usize>,
    },
    /// Write kernel, speed-limit and historical-datum tables for plotting.
    PlotExport(CommonArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    FixedPoint,
    Direct,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FastPathArg {
    Auto,
    Direct,
    Fft,
    Recursive,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to `output.dir` or `out/<config stem>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub fast_path: Option<FastPathArg>,
    /// Check the run's guarantees and exit with status 4 on failure.
    #[arg(long)]
    pub assert: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<(Config, ExperimentSpec, PathBuf)> {
        let mut cfg = Config::load(&self.config)?;
        if let Some(s) = self.stride {
            cfg.output.stride = s;
        }
        if let Some(m) = self.mode {
            cfg.picard.mode = match m {
                ModeArg::FixedPoint => PicardMode::FixedPoint,
                ModeArg::Direct => PicardMode::Direct,
            };
        }
        if let Some(f) = self.fast_path {
            cfg.nonlocal.fast_path = match f {
                FastPathArg::Auto => FastPath::Auto,
                FastPathArg::Direct => FastPath::Direct,
                FastPathArg::Fft => FastPath::Fft,
                FastPathArg::Recursive => FastPath::Recursive,
            };
        }
        let spec = ExperimentSpec::from_config(&cfg)?;
        let out = match (&self.out, &cfg.output.dir) {
            (Some(o), _) => o.clone(),
            (None, Some(d)) => cfg.resolve_path(d),
            (None, None) => {
                let stem = self
                    .config
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "run".into());
                PathBuf::from("out").join(stem)
            }
        };
        Ok((cfg, spec, out))
    }
}

/// Parses the process arguments and runs; returns the exit status.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = Cli::parse();
    execute(cli)
}

pub fn execute(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Convergence {
            common,
            resolutions,
        } => cmd_convergence(&common, &resolutions),
        Command::Bench {
            common,
            repeats,
            ladder,
        } => cmd_bench(&common, repeats, &ladder),
        Command::PlotExport(a) => cmd_plot_export(&a),
    };
    match outcome {
        Ok(Checks(failures)) if failures.is_empty() => EXIT_OK,
        Ok(Checks(failures)) => {
            for f in failures {
                eprintln!("assertion failed: {f}");
            }
            EXIT_ASSERT
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", error_class(&e));
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_SOLVER
            }
        }
    }
}

fn error_class(e: &Error) -> &'static str {
    match e {
        Error::Config { .. } => "config",
        Error::WaveSpeed(_) => "wave_speed",
        Error::KernelResolution(_) => "kernel_resolution",
        Error::Argument(_) => "argument",
        Error::Mode(_) => "mode",
        Error::UnsupportedKernel(_) => "unsupported_kernel",
        Error::Sequencing { .. } => "sequencing",
        Error::Model(_) => "model",
        Error::Stability { .. } => "stability",
        Error::NonConvergence { .. } => "non_convergence",
        Error::Restriction(_) => "restriction",
        Error::Unsupported(_) => "unsupported",
        Error::Io(_) => "io",
    }
}

/// Failed `--assert` checks; empty means success.
struct Checks(Vec<String>);

fn write_run(dir: &Path, r: &RunResult, spec: &ExperimentSpec, partial: Option<&Error>) -> Result<DiagnosticsReport> {
    write_text(
        &dir.join("trajectory.csv"),
        &space_time_csv(r.grid.cell_centers(), &r.times(), &r.trajectory),
    )?;
    let diag = report(r, spec);
    let mut value = serde_json::to_value(&diag).expect("report serializes");
    value["partial"] = json!(partial.is_some());
    write_json(&dir.join("diagnostics.json"), &value)?;
    let mut pairs = vec![
        ("model", spec.model.name().to_string()),
        ("scheme", format!("{:?}", r.scheme)),
        ("picard_mode", format!("{:?}", r.picard_mode)),
        ("num_cells", r.grid.num_cells.to_string()),
        ("dt", format!("{:e}", r.stepping.dt)),
        ("num_steps", r.stepping.num_steps.to_string()),
        ("alpha", format!("{}", r.stepping.alpha)),
        ("courant", format!("{}", r.stepping.courant(&r.grid))),
        ("picard_median", format!("{}", diag.picard_median)),
        ("picard_max", diag.picard_max.to_string()),
        ("stored_levels", r.levels.len().to_string()),
        ("partial", partial.is_some().to_string()),
    ];
    if let Some(e) = partial {
        pairs.push(("error", e.to_string()));
    }
    write_text(&dir.join("summary.txt"), &summary_lines(&pairs))?;
    Ok(diag)
}

fn cmd_run(a: &CommonArgs) -> Result<Checks> {
    let (_, spec, out) = a.load()?;
    let outcome = run_partial(&spec);
    if outcome.result.trajectory.is_empty() {
        return Err(outcome.error.expect("empty trajectory implies an error"));
    }
    let diag = write_run(&out, &outcome.result, &spec, outcome.error.as_ref())?;
    if let Some(e) = outcome.error {
        eprintln!("partial outputs written to {}", out.display());
        return Err(e);
    }
    println!(
        "wrote {} ({} steps, median Picard iterations {})",
        out.display(),
        diag.num_steps,
        diag.picard_median
    );
    let mut failures = Vec::new();
    if a.assert {
        if let Some(mp) = &diag.max_principle {
            if mp.violations > 0 {
                failures.push(format!(
                    "{} cells leave [{}, {}], worst by {:e}",
                    mp.violations, mp.q_min, mp.q_max, mp.worst
                ));
            }
        }
        if !diag.envelopes.satisfied {
            failures.push("42x norm envelope violated".into());
        }
        if let Some(m) = diag.mass_ledger_max {
            if m > 1e-12 {
                failures.push(format!("mass ledger residual {m:e} exceeds 1e-12"));
            }
        }
        if diag.courant > 1.0 {
            failures.push(format!("courant number {} exceeds 1", diag.courant));
        }
    }
    Ok(Checks(failures))
}

fn cmd_compare(a: &CommonArgs) -> Result<Checks> {
    let (_, spec, out) = a.load()?;
    let c = compare(&spec)?;
    write_run(&out.join("fixed_point"), &c.fixed_point, &spec, None)?;
    let mut dspec = spec.clone();
    dspec.picard_mode = PicardMode::Direct;
    dspec.config.picard.mode = PicardMode::Direct;
    write_run(&out.join("direct"), &c.direct, &dspec, None)?;
    write_text(
        &out.join("pointwise_error.csv"),
        &space_time_csv(c.fixed_point.grid.cell_centers(), &c.fixed_point.times(), &c.pointwise),
    )?;
    write_json(
        &out.join("compare.json"),
        &json!({
            "max_error": c.max_error,
            "l1_error": c.l1_error,
            "num_cells": spec.grid.num_cells,
            "dt": c.fixed_point.stepping.dt,
        }),
    )?;
    println!("max |q_fp - q_direct| = {:e}, max L1 = {:e}", c.max_error, c.l1_error);
    let mut failures = Vec::new();
    if a.assert && !c.max_error.is_finite() {
        failures.push("non-finite comparison error".into());
    }
    Ok(Checks(failures))
}

fn cmd_convergence(a: &CommonArgs, resolutions: &[usize]) -> Result<Checks> {
    if resolutions.len() < 3 {
        return Err(Error::Argument(
            "--resolutions needs at least three entries".into(),
        ));
    }
    let (_, spec, out) = a.load()?;
    let r = convergence_study(&spec, resolutions)?;
    write_json(&out.join("orders.json"), &r)?;
    println!("orders {:?} (exact: {})", r.orders, r.exact);
    let mut failures = Vec::new();
    if a.assert && !r.exact && r.orders.iter().any(|&o| !(o > 0.0)) {
        failures.push(format!("non-positive convergence order in {:?}", r.orders));
    }
    Ok(Checks(failures))
}

fn cmd_bench(a: &CommonArgs, repeats: usize, ladder: &[usize]) -> Result<Checks> {
    let (_, spec, out) = a.load()?;
    let NonlocalMode::Memory { kernel, .. } = spec.mode else {
        return Err(Error::Argument("bench needs a memory-mode config".into()));
    };
    if !matches!(kernel, TemporalKernel::Exponential { .. }) {
        return Err(Error::Argument(
            "bench needs an exponential temporal kernel".into(),
        ));
    }
    let m = bench_memory(&spec, repeats)?;
    let rows: Vec<Vec<f64>> = m
        .quadrature
        .iter()
        .zip(&m.recursive)
        .enumerate()
        .map(|(n, (q, r))| vec![n as f64, *q, *r])
        .collect();
    write_text(
        &out.join("bench.csv"),
        &table_csv(&["step", "quadrature_s", "recursive_s"], &rows),
    )?;
    let c = bench_convolution(&spec, ladder, repeats)?;
    let rows: Vec<Vec<f64>> = c
        .num_cells
        .iter()
        .zip(c.direct.iter().zip(&c.fft))
        .map(|(n, (d, f))| vec![*n as f64, *d, *f])
        .collect();
    write_text(
        &out.join("bench_convolution.csv"),
        &table_csv(&["num_cells", "direct_s", "fft_s"], &rows),
    )?;
    let flat = m.recursive_fit.slope.abs() <= 0.05 * m.quadrature_fit.slope;
    let grows = m.quadrature_fit.slope > 0.0 && m.quadrature_fit.r_squared >= 0.8;
    write_json(
        &out.join("bench.json"),
        &json!({
            "quadrature_fit": m.quadrature_fit,
            "recursive_fit": m.recursive_fit,
            "recursive_flat": flat,
            "quadrature_grows": grows,
            "fft_crossover": c.crossover,
        }),
    )?;
    println!(
        "quadrature slope {:e} s/step (R² {:.3}), recursive slope {:e} s/step, FFT crossover {:?}",
        m.quadrature_fit.slope, m.quadrature_fit.r_squared, m.recursive_fit.slope, c.crossover
    );
    let mut failures = Vec::new();
    if a.assert {
        if !grows {
            failures.push("quadrature per-step time does not grow linearly".into());
        }
        if !flat {
            failures.push("recursive per-step time is not flat".into());
        }
    }
    Ok(Checks(failures))
}

fn cmd_plot_export(a: &CommonArgs) -> Result<Checks> {
    let (cfg, spec, out) = a.load()?;
    let grid = &spec.grid;
    if let Some(w) = spec.spatial_weights()? {
        let k = spec.spatial.as_ref().unwrap();
        let (lo, hi) = k.support();
        let rows: Vec<Vec<f64>> = (0..=400)
            .map(|i| {
                let z = lo + (hi - lo) * i as f64 / 400.0;
                vec![z, k.eval(z)]
            })
            .collect();
        write_text(&out.join("kernel_spatial.csv"), &table_csv(&["z", "gamma"], &rows))?;
        let rows: Vec<Vec<f64>> = w
            .offsets
            .iter()
            .zip(&w.weights)
            .map(|(&o, &v)| vec![o as f64 * w.dx, v])
            .collect();
        write_text(
            &out.join("kernel_spatial_discrete.csv"),
            &table_csv(&["z", "weight"], &rows),
        )?;
    }
    let tk = &cfg.kernel.temporal;
    let kinds = [
        TemporalKernel::Exponential { tau0: tk.tau0 },
        TemporalKernel::Erlang { tau0: tk.tau0 },
        TemporalKernel::Triangular { width: tk.width },
    ];
    let horizon = 5.0 * tk.tau0.max(tk.width);
    let rows: Vec<Vec<f64>> = (0..=500)
        .map(|i| {
            let tau = horizon * i as f64 / 500.0;
            let mut row = vec![tau];
            row.extend(kinds.iter().map(|k| k.eval(tau).unwrap_or(0.0)));
            row
        })
        .collect();
    write_text(
        &out.join("kernel_temporal.csv"),
        &table_csv(&["tau", "exponential", "erlang", "triangular"], &rows),
    )?;
    let centers = grid.cell_centers();
    let speed: Vec<Vec<f64>> = centers
        .iter()
        .map(|&x| vec![x, spec.model.flux(0.0, x, 0.0, 0.5) / 0.25])
        .collect();
    write_text(&out.join("speed_limit.csv"), &table_csv(&["x", "speed_at_w0"], &speed))?;
    let dt = time_stepping(&spec)?.dt;
    let levels = ((1.0 / dt).ceil() as usize).min(2000);
    let times: Vec<f64> = (0..=levels).rev().map(|m| -(m as f64) * dt).collect();
    let rows: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| spec.historical.sample(t, centers))
        .collect();
    write_text(&out.join("historical.csv"), &space_time_csv(centers, &times, &rows))?;
    write_json(
        &out.join("plot_meta.json"),
        &json!({
            "state_box": spec.model.state_box(),
            "x_left": grid.x_left,
            "x_right": grid.x_right,
            "t_final": spec.t_final,
            "config_echo": cfg,
        }),
    )?;
    println!("wrote plotting tables to {}", out.display());
    Ok(Checks(Vec::new()))
}
