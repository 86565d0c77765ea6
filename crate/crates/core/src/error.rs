use thiserror::Error;

/// Errors raised by the solver toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("wave-speed estimation failed: {0}")]
    WaveSpeed(String),

    #[error("kernel resolution error: {0}")]
    KernelResolution(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("boundary mode error: {0}")]
    Mode(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("history sequencing error: level {level} is not available")]
    Sequencing { level: i64 },

    #[error("model error: {0}")]
    Model(String),

    #[error(
        "stability violation at step {step}: value {value} at cell {cell} leaves [{lo}, {hi}]"
    )]
    Stability {
        step: usize,
        cell: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("Picard iteration did not converge at step {step} after {iters} iterations (last residual {last:e})")]
    NonConvergence {
        step: usize,
        iters: usize,
        last: f64,
        residuals: Vec<f64>,
    },

    #[error("restriction error: {0}")]
    Restriction(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// True for errors that stem from invalid user input rather than a failed solve.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::KernelResolution(_)
                | Error::UnsupportedKernel(_)
                | Error::Mode(_)
                | Error::Argument(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
