//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scaled units require positive parameters, got t_ref={t_ref}, q={q}, omega_ref={omega_ref}")]
    InvalidUnits { t_ref: f64, q: f64, omega_ref: f64 },

    #[error("pulse amplitude must be >= 0, got {0}")]
    NegativeAmplitude(f64),

    #[error("gaussian width factor must be > 0, got {0}")]
    InvalidWidth(f64),

    #[error("tabulated envelope needs at least one sample")]
    EmptyTable,

    #[error("tabulated envelope samples must be strictly increasing in time")]
    UnsortedTable,

    #[error("invalid grid: tau=[{tau_min},{tau_max}] n_tau={n_tau} x_max={x_max} n_x={n_x}")]
    InvalidGrid {
        tau_min: f64,
        tau_max: f64,
        n_tau: usize,
        x_max: f64,
        n_x: usize,
    },

    #[error("envelope {index} is at {fraction:.3e} of peak at tau={tau}; grid must start and end with all pulses off")]
    EnvelopeNotOff { index: usize, tau: f64, fraction: f64 },

    #[error("Rabi frequencies must be >= 0, got {0}")]
    NegativeRabi(f64),

    #[error("matrix is not Hermitian: max asymmetry {0:.3e}")]
    NotHermitian(f64),

    #[error("eigensolver did not converge after {0} sweeps")]
    EigenNoConvergence(usize),

    #[error("degenerate crossing at tau={tau}: branches {a} and {b} within 1e-12 with ambiguous overlap")]
    DegenerateCrossing { tau: f64, a: usize, b: usize },

    #[error("time step too coarse: dtau*|H| = {product:.3e} >= 0.1; need n_tau >= {required_n_tau}")]
    StepTooCoarse { product: f64, required_n_tau: usize },

    #[error("non-finite value at depth slice {slice} (x={x}); aborting propagation")]
    NonFinite { slice: usize, x: f64 },

    #[error("field jump at depth slice {slice}: {jump:.3e} exceeds 10x truncation estimate {estimate:.3e}")]
    FieldJump { slice: usize, jump: f64, estimate: f64 },

    #[error("split-solution regime violated: {0}")]
    RegimeViolated(String),

    #[error("{0} requires the m-type scheme")]
    WrongScheme(&'static str),

    #[error("config error(s):\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 regime/adiabaticity
    /// refusal, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 1,
            Error::RegimeViolated(_) | Error::WrongScheme(_) | Error::EnvelopeNotOff { .. } => 2,
            Error::NonFinite { .. }
            | Error::FieldJump { .. }
            | Error::StepTooCoarse { .. }
            | Error::EigenNoConvergence(_)
            | Error::DegenerateCrossing { .. } => 3,
            _ => 1,
        }
    }
}
