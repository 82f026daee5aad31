use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A kernel was evaluated at its singularity.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// Two particles came closer than four particle radii.
    #[error("separation guard violated at t = {t}: d_min = {d_min:.6e} < 4*eps = {threshold:.6e} (particles {pair:?})")]
    Guard {
        t: f64,
        d_min: f64,
        threshold: f64,
        pair: (usize, usize),
    },

    /// The effective-velocity fixed point did not converge.
    #[error("fixed-point iteration failed to contract after {} iterations; residuals {residuals:?}", residuals.len())]
    Contraction { residuals: Vec<f64> },

    #[error("setup error: {0}")]
    Setup(String),

    #[error(transparent)]
    Transport(#[from] suspension_transport::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("config write error: {0}")]
    ConfigWrite(#[from] toml::ser::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Guard { .. } | Error::Contraction { .. } => 3,
            Error::Domain(_)
            | Error::Validation(_)
            | Error::Setup(_)
            | Error::Transport(_)
            | Error::ConfigParse(_) => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::ConfigWrite(_) => 1,
        }
    }
}

pub fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
