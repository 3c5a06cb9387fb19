use num_complex::Complex64;

#[derive(Debug, thiserror::Error)]
pub enum HopfError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed field: {0}")]
    MalformedField(String),

    #[error("field is not a pure first temporal mode (relative remainder {0:.3e})")]
    NotFirstMode(f64),

    #[error("spectral parameter {z} is too close to the spectrum (pivot {pivot:.3e})")]
    NearSpectrum { z: Complex64, pivot: f64 },

    #[error("eigenvalue iteration settled at {mu}, which is not near i")]
    WrongEigenvalue { mu: Complex64 },

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("pole of the symbol at {0}")]
    Pole(String),

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("no match: {0}")]
    NoMatch(String),

    #[error("outside the uniqueness window: {0}")]
    OutsideWindow(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HopfError {
    /// True for errors raised by a failed numerical computation, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HopfError::NearSpectrum { .. }
                | HopfError::WrongEigenvalue { .. }
                | HopfError::NoConvergence(_)
                | HopfError::Degenerate(_)
                | HopfError::NoMatch(_)
                | HopfError::OutsideWindow(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HopfError>;
