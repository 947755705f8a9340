use thiserror::Error;

use crate::spectral::LineshapeFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular closed loop at {f_hz} Hz (1 + G = 0)")]
    Singular { f_hz: f64 },

    #[error("transfer function is not stable: {0}")]
    UnstableTransferFunction(String),

    #[error("{loop_name} loop went unstable: {detail}")]
    Unstable { loop_name: String, detail: String },

    #[error("detuning {detuning_hz} Hz is beyond half a free spectral range ({half_fsr_hz} Hz)")]
    Wraparound { detuning_hz: f64, half_fsr_hz: f64 },

    #[error("discriminator slope is zero: {0}")]
    ZeroSlope(String),

    #[error("loop separation violated: {0}")]
    LoopSeparation(String),

    #[error("no peak above the noise floor: {0}")]
    NoPeak(String),

    #[error("lineshape fit did not converge after {iterations} iterations")]
    FitNotConverged { iterations: usize, best: Box<LineshapeFit> },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
