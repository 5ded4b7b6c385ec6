use thiserror::Error;

use crate::mesh::MziAddress;

#[derive(Debug, Error)]
pub enum Error {
    #[error("MZI address {0} is outside the {1}-mode x {2}-layer topology")]
    AddressOutOfRange(MziAddress, usize, usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("photon number mismatch: input has {input}, output has {output}")]
    PhotonNumberMismatch { input: usize, output: usize },

    #[error("photon number {0} exceeds the supported maximum of {max}", max = crate::fock::MAX_PHOTONS)]
    TooManyPhotons(usize),

    #[error("{0} requires exactly {1} photons, got {2}")]
    WrongPhotonCount(&'static str, usize, usize),

    #[error("zero matrix has no normalised fidelity")]
    ZeroMatrix,

    #[error("program region does not fit the topology: {0}")]
    RegionMismatch(String),

    #[error("conflicting settings for MZI {0}")]
    SettingsConflict(MziAddress),

    #[error("synthesis reached fidelity {achieved:.12} below the required {required:.12}")]
    SynthesisFailed { achieved: f64, required: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("unsupported schema version {0}")]
    SchemaVersion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Config(_) | Error::SchemaVersion(_) | Error::RegionMismatch(_)
        )
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
