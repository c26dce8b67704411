use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("moment accumulator has seen no samples")]
    EmptyAccumulator,

    /// A pivot of the recursive block inversion vanished.
    #[error("singular pivot in block {block} at frequency {frequency} (|pivot| = {modulus:e})")]
    Singular {
        block: usize,
        frequency: usize,
        modulus: f64,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("imaginary residue {max_imag:e} exceeds tolerance for target norm {norm:e}")]
    ImaginaryResidue { max_imag: f64, norm: f64 },

    #[error("activation has zero third cumulant ({0}); only third-order cumulants are supported")]
    ZeroThirdCumulant(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
