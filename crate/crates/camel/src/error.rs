use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("line {line}: duplicate {what} `{name}`")]
    Duplicate { line: usize, what: &'static str, name: String },

    #[error("line {line}: unknown {what} `{name}`")]
    Unknown { line: usize, what: &'static str, name: String },

    #[error("line {line}: {what} out of range: {detail}")]
    OutOfRange { line: usize, what: &'static str, detail: String },

    #[error("line {line}: sepset of edge {source_id} -> {target_id} is not contained in both cluster scopes")]
    SepsetNotContained { line: usize, source_id: u32, target_id: u32 },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("joint assignment space has {size} entries, exceeding the cap of {cap}")]
    JointSpaceCap { size: u128, cap: u64 },

    #[error("optimizer did not reach tolerance {tol:e} within {budget} iterations (final gradient norm {grad_norm:e})")]
    NotConverged { tol: f64, budget: usize, grad_norm: f64 },

    #[error("non-finite value in {context} at iteration {iter} (parameter norm {param_norm:e})")]
    NonFinite { context: &'static str, iter: usize, param_norm: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::Syntax { line, .. }
            | Error::Duplicate { line, .. }
            | Error::Unknown { line, .. }
            | Error::OutOfRange { line, .. }
            | Error::SepsetNotContained { line, .. } => Some(*line),
            _ => None,
        }
    }
}
