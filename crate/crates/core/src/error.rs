use thiserror::Error;

use crate::model::Diagnostic;
use crate::tensor::Axis;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("axis {axis} has size {left} in one operand and {right} in another")]
    AxisMismatch { axis: Axis, left: usize, right: usize },

    #[error("axis {0} is not present")]
    MissingAxis(Axis),

    #[error("axis {0} is not a plate axis")]
    NotPlateAxis(Axis),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("evaluation error at `{site}`: {message}")]
    Evaluation { site: String, message: String },

    #[error("dependency cycle among latents: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("model is not well-formed: {}", format_diagnostics(.0))]
    InvalidModel(Vec<Diagnostic>),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("the computation needs {entries} entries, over the cap of {cap}; use smaller sizes or K")]
    SizeCap { entries: u128, cap: u128 },

    #[error("degenerate distribution for `{site}`: all weights are zero")]
    Degenerate { site: String },
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
