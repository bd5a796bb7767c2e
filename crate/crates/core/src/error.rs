use thiserror::Error;

use crate::sched::TraceRow;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("network failed validation:\n{}", render_diagnostics(.0))]
    Validation(Vec<crate::graph::Diagnostic>),

    #[error("missing weight `{param}` for layer `{layer}`")]
    MissingWeight { layer: String, param: String },

    #[error("weight `{param}` for layer `{layer}` has dims {found:?}, expected {expected:?}")]
    WeightShape {
        layer: String,
        param: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing input tensor `{0}`")]
    MissingInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("rank {rank} out of range 1..={max}")]
    Rank { rank: usize, max: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at iteration {iter} (loss is NaN)")]
    Diverged { iter: usize, trace: Box<Vec<TraceRow>> },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Format(_) => 2,
            _ => 1,
        }
    }
}

fn render_diagnostics(diags: &[crate::graph::Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}
