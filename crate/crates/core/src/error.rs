use thiserror::Error;

/// Errors raised by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("point behind camera at frame {frame}, joint {joint} (depth {depth:e})")]
    BehindCamera {
        frame: usize,
        joint: usize,
        depth: f64,
    },

    #[error("degenerate viewing ray at frame {frame}, joint {joint}")]
    DegenerateRay { frame: usize, joint: usize },

    #[error("rotation retraction failed at frame {frame}")]
    Retraction { frame: usize },

    #[error("objective increased during {stage}: {before:.17e} -> {after:.17e}")]
    ObjectiveIncrease {
        stage: &'static str,
        before: f64,
        after: f64,
    },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("learning failed: {0}")]
    Learning(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that signal a broken solver invariant rather than bad input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(
            self,
            Error::ObjectiveIncrease { .. } | Error::Retraction { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
