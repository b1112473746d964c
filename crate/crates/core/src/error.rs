use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no tokens left after tokenization")]
    EmptyAfterTokenize,

    #[error("post has no valid keyphrase")]
    NoKeyphrase,

    #[error("too few posts to split: {0}")]
    TooFewPosts(usize),

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged in {phase} at epoch {epoch}")]
    Divergence { phase: String, epoch: usize },

    #[error("prediction has no attention trace")]
    TraceMissing,

    #[error("post has no gold keyphrases")]
    NoGolds,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
