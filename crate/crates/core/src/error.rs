use thiserror::Error;

use crate::mask_path::MaskTag;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("fact {0} is empty")]
    EmptyField(&'static str),
    #[error("edit sides disagree: {0}")]
    EditMismatch(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("case {case_id}: {reason}")]
    Case { case_id: String, reason: String },
    #[error("reading {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed case file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Violations of the masked-path grammar and its invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no [MASK *] tag in any reasoning step")]
    NoMasks,
    #[error("no [STEP] markers")]
    NoSteps,
    #[error("[MASK ANS] never occurs in a step")]
    MissingAnswerTag,
    #[error("last occurrence of [MASK ANS] is not in the final step")]
    AnswerTagNotLast,
    #[error("no [CATEGORY] block")]
    MissingCategoryBlock,
    #[error("{0} has no category hint")]
    UnhintedTag(MaskTag),
    #[error("{0} has conflicting category hints")]
    ConflictingHints(MaskTag),
    #[error("step {step} introduces more than one new tag")]
    MultipleNewTags { step: usize },
    #[error("mask without identifier in step {step}")]
    UnidentifiedMask { step: usize },
    #[error("empty question")]
    EmptyQuestion,
    #[error("{0} does not occur in the step")]
    TagAbsent(MaskTag),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend cannot supply token log-probabilities")]
    UnsupportedLogprobs,
    #[error("no yes/no token among the first-token alternatives")]
    NeitherTokenFound,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted reply for request {0}")]
    MissingFixture(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("empty query")]
    EmptyQuery,
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("embedder {name}: {reason}")]
    Embedder { name: String, reason: String },
    #[error("embedding dimension {got} differs from index dimension {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum FillError {
    #[error("empty fill reply for {0}")]
    EmptyReply(MaskTag),
    #[error("path ended without binding [MASK ANS]")]
    UnreachableAnswer,
    #[error("{0} has no category hint")]
    MissingHint(MaskTag),
    #[error(transparent)]
    Path(#[from] ParseError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("fill request failed: {0}")]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("negative probability {0}")]
    NegativeProbability(f64),
    #[error("probabilities sum to {0}, above 1")]
    MassAboveOne(f64),
    #[error("empty generation trace")]
    EmptyTrace,
    #[error("no candidate was filled")]
    AllCandidatesFailed,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible world: {0}")]
    Infeasible(String),
    #[error("no {hops}-hop chain available")]
    NoChain { hops: usize },
    #[error("invalid request: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no case results")]
    Empty,
    #[error("relation extraction failed: {0}")]
    Extraction(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("writing {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
