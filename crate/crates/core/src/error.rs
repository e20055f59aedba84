use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the analysis pipeline can report.
///
/// [`Error::kind`] gives a stable snake_case tag that the CLI emits in its
/// machine-readable error output.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("duplicate {0}")]
    Duplicate(String),

    #[error("incomplete psychometric scores: {0}")]
    IncompleteScores(String),

    #[error("degenerate score: test `{0}` has zero variance across subjects")]
    DegenerateScore(String),

    #[error("word `{word}` (text {text_id}, index {word_index}) is missing from the lexicon")]
    MissingLexicon {
        word: String,
        text_id: String,
        word_index: u32,
    },

    #[error("no {lm_tag} scores for text {text_id}, word {word_index}")]
    MissingWordScore {
        lm_tag: String,
        text_id: String,
        word_index: u32,
    },

    #[error("reading data inconsistent with stimulus texts: {0}")]
    TextMismatch(String),

    #[error("empty table: {0}")]
    EmptyTable(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("language model corpus contains no words")]
    EmptyCorpus,

    #[error("cannot score an empty sentence")]
    EmptySentence,

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("alignment error in text {text_id}: {message}")]
    Alignment { text_id: String, message: String },

    #[error("collinear design: column `{column}` is linearly dependent on {dependent_on:?}")]
    Collinearity {
        column: String,
        dependent_on: Vec<String>,
    },

    #[error("optimization did not converge: {message} (last {} evaluations recorded)", trace.len())]
    Optimization {
        message: String,
        /// `(theta, deviance)` pairs in evaluation order.
        trace: Vec<(f64, f64)>,
    },

    #[error("model specification error: {0}")]
    Spec(String),

    #[error("problem too large: {0}")]
    Size(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("fold {fold}, {model} model: {source}")]
    Fold {
        fold: usize,
        model: String,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate median split: {0}")]
    DegenerateSplit(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Duplicate(_) => "duplicate",
            Error::IncompleteScores(_) => "incomplete_scores",
            Error::DegenerateScore(_) => "degenerate_score",
            Error::MissingLexicon { .. } => "missing_lexicon",
            Error::MissingWordScore { .. } => "missing_word_score",
            Error::TextMismatch(_) => "text_mismatch",
            Error::EmptyTable(_) => "empty_table",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EmptyCorpus => "empty_corpus",
            Error::EmptySentence => "empty_sentence",
            Error::ModelFormat(_) => "model_format",
            Error::Alignment { .. } => "alignment",
            Error::Collinearity { .. } => "collinearity",
            Error::Optimization { .. } => "optimization",
            Error::Spec(_) => "spec",
            Error::Size(_) => "size",
            Error::Numeric(_) => "numeric",
            Error::Fold { .. } => "fold",
            Error::DegenerateSplit(_) => "degenerate_split",
            Error::InsufficientData(_) => "insufficient_data",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: &str, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}
