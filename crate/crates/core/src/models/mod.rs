//! The language-model abstraction and the desk-scale reference
//! implementations behind it: an exact conditional table and a smoothed
//! n-gram model trained from text.

mod ngram;
mod table;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{log_softmax, DistError, LogitVector, TokenId, TokenSequence};

pub use ngram::{train_ngram, NGramLM, Tokenizer};
pub use table::TableLM;

/// Current on-disk model format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token {0} out of range for vocabulary of size {1}")]
    TokenOutOfRange(u32, usize),
    #[error("no stored conditional for context {0:?}")]
    MissingContext(Vec<u32>),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("n-gram order must be >= 1 (got {0})")]
    InvalidOrder(usize),
    #[error("table context length must be <= {max} (got {got})")]
    ContextTooLong { got: usize, max: usize },
    #[error("smoothing constant must be > 0 (got {0})")]
    InvalidSmoothing(f64),
    #[error("vocabulary size {0} exceeds the table-model limit of {1}")]
    VocabTooLarge(usize, usize),
    #[error("eos id {0} out of range for vocabulary of size {1}")]
    EosOutOfRange(u32, usize),
    #[error("token names length {0} does not match vocabulary size {1}")]
    BadNameCount(usize, usize),
    #[error("continuation is empty")]
    EmptyContinuation,
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model encoding: {0}")]
    Encoding(#[from] serde_json::Error),
    #[error("unsupported model format version {0} (expected {MODEL_FORMAT_VERSION})")]
    UnsupportedVersion(u32),
}

/// Static facts about a model's vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub vocab_size: usize,
    pub eos_id: TokenId,
    /// Optional per-token rendering strings.
    pub token_names: Option<Vec<String>>,
}

impl ModelInfo {
    pub fn new(
        vocab_size: usize,
        eos_id: TokenId,
        token_names: Option<Vec<String>>,
    ) -> Result<Self, ModelError> {
        if eos_id.index() >= vocab_size {
            return Err(ModelError::EosOutOfRange(eos_id.0, vocab_size));
        }
        if let Some(names) = &token_names {
            if names.len() != vocab_size {
                return Err(ModelError::BadNameCount(names.len(), vocab_size));
            }
        }
        Ok(ModelInfo {
            vocab_size,
            eos_id,
            token_names,
        })
    }

    pub fn name_of(&self, token: TokenId) -> String {
        match &self.token_names {
            Some(names) if token.index() < names.len() => names[token.index()].clone(),
            _ => format!("#{}", token.0),
        }
    }

    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        for t in tokens {
            if t.index() >= self.vocab_size {
                return Err(ModelError::TokenOutOfRange(t.0, self.vocab_size));
            }
        }
        Ok(())
    }
}

/// A next-token predictor. Implementations must be deterministic: the same
/// context always yields bitwise-identical logits.
pub trait LanguageModel: Send + Sync {
    fn info(&self) -> &ModelInfo;

    /// Unnormalized next-token scores given the full context so far.
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ModelError>;

    /// Human-readable rendering of a token sequence.
    fn render(&self, tokens: &[TokenId]) -> String {
        let info = self.info();
        tokens
            .iter()
            .map(|&t| info.name_of(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Sum of log-probabilities of `continuation` given `prefix`, scored one
/// token at a time. A zero-probability token yields -inf, not an error.
pub fn sequence_logprob(
    model: &dyn LanguageModel,
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<f64, ModelError> {
    if continuation.is_empty() {
        return Err(ModelError::EmptyContinuation);
    }
    let mut context: Vec<TokenId> = prefix.to_vec();
    let mut total = 0.0;
    for &token in continuation {
        let logits = model.next_logits(&context)?;
        if token.index() >= logits.len() {
            return Err(ModelError::TokenOutOfRange(token.0, logits.len()));
        }
        let logp = log_softmax(&logits)?[token.index()];
        total += logp;
        context.push(token);
    }
    Ok(total)
}

/// A loadable model; the concrete kinds the engine ships with.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Table(TableLM),
    Ngram(NGramLM),
}

impl ModelKind {
    pub fn as_language_model(&self) -> &dyn LanguageModel {
        match self {
            ModelKind::Table(m) => m,
            ModelKind::Ngram(m) => m,
        }
    }

    /// Text tokenization, available only for models trained from text.
    /// Returns the token sequence and the number of unknown tokens dropped.
    pub fn tokenize(&self, text: &str) -> Option<(TokenSequence, usize)> {
        match self {
            ModelKind::Table(_) => None,
            ModelKind::Ngram(m) => Some(m.tokenize(text)),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(flatten)]
    model: ModelKind,
}

/// Writes a versioned model dump. `load_model(save_model(m))` yields a model
/// with identical `next_logits` for every context.
pub fn save_model(model: &ModelKind, path: &Path) -> Result<(), ModelError> {
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelKind, ModelError> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(file.version));
    }
    Ok(file.model)
}
