//! An exact conditional-table model over a tiny vocabulary, used as a
//! hand-checkable oracle in tests and fixtures.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::types::{LogitVector, ProbVector, TokenId};

use super::{LanguageModel, ModelError, ModelInfo};

/// Context length limit; table models are meant to stay hand-enumerable.
pub const MAX_TABLE_ORDER: usize = 2;
/// Vocabulary limit for the same reason.
pub const MAX_TABLE_VOCAB: usize = 10;

/// A language model defined by explicitly stored conditional distributions.
///
/// Lookup uses the last `min(order, len(context))` context tokens; a context
/// without a stored row is an error rather than a silent fallback.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct TableLM {
    order: usize,
    info: ModelInfo,
    table: HashMap<Vec<TokenId>, ProbVector>,
}

impl TableLM {
    /// Builds a table model from `(context, probabilities)` rows. Contexts
    /// are raw token ids, most recent token last.
    pub fn new(
        order: usize,
        vocab_size: usize,
        eos_id: u32,
        rows: Vec<(Vec<u32>, Vec<f64>)>,
    ) -> Result<Self, ModelError> {
        if order > MAX_TABLE_ORDER {
            return Err(ModelError::ContextTooLong {
                got: order,
                max: MAX_TABLE_ORDER,
            });
        }
        if vocab_size > MAX_TABLE_VOCAB {
            return Err(ModelError::VocabTooLarge(vocab_size, MAX_TABLE_VOCAB));
        }
        let info = ModelInfo::new(vocab_size, TokenId(eos_id), None)?;
        let mut table = HashMap::with_capacity(rows.len());
        for (raw_ctx, probs) in rows {
            if raw_ctx.len() > order {
                return Err(ModelError::ContextTooLong {
                    got: raw_ctx.len(),
                    max: order,
                });
            }
            let ctx: Vec<TokenId> = raw_ctx.into_iter().map(TokenId).collect();
            info.check_tokens(&ctx)?;
            if probs.len() != vocab_size {
                return Err(ModelError::BadNameCount(probs.len(), vocab_size));
            }
            table.insert(ctx, ProbVector::new(probs)?);
        }
        Ok(TableLM { order, info, table })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self, ModelError> {
        if names.len() != self.info.vocab_size {
            return Err(ModelError::BadNameCount(names.len(), self.info.vocab_size));
        }
        self.info.token_names = Some(names);
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// The stored conditional for a context (after truncation to `order`).
    pub fn conditional(&self, context: &[TokenId]) -> Result<&ProbVector, ModelError> {
        let start = context.len().saturating_sub(self.order);
        let key = &context[start..];
        self.table
            .get(key)
            .ok_or_else(|| ModelError::MissingContext(key.iter().map(|t| t.0).collect()))
    }
}

impl LanguageModel for TableLM {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ModelError> {
        self.info.check_tokens(context)?;
        let probs = self.conditional(context)?;
        let logits: Vec<f64> = probs.values().iter().map(|&p| p.ln()).collect();
        Ok(LogitVector::new(logits)?)
    }
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    order: usize,
    vocab_size: usize,
    eos_id: u32,
    token_names: Option<Vec<String>>,
    rows: Vec<(Vec<u32>, Vec<f64>)>,
}

impl From<TableLM> for TableRepr {
    fn from(m: TableLM) -> TableRepr {
        let mut rows: Vec<(Vec<u32>, Vec<f64>)> = m
            .table
            .into_iter()
            .map(|(ctx, probs)| {
                (
                    ctx.into_iter().map(|t| t.0).collect(),
                    probs.values().to_vec(),
                )
            })
            .collect();
        rows.sort();
        TableRepr {
            order: m.order,
            vocab_size: m.info.vocab_size,
            eos_id: m.info.eos_id.0,
            token_names: m.info.token_names,
            rows,
        }
    }
}

impl TryFrom<TableRepr> for TableLM {
    type Error = ModelError;

    fn try_from(repr: TableRepr) -> Result<TableLM, ModelError> {
        let model = TableLM::new(repr.order, repr.vocab_size, repr.eos_id, repr.rows)?;
        match repr.token_names {
            Some(names) => model.with_names(names),
            None => Ok(model),
        }
    }
}
