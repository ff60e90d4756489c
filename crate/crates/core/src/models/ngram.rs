//! Add-k smoothed n-gram model with longest-available-context backoff,
//! trained from raw text. Serves as the desk-scale stand-in for a large
//! neural model: greedy decoding on it falls into repetition loops readily,
//! which is exactly what the self-reinforcement metrics need to observe.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::types::{LogitVector, TokenId, TokenSequence};

use super::{LanguageModel, ModelError, ModelInfo};

/// Rendering name of the end-of-document token.
pub const EOS_NAME: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    Char,
    Whitespace,
}

impl Tokenizer {
    pub fn split(&self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Char => text.chars().map(String::from).collect(),
            Tokenizer::Whitespace => text.split_whitespace().map(String::from).collect(),
        }
    }
}

impl std::fmt::Display for Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tokenizer::Char => write!(f, "char"),
            Tokenizer::Whitespace => write!(f, "whitespace"),
        }
    }
}

impl std::str::FromStr for Tokenizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "char" => Ok(Tokenizer::Char),
            "whitespace" => Ok(Tokenizer::Whitespace),
            other => Err(format!("unknown tokenizer '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    by_token: HashMap<TokenId, u64>,
}

/// An order-n model: P(t | ctx) = (count(ctx, t) + k) / (count(ctx) + k * V),
/// where ctx is the last n-1 tokens. Contexts never observed at the longest
/// order back off to the longest stored shorter order (the empty context is
/// always stored, so lookup always succeeds).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NGramRepr", into = "NGramRepr")]
pub struct NGramLM {
    order: usize,
    smoothing_k: f64,
    tokenizer: Tokenizer,
    info: ModelInfo,
    token_count: u64,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
    name_index: HashMap<String, TokenId>,
}

/// Trains an [`NGramLM`]. One eos token is appended to every document;
/// contexts never cross document boundaries.
pub fn train_ngram<S: AsRef<str>>(
    corpus: &[S],
    order: usize,
    smoothing_k: f64,
    tokenizer: Tokenizer,
) -> Result<NGramLM, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if order < 1 {
        return Err(ModelError::InvalidOrder(order));
    }
    if !(smoothing_k > 0.0) {
        return Err(ModelError::InvalidSmoothing(smoothing_k));
    }

    // Vocabulary in first-appearance order; eos appended last.
    let mut names: Vec<String> = Vec::new();
    let mut name_index: HashMap<String, TokenId> = HashMap::new();
    let mut docs: Vec<Vec<TokenId>> = Vec::with_capacity(corpus.len());
    for doc in corpus {
        let mut tokens = Vec::new();
        for name in tokenizer.split(doc.as_ref()) {
            let id = *name_index.entry(name.clone()).or_insert_with(|| {
                names.push(name);
                TokenId((names.len() - 1) as u32)
            });
            tokens.push(id);
        }
        docs.push(tokens);
    }
    let eos = TokenId(names.len() as u32);
    names.push(EOS_NAME.to_string());
    name_index.insert(EOS_NAME.to_string(), eos);

    let info = ModelInfo::new(names.len(), eos, Some(names))?;

    let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
    let mut token_count = 0u64;
    for mut doc in docs {
        doc.push(eos);
        token_count += doc.len() as u64;
        for pos in 0..doc.len() {
            let token = doc[pos];
            let max_ctx = pos.min(order - 1);
            for len in 0..=max_ctx {
                let ctx = doc[pos - len..pos].to_vec();
                let entry = counts.entry(ctx).or_default();
                entry.total += 1;
                *entry.by_token.entry(token).or_insert(0) += 1;
            }
        }
    }

    Ok(NGramLM {
        order,
        smoothing_k,
        tokenizer,
        info,
        token_count,
        counts,
        name_index,
    })
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    /// Total training tokens, eos markers included.
    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    /// Maps text onto the trained vocabulary. Tokens outside the vocabulary
    /// are dropped; the count of dropped tokens is returned alongside.
    pub fn tokenize(&self, text: &str) -> (TokenSequence, usize) {
        let mut tokens = TokenSequence::new();
        let mut dropped = 0usize;
        for name in self.tokenizer.split(text) {
            match self.name_index.get(&name) {
                Some(&id) => tokens.push(id),
                None => dropped += 1,
            }
        }
        (tokens, dropped)
    }

    /// The longest stored context that is a suffix of `context`.
    fn backoff_context<'a>(&self, context: &'a [TokenId]) -> &'a [TokenId] {
        let max_len = context.len().min(self.order - 1);
        for len in (0..=max_len).rev() {
            let candidate = &context[context.len() - len..];
            if self.counts.contains_key(candidate) {
                return candidate;
            }
        }
        // The empty context is always stored.
        &context[context.len()..]
    }
}

impl LanguageModel for NGramLM {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector, ModelError> {
        self.info.check_tokens(context)?;
        let ctx = self.backoff_context(context);
        let stats = self
            .counts
            .get(ctx)
            .ok_or_else(|| ModelError::MissingContext(ctx.iter().map(|t| t.0).collect()))?;
        let vocab = self.info.vocab_size as f64;
        let denom = stats.total as f64 + self.smoothing_k * vocab;
        let logits: Vec<f64> = (0..self.info.vocab_size)
            .map(|id| {
                let count = stats
                    .by_token
                    .get(&TokenId(id as u32))
                    .copied()
                    .unwrap_or(0) as f64;
                ((count + self.smoothing_k) / denom).ln()
            })
            .collect();
        Ok(LogitVector::new(logits)?)
    }

    fn render(&self, tokens: &[TokenId]) -> String {
        match self.tokenizer {
            Tokenizer::Char => tokens.iter().map(|&t| self.info.name_of(t)).collect(),
            Tokenizer::Whitespace => tokens
                .iter()
                .map(|&t| self.info.name_of(t))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NGramRepr {
    order: usize,
    smoothing_k: f64,
    tokenizer: Tokenizer,
    vocab_size: usize,
    eos_id: u32,
    token_names: Vec<String>,
    token_count: u64,
    /// (context, [(token, count)...]) rows, sorted for stable output bytes.
    rows: Vec<(Vec<u32>, Vec<(u32, u64)>)>,
}

impl From<NGramLM> for NGramRepr {
    fn from(m: NGramLM) -> NGramRepr {
        let mut rows: Vec<(Vec<u32>, Vec<(u32, u64)>)> = m
            .counts
            .into_iter()
            .map(|(ctx, stats)| {
                let mut pairs: Vec<(u32, u64)> =
                    stats.by_token.into_iter().map(|(t, c)| (t.0, c)).collect();
                pairs.sort();
                (ctx.into_iter().map(|t| t.0).collect(), pairs)
            })
            .collect();
        rows.sort();
        NGramRepr {
            order: m.order,
            smoothing_k: m.smoothing_k,
            tokenizer: m.tokenizer,
            vocab_size: m.info.vocab_size,
            eos_id: m.info.eos_id.0,
            token_names: m.info.token_names.unwrap_or_default(),
            token_count: m.token_count,
            rows,
        }
    }
}

impl TryFrom<NGramRepr> for NGramLM {
    type Error = ModelError;

    fn try_from(repr: NGramRepr) -> Result<NGramLM, ModelError> {
        if repr.order < 1 {
            return Err(ModelError::InvalidOrder(repr.order));
        }
        if !(repr.smoothing_k > 0.0) {
            return Err(ModelError::InvalidSmoothing(repr.smoothing_k));
        }
        let info = ModelInfo::new(
            repr.vocab_size,
            TokenId(repr.eos_id),
            Some(repr.token_names),
        )?;
        let mut counts = HashMap::with_capacity(repr.rows.len());
        for (raw_ctx, pairs) in repr.rows {
            let ctx: Vec<TokenId> = raw_ctx.into_iter().map(TokenId).collect();
            info.check_tokens(&ctx)?;
            let mut stats = ContextCounts::default();
            for (t, c) in pairs {
                if t as usize >= info.vocab_size {
                    return Err(ModelError::TokenOutOfRange(t, info.vocab_size));
                }
                stats.total += c;
                stats.by_token.insert(TokenId(t), c);
            }
            counts.insert(ctx, stats);
        }
        let name_index = info
            .token_names
            .as_ref()
            .map(|names| {
                names
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (n.clone(), TokenId(i as u32)))
                    .collect()
            })
            .unwrap_or_default();
        Ok(NGramLM {
            order: repr.order,
            smoothing_k: repr.smoothing_k,
            tokenizer: repr.tokenizer,
            info,
            token_count: repr.token_count,
            counts,
            name_index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::softmax;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unigram_add_one_smoothing_by_hand() {
        // "ab" -> tokens a, b, eos; V = 3, counts 1 each, total 3.
        // P(a) = (1 + 1) / (3 + 3) = 1/3.
        let m = train_ngram(&["ab"], 1, 1.0, Tokenizer::Char).unwrap();
        assert_eq!(m.info().vocab_size, 3);
        let probs = softmax(&m.next_logits(&[]).unwrap()).unwrap();
        assert_abs_diff_eq!(probs.values()[0], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn bigram_transition_by_hand() {
        // "aa" -> a a eos. Context [a]: a once, eos once. With k -> 0,
        // P(a | a) -> 0.5.
        let m = train_ngram(&["aa"], 2, 1e-6, Tokenizer::Char).unwrap();
        let a = TokenId(0);
        let probs = softmax(&m.next_logits(&[a]).unwrap()).unwrap();
        assert_abs_diff_eq!(probs.values()[0], 0.5, epsilon = 1e-5);
    }

    #[test]
    fn unseen_context_backs_off_to_shorter_order() {
        let m = train_ngram(&["aa"], 2, 0.5, Tokenizer::Char).unwrap();
        let eos = m.info().eos_id;
        // eos never appears as a context in training, so [eos] falls back to
        // the unigram table == the empty-context logits.
        let backed_off = m.next_logits(&[eos]).unwrap();
        let unigram = m.next_logits(&[]).unwrap();
        assert_eq!(backed_off.values(), unigram.values());
    }

    #[test]
    fn all_probabilities_strictly_positive() {
        let m = train_ngram(&["abcab", "cabba"], 3, 0.25, Tokenizer::Char).unwrap();
        let contexts: Vec<Vec<TokenId>> = vec![
            vec![],
            vec![TokenId(0)],
            vec![TokenId(1), TokenId(2)],
            vec![TokenId(2), TokenId(2)],
            vec![m.info().eos_id],
        ];
        for ctx in contexts {
            let probs = softmax(&m.next_logits(&ctx).unwrap()).unwrap();
            assert!(probs.values().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn distributions_normalize() {
        let m = train_ngram(&["the cat sat", "the dog sat"], 2, 1.0, Tokenizer::Whitespace)
            .unwrap();
        for ctx in [vec![], vec![TokenId(0)], vec![TokenId(3)]] {
            let probs = softmax(&m.next_logits(&ctx).unwrap()).unwrap();
            let sum: f64 = probs.values().iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            train_ngram(&empty, 1, 1.0, Tokenizer::Char),
            Err(ModelError::EmptyCorpus)
        ));
    }

    #[test]
    fn tokenize_drops_unknown_tokens() {
        let m = train_ngram(&["ab"], 1, 1.0, Tokenizer::Char).unwrap();
        let (tokens, dropped) = m.tokenize("abz");
        assert_eq!(tokens.as_slice(), &[TokenId(0), TokenId(1)]);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn render_matches_tokenizer_style() {
        let chars = train_ngram(&["ab"], 1, 1.0, Tokenizer::Char).unwrap();
        assert_eq!(chars.render(&[TokenId(0), TokenId(1)]), "ab");
        let words = train_ngram(&["big cat"], 1, 1.0, Tokenizer::Whitespace).unwrap();
        assert_eq!(words.render(&[TokenId(0), TokenId(1)]), "big cat");
    }
}
