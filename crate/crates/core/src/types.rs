//! Shared domain types: token ids and sequences, logit and probability
//! vectors, and the per-step trace records that metrics consume.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Deref, Index};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on the sum of a [`ProbVector`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    /// Every logit is negative infinity; there is nothing to normalize.
    #[error("empty support")]
    EmptySupport,
    #[error("logit at index {0} is NaN or +inf")]
    NonFiniteLogit(usize),
    #[error("probability at index {index} is invalid: {value}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1 within 1e-9")]
    NotNormalized(f64),
}

/// Index of a token in a model's vocabulary.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(id: u32) -> Self {
        TokenId(id)
    }
}

/// Tokens in generation order. May be empty.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Convenience constructor from raw ids, mostly for tests and fixtures.
    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        Self(ids.into_iter().map(TokenId).collect())
    }

    pub fn push(&mut self, token: TokenId) {
        self.0.push(token);
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<TokenId> {
        self.0
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }
}

impl FromIterator<TokenId> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a TokenSequence {
    type Item = &'a TokenId;
    type IntoIter = std::slice::Iter<'a, TokenId>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Unnormalized per-token scores on the natural-log scale.
///
/// Entries must not be NaN or +inf; -inf is allowed and encodes a hard mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DistError> {
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() || *v == f64::INFINITY {
                return Err(DistError::NonFiniteLogit(i));
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.clone()
    }
}

impl Index<TokenId> for LogitVector {
    type Output = f64;

    fn index(&self, token: TokenId) -> &f64 {
        &self.0[token.index()]
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = DistError;

    fn try_from(values: Vec<f64>) -> Result<Self, DistError> {
        Self::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(v: LogitVector) -> Vec<f64> {
        v.0
    }
}

/// A normalized probability distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DistError> {
        for (i, v) in values.iter().enumerate() {
            if !(*v >= 0.0) || !v.is_finite() {
                return Err(DistError::InvalidProbability {
                    index: i,
                    value: *v,
                });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(DistError::NotNormalized(sum));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, token: TokenId) -> Option<f64> {
        self.0.get(token.index()).copied()
    }
}

impl Index<TokenId> for ProbVector {
    type Output = f64;

    fn index(&self, token: TokenId) -> &f64 {
        &self.0[token.index()]
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = DistError;

    fn try_from(values: Vec<f64>) -> Result<Self, DistError> {
        Self::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(v: ProbVector) -> Vec<f64> {
        v.0
    }
}

/// Numerically stable softmax: `exp(v_i - m) / sum_j exp(v_j - m)` with
/// `m = max(v)`. Entries with a -inf logit come out exactly 0.
pub fn softmax(logits: &LogitVector) -> Result<ProbVector, DistError> {
    let max = logits
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(DistError::EmptySupport);
    }
    let mut out: Vec<f64> = logits.values().iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    ProbVector::new(out)
}

/// Log-probabilities via log-sum-exp; -inf logits stay -inf.
pub fn log_softmax(logits: &LogitVector) -> Result<Vec<f64>, DistError> {
    let max = logits
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(DistError::EmptySupport);
    }
    let sum: f64 = logits.values().iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    Ok(logits.values().iter().map(|&v| v - lse).collect())
}

/// Index of the maximum probability; ties break toward the lowest token id.
pub fn argmax_token(probs: &ProbVector) -> TokenId {
    debug_assert!(!probs.is_empty());
    let mut best = 0usize;
    for (i, &p) in probs.values().iter().enumerate() {
        if p > probs.values()[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}

/// How a generation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLength,
}

/// Per-step record of what the model predicted and what the decoder chose.
///
/// `chosen_prob_raw`, `argmax_raw`, and `topk_mass` always describe the
/// model's unmodified distribution, before any penalty or truncation;
/// `chosen_prob_final` is the probability under the distribution that was
/// actually sampled or argmaxed. Self-reinforcement metrics read the raw
/// fields so they measure the model rather than the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub chosen: TokenId,
    pub chosen_prob_raw: f64,
    pub chosen_prob_final: f64,
    pub argmax_raw: TokenId,
    /// k -> sum of the k largest raw probabilities.
    pub topk_mass: BTreeMap<usize, f64>,
    pub is_greedy: bool,
}

impl StepTrace {
    /// Builds a trace from the raw model distribution and the decoder's pick.
    pub fn record(
        raw: &ProbVector,
        chosen: TokenId,
        chosen_prob_final: f64,
        mass_ks: &[usize],
    ) -> Self {
        let argmax_raw = argmax_token(raw);
        let topk_mass = top_mass(raw, mass_ks);
        StepTrace {
            chosen,
            chosen_prob_raw: raw[chosen],
            chosen_prob_final,
            argmax_raw,
            topk_mass,
            is_greedy: chosen == argmax_raw,
        }
    }
}

/// k -> sum of the k largest probabilities, for each requested k.
fn top_mass(probs: &ProbVector, ks: &[usize]) -> BTreeMap<usize, f64> {
    if ks.is_empty() {
        return BTreeMap::new();
    }
    let mut sorted = probs.values().to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for p in &sorted {
        acc += p;
        prefix.push(acc);
    }
    ks.iter()
        .map(|&k| (k, prefix[k.min(sorted.len())]))
        .collect()
}

/// One full generation: the conditioning prefix, the produced continuation,
/// and a [`StepTrace`] per produced token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prefix: TokenSequence,
    pub generated: TokenSequence,
    pub traces: Vec<StepTrace>,
    pub termination: Termination,
}

impl GenerationRecord {
    pub fn generated_len(&self) -> usize {
        self.generated.len()
    }
}
