//! Self-reinforcement and text-quality measurements over generation records.
//!
//! The self-reinforcement metrics always read the *raw* model probabilities
//! recorded in each [`StepTrace`], so they measure the model's behavior along
//! a decoder's trajectory rather than the decoder's truncated distribution.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{sequence_logprob, LanguageModel, ModelError};
use crate::types::{GenerationRecord, TokenId};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("generation record has no steps")]
    EmptyGeneration,
    #[error("traces carry no top-{0} mass; record them at generation time")]
    MissingTopkMass(usize),
    #[error("text of length {len} is too short for the metric (needs >= {min})")]
    TooShort { len: usize, min: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Self-reinforcement measurements for one record or an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfReinforcementReport {
    /// n -> reinforced fraction, for n-gram sizes 1..=4.
    pub sr_n: BTreeMap<usize, f64>,
    /// k -> fraction of steps where the running mean top-k mass rose.
    pub sr_topk: BTreeMap<usize, f64>,
    /// k -> per-step mean top-k mass across records.
    pub ns_curve: BTreeMap<usize, Vec<f64>>,
}

/// Text-quality measurements mirroring the evaluation table layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub diversity: f64,
    /// n -> duplicated n-gram percentage, n in 2..=4.
    pub rep_n: BTreeMap<usize, f64>,
    pub coherence: f64,
    pub greedy_ratio: f64,
    pub gen_length: f64,
}

/// Fraction of n-gram positions whose recurrence carries a strictly higher
/// mean raw token probability than its most recent prior occurrence.
///
/// The denominator counts every n-gram position (`L_g - n + 1`), so the ratio
/// is bounded by the recurrence rate. Records shorter than `n` score 0.
pub fn sr_ngram(record: &GenerationRecord, n: usize) -> f64 {
    assert!(n >= 1, "n-gram size must be >= 1");
    let tokens = record.generated.as_slice();
    let len = tokens.len();
    if len < n {
        log::debug!("generation of length {len} is shorter than n = {n}; sr_n = 0");
        return 0.0;
    }
    debug_assert_eq!(record.traces.len(), len);
    let mean_prob = |start: usize| -> f64 {
        record.traces[start..start + n]
            .iter()
            .map(|t| t.chosen_prob_raw)
            .sum::<f64>()
            / n as f64
    };
    let mut last_seen: HashMap<&[TokenId], usize> = HashMap::new();
    let mut reinforced = 0usize;
    for u in 0..=len - n {
        let gram = &tokens[u..u + n];
        if let Some(&v) = last_seen.get(gram) {
            if mean_prob(u) > mean_prob(v) {
                reinforced += 1;
            }
        }
        last_seen.insert(gram, u);
    }
    reinforced as f64 / (len - n + 1) as f64
}

/// Fraction of steps at which the running mean of the top-k raw mass strictly
/// rose. The first step compares against an empty mean and never counts.
pub fn sr_nucleus(record: &GenerationRecord, k: usize) -> Result<f64, MetricsError> {
    let len = record.traces.len();
    if len == 0 {
        return Err(MetricsError::EmptyGeneration);
    }
    let mut sum = 0.0;
    let mut rises = 0usize;
    let mut prev_mean = f64::NAN;
    for (t, trace) in record.traces.iter().enumerate() {
        let ns = *trace
            .topk_mass
            .get(&k)
            .ok_or(MetricsError::MissingTopkMass(k))?;
        sum += ns;
        let mean = sum / (t + 1) as f64;
        if t > 0 && mean > prev_mean {
            rises += 1;
        }
        prev_mean = mean;
    }
    Ok(rises as f64 / len as f64)
}

/// k -> per-step mean top-k raw mass across records; step `t` averages over
/// the records that are at least `t + 1` tokens long.
pub fn ns_curve(
    records: &[GenerationRecord],
    ks: &[usize],
) -> Result<BTreeMap<usize, Vec<f64>>, MetricsError> {
    let mut out = BTreeMap::new();
    let horizon = records.iter().map(|r| r.traces.len()).max().unwrap_or(0);
    for &k in ks {
        let mut sums = vec![0.0; horizon];
        let mut counts = vec![0usize; horizon];
        for record in records {
            for (t, trace) in record.traces.iter().enumerate() {
                let ns = *trace
                    .topk_mass
                    .get(&k)
                    .ok_or(MetricsError::MissingTopkMass(k))?;
                sums[t] += ns;
                counts[t] += 1;
            }
        }
        let curve = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        out.insert(k, curve);
    }
    Ok(out)
}

/// Percentage of duplicated n-grams: `100 * (1 - unique / total)`.
/// Texts shorter than `n` score 0.
pub fn rep_n(text: &[TokenId], n: usize) -> f64 {
    assert!(n >= 1, "n-gram size must be >= 1");
    if text.len() < n {
        log::debug!(
            "text of length {} is shorter than n = {n}; rep_n = 0",
            text.len()
        );
        return 0.0;
    }
    let total = text.len() - n + 1;
    let unique = text
        .windows(n)
        .collect::<std::collections::HashSet<_>>()
        .len();
    100.0 * (1.0 - unique as f64 / total as f64)
}

/// `prod_{n=2..4} (1 - rep_n / 100)`. Texts shorter than 4 tokens are an
/// error rather than a partial product.
pub fn diversity(text: &[TokenId]) -> Result<f64, MetricsError> {
    if text.len() < 4 {
        return Err(MetricsError::TooShort {
            len: text.len(),
            min: 4,
        });
    }
    Ok((2..=4).map(|n| 1.0 - rep_n(text, n) / 100.0).product())
}

/// Mean per-token natural log probability of `generated` conditioned on
/// `prefix` under the scoring model. -inf is a legal value (a zero-probability
/// token), not an error.
pub fn coherence(
    scorer: &dyn LanguageModel,
    prefix: &[TokenId],
    generated: &[TokenId],
) -> Result<f64, MetricsError> {
    if generated.is_empty() {
        return Err(MetricsError::EmptyGeneration);
    }
    Ok(sequence_logprob(scorer, prefix, generated)? / generated.len() as f64)
}

/// Fraction of steps whose emitted token equals the raw-distribution argmax.
pub fn greedy_ratio(record: &GenerationRecord) -> Result<f64, MetricsError> {
    if record.traces.is_empty() {
        return Err(MetricsError::EmptyGeneration);
    }
    let hits = record.traces.iter().filter(|t| t.is_greedy).count();
    Ok(hits as f64 / record.traces.len() as f64)
}

/// Mean generated length in tokens; eos counts when it was emitted.
pub fn gen_length(records: &[GenerationRecord]) -> f64 {
    debug_assert!(!records.is_empty());
    if records.is_empty() {
        return 0.0;
    }
    records
        .iter()
        .map(|r| r.generated.len() as f64)
        .sum::<f64>()
        / records.len() as f64
}
