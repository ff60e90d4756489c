//! Single-step truncation rules and the seeded sampling they share.
//!
//! Every rule reduces a raw distribution to a renormalized [`Support`];
//! sampling is one inverse-CDF lookup over the support in ascending token-id
//! order, so a single uniform draw fully determines the token.

use crate::types::{argmax_token, ProbVector, TokenId};

use super::DecodeRng;

/// A renormalized subset of the vocabulary, entries ascending by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    entries: Vec<(TokenId, f64)>,
}

impl Support {
    /// Builds a support from `(token, raw probability)` members.
    fn from_members(mut members: Vec<(TokenId, f64)>) -> Self {
        debug_assert!(!members.is_empty());
        members.sort_by_key(|(t, _)| *t);
        let total: f64 = members.iter().map(|(_, p)| p).sum();
        for (_, p) in &mut members {
            *p /= total;
        }
        Support { entries: members }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.iter().map(|(t, _)| *t)
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.entries.binary_search_by_key(&token, |(t, _)| *t).is_ok()
    }

    /// Renormalized probability of `token`, if it is in the support.
    pub fn prob_of(&self, token: TokenId) -> Option<f64> {
        self.entries
            .binary_search_by_key(&token, |(t, _)| *t)
            .ok()
            .map(|i| self.entries[i].1)
    }

    /// Inverse-CDF pick for a uniform draw `u` in [0, 1).
    pub fn sample(&self, u: f64) -> TokenId {
        let mut cum = 0.0;
        for (token, p) in &self.entries {
            cum += p;
            if u < cum {
                return *token;
            }
        }
        self.entries.last().expect("support is never empty").0
    }
}

/// Tokens ordered by descending probability, ties toward the lower id.
fn by_descending_prob(probs: &ProbVector) -> Vec<(TokenId, f64)> {
    let mut order: Vec<(TokenId, f64)> = probs
        .values()
        .iter()
        .enumerate()
        .map(|(i, &p)| (TokenId(i as u32), p))
        .collect();
    order.sort_by(|(ia, pa), (ib, pb)| pb.partial_cmp(pa).unwrap().then(ia.cmp(ib)));
    order
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
fn entropy(probs: &ProbVector) -> f64 {
    probs
        .values()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Keep the k most probable tokens.
pub fn truncate_top_k(probs: &ProbVector, k: usize) -> Support {
    let order = by_descending_prob(probs);
    let k = k.clamp(1, order.len());
    Support::from_members(order[..k].to_vec())
}

/// Keep the smallest probability-sorted prefix with cumulative mass >= p.
pub fn truncate_top_p(probs: &ProbVector, p: f64) -> Support {
    let order = by_descending_prob(probs);
    let mut members = Vec::new();
    let mut cum = 0.0;
    for entry in order {
        cum += entry.1;
        members.push(entry);
        if cum >= p {
            break;
        }
    }
    Support::from_members(members)
}

/// Keep the tokens whose surprise is closest to the distribution's entropy:
/// rank by |-ln p - H| ascending (ties by higher probability, then lower id)
/// and take the smallest prefix with cumulative mass >= tau.
pub fn truncate_typical(probs: &ProbVector, tau: f64) -> Support {
    let h = entropy(probs);
    let mut scored: Vec<(f64, TokenId, f64)> = probs
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| ((-p.ln() - h).abs(), TokenId(i as u32), p))
        .collect();
    scored.sort_by(|(sa, ia, pa), (sb, ib, pb)| {
        sa.partial_cmp(sb)
            .unwrap()
            .then(pb.partial_cmp(pa).unwrap())
            .then(ia.cmp(ib))
    });
    let mut members = Vec::new();
    let mut cum = 0.0;
    for (_, token, p) in scored {
        cum += p;
        members.push((token, p));
        if cum >= tau {
            break;
        }
    }
    Support::from_members(members)
}

/// Keep tokens with probability above eta = min(epsilon, sqrt(epsilon) *
/// exp(-H)); if that empties the support, fall back to the argmax alone.
pub fn truncate_eta(probs: &ProbVector, epsilon: f64) -> Support {
    let eta = epsilon.min(epsilon.sqrt() * (-entropy(probs)).exp());
    let members: Vec<(TokenId, f64)> = probs
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > eta)
        .map(|(i, &p)| (TokenId(i as u32), p))
        .collect();
    if members.is_empty() {
        let top = argmax_token(probs);
        return Support::from_members(vec![(top, probs[top])]);
    }
    Support::from_members(members)
}

/// Keep tokens whose surprise -log2(p) does not exceed mu; if none qualify,
/// fall back to the argmax alone.
pub fn truncate_mirostat(probs: &ProbVector, mu: f64) -> Support {
    let members: Vec<(TokenId, f64)> = probs
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0 && -p.log2() <= mu)
        .map(|(i, &p)| (TokenId(i as u32), p))
        .collect();
    if members.is_empty() {
        let top = argmax_token(probs);
        return Support::from_members(vec![(top, probs[top])]);
    }
    Support::from_members(members)
}

/// Argmax of the raw distribution.
pub fn step_greedy(probs: &ProbVector) -> TokenId {
    argmax_token(probs)
}

pub fn step_topk(probs: &ProbVector, k: usize, rng: &mut DecodeRng) -> TokenId {
    truncate_top_k(probs, k).sample(rng.next_uniform())
}

pub fn step_topp(probs: &ProbVector, p: f64, rng: &mut DecodeRng) -> TokenId {
    truncate_top_p(probs, p).sample(rng.next_uniform())
}

pub fn step_typical(probs: &ProbVector, tau: f64, rng: &mut DecodeRng) -> TokenId {
    truncate_typical(probs, tau).sample(rng.next_uniform())
}

pub fn step_eta(probs: &ProbVector, epsilon: f64, rng: &mut DecodeRng) -> TokenId {
    truncate_eta(probs, epsilon).sample(rng.next_uniform())
}

/// One adaptive-truncation step: sample from the tokens under the surprise
/// ceiling `mu`, then move `mu` against the observed surprise error.
/// Returns the token and the updated mu.
pub fn step_mirostat(
    probs: &ProbVector,
    mu: f64,
    tau: f64,
    learning_rate: f64,
    rng: &mut DecodeRng,
) -> (TokenId, f64) {
    let support = truncate_mirostat(probs, mu);
    let token = support.sample(rng.next_uniform());
    let surprise = -probs[token].log2();
    let error = surprise - tau;
    (token, mu - learning_rate * error)
}
