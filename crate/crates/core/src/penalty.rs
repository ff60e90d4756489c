//! Composable logit penalties: a repetition penalty over a recent-context
//! window and a linear length penalty on the eos logit, plus the pipeline
//! that chains them into a penalized distribution.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{softmax, DistError, LogitVector, ProbVector, TokenId};

#[derive(Debug, Error, PartialEq)]
pub enum PenaltyError {
    #[error("repetition penalty alpha must be > 1 (got {0})")]
    AlphaOutOfRange(f64),
    #[error("target length must be >= 1")]
    ZeroTargetLength,
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// How far back repetition counting looks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Bounded(usize),
    Unbounded,
}

impl Window {
    /// Number of trailing context tokens covered by the window.
    pub fn effective(&self, context_len: usize) -> usize {
        match self {
            Window::Bounded(w) => (*w).min(context_len),
            Window::Unbounded => context_len,
        }
    }
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Window::Bounded(w) => write!(f, "{w}"),
            Window::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// Settings for penalty decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Repetition penalty; must exceed 1.
    pub alpha: f64,
    /// Recent-context window for repetition counting; 0 disables it.
    pub window: Window,
    /// Target generation length for the eos scaling.
    pub target_length: usize,
    pub length_penalty_enabled: bool,
    /// When true, recently seen tokens always get their logit divided by
    /// alpha, even when it is negative (which then *raises* the logit).
    /// The default sign-aware rule divides positive logits and multiplies
    /// negative ones, so a penalized logit never goes up. Exposed for
    /// ablation comparisons.
    #[serde(default)]
    pub always_divide: bool,
}

impl PenaltyConfig {
    /// Reference settings: alpha 1.5, window 100, length penalty on.
    pub fn defaults(target_length: usize) -> Self {
        PenaltyConfig {
            alpha: 1.5,
            window: Window::Bounded(100),
            target_length,
            length_penalty_enabled: true,
            always_divide: false,
        }
    }

    /// Full-context repetition penalty with no window cap and no length
    /// penalty.
    pub fn near_greedy(alpha: f64, target_length: usize) -> Self {
        PenaltyConfig {
            alpha,
            window: Window::Unbounded,
            target_length,
            length_penalty_enabled: false,
            always_divide: false,
        }
    }

    pub fn validate(&self) -> Result<(), PenaltyError> {
        if !(self.alpha > 1.0) {
            return Err(PenaltyError::AlphaOutOfRange(self.alpha));
        }
        if self.target_length == 0 {
            return Err(PenaltyError::ZeroTargetLength);
        }
        Ok(())
    }
}

/// The set of distinct tokens in the trailing window of `context`.
fn penalty_set(context: &[TokenId], window: Window) -> HashSet<TokenId> {
    let w = window.effective(context.len());
    context[context.len() - w..].iter().copied().collect()
}

pub(crate) fn apply_repetition(
    values: &mut [f64],
    context: &[TokenId],
    alpha: f64,
    window: Window,
    always_divide: bool,
) {
    // Membership, not occurrence count: each token is penalized at most once.
    for token in penalty_set(context, window) {
        if let Some(v) = values.get_mut(token.index()) {
            *v = if always_divide || *v > 0.0 {
                *v / alpha
            } else {
                *v * alpha
            };
        }
    }
}

/// Scales the logits of tokens seen in the trailing `window` of `context`.
///
/// Sign-aware by default: positive logits are divided by `alpha`, negative
/// ones multiplied, so the penalized logit always moves down. With
/// `always_divide` every member is divided regardless of sign. Tokens outside
/// the window keep their logit bit-for-bit.
pub fn repetition_penalty(
    logits: &LogitVector,
    context: &[TokenId],
    alpha: f64,
    window: Window,
    always_divide: bool,
) -> Result<LogitVector, PenaltyError> {
    if !(alpha > 1.0) {
        return Err(PenaltyError::AlphaOutOfRange(alpha));
    }
    let mut values = logits.to_vec();
    apply_repetition(&mut values, context, alpha, window, always_divide);
    Ok(LogitVector::new(values)?)
}

/// Linear eos scaling: `alpha * eos_logit * (target_length - current_length)`.
///
/// Once `current_length` reaches the target the factor is 0 and the result is
/// exactly 0.0; past the target the factor is clamped to 0 and a diagnostic
/// is logged (that regime is otherwise undefined).
pub fn length_penalty(
    eos_logit: f64,
    alpha: f64,
    target_length: usize,
    current_length: usize,
) -> f64 {
    if current_length > target_length {
        log::warn!(
            "generated length {current_length} exceeds target {target_length}; \
             clamping eos length factor to 0"
        );
    }
    let factor = target_length.saturating_sub(current_length) as f64;
    if factor == 0.0 {
        return 0.0;
    }
    alpha * eos_logit * factor
}

/// The full penalized distribution for one decoding step: eos length scaling
/// first, then the windowed repetition penalty, then softmax.
pub fn apply_penalties(
    logits: &LogitVector,
    context: &[TokenId],
    eos: TokenId,
    cfg: &PenaltyConfig,
    generated_len: usize,
) -> Result<ProbVector, PenaltyError> {
    cfg.validate()?;
    let mut values = logits.to_vec();
    if cfg.length_penalty_enabled {
        if let Some(v) = values.get_mut(eos.index()) {
            if *v > 0.0 {
                log::warn!(
                    "eos logit {v} is positive; the length penalty amplifies it \
                     instead of suppressing eos"
                );
            }
            *v = length_penalty(*v, cfg.alpha, cfg.target_length, generated_len);
        }
    }
    apply_repetition(&mut values, context, cfg.alpha, cfg.window, cfg.always_divide);
    let penalized = LogitVector::new(values)?;
    Ok(softmax(&penalized)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TokenSequence;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_window_changes_nothing() {
        let l = logits(&[2.0, -1.0, 0.5]);
        let ctx = TokenSequence::from_ids([0, 1, 2]);
        let out = repetition_penalty(&l, &ctx, 2.0, Window::Bounded(0), false).unwrap();
        assert_eq!(out.values(), l.values());
    }

    #[test]
    fn sign_aware_divides_positive_logits() {
        let l = logits(&[2.0, 1.0, 0.0]);
        let ctx = TokenSequence::from_ids([0]);
        let out = repetition_penalty(&l, &ctx, 2.0, Window::Unbounded, false).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0, 0.0]);
        let probs = softmax(&out).unwrap();
        assert_abs_diff_eq!(probs.values()[0], 0.42232, epsilon = 1e-5);
        assert_abs_diff_eq!(probs.values()[1], 0.42232, epsilon = 1e-5);
        assert_abs_diff_eq!(probs.values()[2], 0.15536, epsilon = 1e-5);
    }

    #[test]
    fn sign_aware_multiplies_negative_logits() {
        let l = logits(&[-2.0, 1.0]);
        let ctx = TokenSequence::from_ids([0]);
        let out = repetition_penalty(&l, &ctx, 2.0, Window::Unbounded, false).unwrap();
        assert_eq!(out.values(), &[-4.0, 1.0]);
    }

    #[test]
    fn always_divide_raises_negative_logits() {
        let l = logits(&[-2.0, 1.0]);
        let ctx = TokenSequence::from_ids([0]);
        let out = repetition_penalty(&l, &ctx, 2.0, Window::Unbounded, true).unwrap();
        assert_eq!(out.values(), &[-1.0, 1.0]);
    }

    #[test]
    fn penalty_applies_once_per_distinct_token() {
        let l = logits(&[4.0, 1.0]);
        // Token 0 appears three times in the window; divided once, not thrice.
        let ctx = TokenSequence::from_ids([0, 0, 0]);
        let out = repetition_penalty(&l, &ctx, 2.0, Window::Unbounded, false).unwrap();
        assert_eq!(out.values(), &[2.0, 1.0]);
    }

    #[test]
    fn alpha_at_or_below_one_is_rejected() {
        let l = logits(&[0.0]);
        assert!(matches!(
            repetition_penalty(&l, &[], 1.0, Window::Unbounded, false),
            Err(PenaltyError::AlphaOutOfRange(_))
        ));
        let cfg = PenaltyConfig {
            alpha: 0.9,
            ..PenaltyConfig::defaults(10)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn length_penalty_hand_values() {
        assert_eq!(length_penalty(123.4, 2.0, 16, 16), 0.0);
        assert_abs_diff_eq!(length_penalty(-3.0, 1.5, 128, 28), -450.0, epsilon = 1e-12);
        assert_eq!(length_penalty(0.0, 7.0, 100, 3), 0.0);
    }

    #[test]
    fn length_penalty_clamps_past_target() {
        assert_eq!(length_penalty(-3.0, 1.5, 10, 12), 0.0);
    }

    #[test]
    fn length_penalty_keeps_masked_eos_masked_before_target() {
        assert_eq!(length_penalty(f64::NEG_INFINITY, 1.5, 10, 3), f64::NEG_INFINITY);
    }

    #[test]
    fn identity_composition_is_plain_softmax() {
        let l = logits(&[1.0, -0.5, 2.0]);
        let cfg = PenaltyConfig {
            alpha: 2.0,
            window: Window::Bounded(0),
            target_length: 8,
            length_penalty_enabled: false,
            always_divide: false,
        };
        let ctx = TokenSequence::from_ids([0, 2]);
        let out = apply_penalties(&l, &ctx, TokenId(1), &cfg, 0).unwrap();
        let plain = softmax(&l).unwrap();
        assert_eq!(out.values(), plain.values());
    }

    #[test]
    fn alpha_near_one_converges_to_plain_softmax() {
        let l = logits(&[1.5, -2.0, 0.25, 3.0]);
        let cfg = PenaltyConfig {
            alpha: 1.0 + 1e-7,
            window: Window::Unbounded,
            target_length: 8,
            length_penalty_enabled: false,
            always_divide: false,
        };
        let ctx = TokenSequence::from_ids([0, 1, 3]);
        let out = apply_penalties(&l, &ctx, TokenId(2), &cfg, 0).unwrap();
        let plain = softmax(&l).unwrap();
        for (a, b) in out.values().iter().zip(plain.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pipeline_matches_straight_line_reimplementation() {
        // Independent straight-line route: scale eos, penalize the window
        // set, exponentiate, normalize.
        let l = [1.2, -0.4, 0.9];
        let ctx = [TokenId(0), TokenId(2)];
        let (alpha, target, generated, eos) = (1.7, 6usize, 2usize, TokenId(1));

        let mut manual = l;
        manual[1] = alpha * manual[1] * (target - generated) as f64;
        for idx in [0usize, 2] {
            manual[idx] = if manual[idx] > 0.0 {
                manual[idx] / alpha
            } else {
                manual[idx] * alpha
            };
        }
        let exps: Vec<f64> = manual.iter().map(|v| v.exp()).collect();
        let z: f64 = exps.iter().sum();

        let cfg = PenaltyConfig {
            alpha,
            window: Window::Unbounded,
            target_length: target,
            length_penalty_enabled: true,
            always_divide: false,
        };
        let out = apply_penalties(&logits(&l), &ctx, eos, &cfg, generated).unwrap();
        for (got, want) in out.values().iter().zip(exps.iter().map(|e| e / z)) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn multi_token_window_can_raise_a_penalized_tokens_probability() {
        // Known boundary of the sign-aware rule: when the window also covers
        // the dominant logit, dividing it collapses the normalizer and a
        // weaker penalized token's *normalized* probability can rise, even
        // though its logit went down. Per-token suppression is only
        // guaranteed for singleton windows; in aggregate the window set
        // always loses mass (see the property tests below).
        let l = logits(&[1.0, 5.0]);
        let ctx = TokenSequence::from_ids([0, 1]);
        let plain = softmax(&l).unwrap();
        let pen = softmax(&repetition_penalty(&l, &ctx, 2.0, Window::Unbounded, false).unwrap())
            .unwrap();
        assert!(pen.values()[0] > plain.values()[0]);
        assert!(pen.values()[0] + pen.values()[1] <= plain.values()[0] + plain.values()[1] + 1e-12);
    }

    proptest! {
        #[test]
        fn singleton_penalty_never_raises_probability(
            values in prop::collection::vec(-10.0f64..10.0, 2..24),
            target in 0usize..24,
            alpha in 1.000001f64..3.0,
        ) {
            let target = target % values.len();
            let l = logits(&values);
            let ctx = [TokenId(target as u32)];
            let plain = softmax(&l).unwrap();
            let pen = softmax(
                &repetition_penalty(&l, &ctx, alpha, Window::Unbounded, false).unwrap(),
            )
            .unwrap();
            prop_assert!(pen.values()[target] <= plain.values()[target] + 1e-12);
            if values[target] != 0.0 {
                prop_assert!(pen.values()[target] < plain.values()[target]);
            }
        }

        #[test]
        fn window_set_mass_never_rises_and_outsiders_keep_logits(
            values in prop::collection::vec(-10.0f64..10.0, 2..24),
            ctx_ids in prop::collection::vec(0u32..24, 0..16),
            window in 0usize..20,
            alpha in 1.000001f64..3.0,
        ) {
            let vlen = values.len() as u32;
            let ctx: Vec<TokenId> = ctx_ids.iter().map(|i| TokenId(i % vlen)).collect();
            let l = logits(&values);
            let pen_logits =
                repetition_penalty(&l, &ctx, alpha, Window::Bounded(window), false).unwrap();
            let set = super::penalty_set(&ctx, Window::Bounded(window));
            for (i, (&orig, &new)) in
                values.iter().zip(pen_logits.values()).enumerate()
            {
                if !set.contains(&TokenId(i as u32)) {
                    prop_assert_eq!(orig.to_bits(), new.to_bits());
                }
            }
            let plain = softmax(&l).unwrap();
            let pen = softmax(&pen_logits).unwrap();
            let mass =
                |p: &ProbVector| set.iter().map(|t| p[*t]).sum::<f64>();
            prop_assert!(mass(&pen) <= mass(&plain) + 1e-12);
        }

        #[test]
        fn window_at_least_context_length_equals_unbounded(
            values in prop::collection::vec(-10.0f64..10.0, 2..16),
            ctx_ids in prop::collection::vec(0u32..16, 0..12),
            extra in 0usize..8,
            alpha in 1.000001f64..3.0,
        ) {
            let vlen = values.len() as u32;
            let ctx: Vec<TokenId> = ctx_ids.iter().map(|i| TokenId(i % vlen)).collect();
            let l = logits(&values);
            let bounded = repetition_penalty(
                &l, &ctx, alpha, Window::Bounded(ctx.len() + extra), false,
            )
            .unwrap();
            let unbounded =
                repetition_penalty(&l, &ctx, alpha, Window::Unbounded, false).unwrap();
            prop_assert_eq!(bounded.values(), unbounded.values());
        }

        #[test]
        fn penalized_output_is_valid_distribution(
            values in prop::collection::vec(-10.0f64..10.0, 2..16),
            ctx_ids in prop::collection::vec(0u32..16, 0..12),
            generated in 0usize..12,
            alpha in 1.000001f64..3.0,
        ) {
            let vlen = values.len() as u32;
            let ctx: Vec<TokenId> = ctx_ids.iter().map(|i| TokenId(i % vlen)).collect();
            let cfg = PenaltyConfig {
                alpha,
                window: Window::Bounded(6),
                target_length: 12,
                length_penalty_enabled: true,
                always_divide: false,
            };
            let out = apply_penalties(&logits(&values), &ctx, TokenId(0), &cfg, generated);
            prop_assert!(out.is_ok());
        }
    }
}
