//! Decoding strategies: deterministic (greedy, beam, penalty decoding,
//! near-greedy) and stochastic truncation samplers (top-k, top-p, typical,
//! eta, mirostat). Every strategy emits per-step [`StepTrace`]s whose raw
//! statistics come from the model's unmodified distribution.

mod beam;
mod steps;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{LanguageModel, ModelError};
use crate::penalty::{apply_penalties, PenaltyConfig, PenaltyError, Window};
use crate::types::{
    argmax_token, softmax, DistError, GenerationRecord, ProbVector, StepTrace, Termination,
    TokenId, TokenSequence,
};

pub use beam::beam_search;
pub use steps::{
    step_eta, step_greedy, step_mirostat, step_topk, step_topp, step_typical, truncate_eta,
    truncate_mirostat, truncate_top_k, truncate_top_p, truncate_typical, Support,
};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
}

/// Deterministic per-generation random stream.
///
/// Backed by ChaCha8 seeded with a 64-bit value; draws are the top 53 bits of
/// one `u64` per sample, so the stream is identical on every platform.
pub struct DecodeRng {
    inner: ChaCha8Rng,
}

impl DecodeRng {
    /// Identifier of the underlying generator, for manifests and docs.
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        DecodeRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One uniform draw in [0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Default mirostat learning rate when a config does not set one.
pub const MIROSTAT_DEFAULT_LR: f64 = 0.1;

fn default_mirostat_lr() -> f64 {
    MIROSTAT_DEFAULT_LR
}

/// Which decoding rule to run, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam {
        width: usize,
    },
    TopK {
        k: usize,
    },
    TopP {
        p: f64,
    },
    Typical {
        tau: f64,
    },
    Eta {
        epsilon: f64,
    },
    Mirostat {
        tau: f64,
        #[serde(default = "default_mirostat_lr")]
        learning_rate: f64,
        /// Initial surprise ceiling; defaults to 2 * tau.
        #[serde(default)]
        initial_mu: Option<f64>,
    },
    NearGreedy {
        alpha: f64,
    },
    Penalty(PenaltyConfig),
}

impl Strategy {
    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            Strategy::TopK { .. }
                | Strategy::TopP { .. }
                | Strategy::Typical { .. }
                | Strategy::Eta { .. }
                | Strategy::Mirostat { .. }
        )
    }

    /// Stable label used as the method column in reports.
    pub fn label(&self) -> String {
        match self {
            Strategy::Greedy => "greedy".into(),
            Strategy::Beam { width } => format!("beam[w={width}]"),
            Strategy::TopK { k } => format!("top_k[k={k}]"),
            Strategy::TopP { p } => format!("top_p[p={p}]"),
            Strategy::Typical { tau } => format!("typical[tau={tau}]"),
            Strategy::Eta { epsilon } => format!("eta[eps={epsilon}]"),
            Strategy::Mirostat { tau, .. } => format!("mirostat[tau={tau}]"),
            Strategy::NearGreedy { alpha } => format!("near_greedy[alpha={alpha}]"),
            Strategy::Penalty(cfg) => format!(
                "penalty[alpha={};w={};lt={};len={}]",
                cfg.alpha,
                cfg.window,
                cfg.target_length,
                if cfg.length_penalty_enabled { "on" } else { "off" }
            ),
        }
    }
}

/// A strategy plus the generation budget and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    #[serde(flatten)]
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    /// Seed for stochastic strategies; ignored by deterministic ones.
    #[serde(default)]
    pub seed: u64,
}

impl DecoderConfig {
    pub fn new(strategy: Strategy, max_new_tokens: usize, seed: u64) -> Self {
        DecoderConfig {
            strategy,
            max_new_tokens,
            seed,
        }
    }

    /// Penalty decoding with the target length defaulted to the generation
    /// budget.
    pub fn penalty_defaults(max_new_tokens: usize) -> Self {
        DecoderConfig::new(
            Strategy::Penalty(PenaltyConfig::defaults(max_new_tokens)),
            max_new_tokens,
            0,
        )
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |msg: String| Err(DecodeError::InvalidConfig(msg));
        match &self.strategy {
            Strategy::Greedy => Ok(()),
            Strategy::Beam { width } => {
                if *width < 1 {
                    return bad(format!("beam width must be >= 1 (got {width})"));
                }
                Ok(())
            }
            Strategy::TopK { k } => {
                if *k < 1 {
                    return bad(format!("top-k k must be >= 1 (got {k})"));
                }
                Ok(())
            }
            Strategy::TopP { p } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    return bad(format!("top-p p must be in (0, 1] (got {p})"));
                }
                Ok(())
            }
            Strategy::Typical { tau } => {
                if !(*tau > 0.0 && *tau <= 1.0) {
                    return bad(format!("typical tau must be in (0, 1] (got {tau})"));
                }
                Ok(())
            }
            Strategy::Eta { epsilon } => {
                if !(*epsilon > 0.0) {
                    return bad(format!("eta epsilon must be > 0 (got {epsilon})"));
                }
                Ok(())
            }
            Strategy::Mirostat {
                tau,
                learning_rate,
                ..
            } => {
                if !(*tau > 0.0) {
                    return bad(format!("mirostat tau must be > 0 (got {tau})"));
                }
                if !(*learning_rate > 0.0) {
                    return bad(format!(
                        "mirostat learning rate must be > 0 (got {learning_rate})"
                    ));
                }
                Ok(())
            }
            Strategy::NearGreedy { alpha } => {
                if !(*alpha > 1.0) {
                    return bad(format!("near-greedy alpha must be > 1 (got {alpha})"));
                }
                Ok(())
            }
            Strategy::Penalty(cfg) => {
                cfg.validate()?;
                Ok(())
            }
        }
    }
}

/// Runs one generation under `cfg`, recording a [`StepTrace`] per produced
/// token. `mass_ks` selects which top-k masses the traces carry for the
/// nucleus-level metrics. Stops at eos or after `max_new_tokens`.
pub fn generate(
    model: &dyn LanguageModel,
    prefix: &[TokenId],
    cfg: &DecoderConfig,
    mass_ks: &[usize],
) -> Result<GenerationRecord, DecodeError> {
    cfg.validate()?;
    model.info().check_tokens(prefix)?;
    match &cfg.strategy {
        Strategy::Beam { width } => {
            beam_search(model, prefix, *width, cfg.max_new_tokens, mass_ks)
        }
        Strategy::Penalty(pcfg) => penalty_decode(model, prefix, pcfg, cfg.max_new_tokens, mass_ks),
        Strategy::NearGreedy { alpha } => {
            let pcfg = PenaltyConfig::near_greedy(*alpha, cfg.max_new_tokens.max(1));
            penalty_decode(model, prefix, &pcfg, cfg.max_new_tokens, mass_ks)
        }
        _ => stepwise(model, prefix, cfg, mass_ks),
    }
}

fn stepwise(
    model: &dyn LanguageModel,
    prefix: &[TokenId],
    cfg: &DecoderConfig,
    mass_ks: &[usize],
) -> Result<GenerationRecord, DecodeError> {
    let eos = model.info().eos_id;
    let mut rng = DecodeRng::new(cfg.seed);
    let mut context: Vec<TokenId> = prefix.to_vec();
    let mut generated = TokenSequence::new();
    let mut traces = Vec::new();
    let mut termination = Termination::MaxLength;
    let mut mu = match &cfg.strategy {
        Strategy::Mirostat {
            tau, initial_mu, ..
        } => initial_mu.unwrap_or(2.0 * tau),
        _ => 0.0,
    };

    for _ in 0..cfg.max_new_tokens {
        let logits = model.next_logits(&context)?;
        let raw = softmax(&logits)?;

        let (chosen, final_prob) = match &cfg.strategy {
            Strategy::Greedy => {
                let t = step_greedy(&raw);
                (t, raw[t])
            }
            Strategy::TopK { k } => {
                let support = truncate_top_k(&raw, *k);
                pick(&support, &mut rng)
            }
            Strategy::TopP { p } => {
                let support = truncate_top_p(&raw, *p);
                pick(&support, &mut rng)
            }
            Strategy::Typical { tau } => {
                let support = truncate_typical(&raw, *tau);
                pick(&support, &mut rng)
            }
            Strategy::Eta { epsilon } => {
                let support = truncate_eta(&raw, *epsilon);
                pick(&support, &mut rng)
            }
            Strategy::Mirostat {
                tau, learning_rate, ..
            } => {
                let support = truncate_mirostat(&raw, mu);
                let (t, p) = pick(&support, &mut rng);
                let surprise = -raw[t].log2();
                mu -= learning_rate * (surprise - tau);
                (t, p)
            }
            // Handled by generate().
            Strategy::Beam { .. } | Strategy::Penalty(_) | Strategy::NearGreedy { .. } => {
                unreachable!("non-stepwise strategy in stepwise loop")
            }
        };

        traces.push(StepTrace::record(&raw, chosen, final_prob, mass_ks));
        generated.push(chosen);
        context.push(chosen);
        if chosen == eos {
            termination = Termination::Eos;
            break;
        }
    }

    Ok(GenerationRecord {
        prefix: prefix.to_vec().into(),
        generated,
        traces,
        termination,
    })
}

fn pick(support: &Support, rng: &mut DecodeRng) -> (TokenId, f64) {
    let token = support.sample(rng.next_uniform());
    (token, support.prob_of(token).expect("sampled from support"))
}

/// Deterministic penalty decoding: per step, eos length scaling, then the
/// windowed repetition penalty over prefix plus generated-so-far, then
/// softmax and argmax.
pub fn penalty_decode(
    model: &dyn LanguageModel,
    prefix: &[TokenId],
    cfg: &PenaltyConfig,
    max_new_tokens: usize,
    mass_ks: &[usize],
) -> Result<GenerationRecord, DecodeError> {
    cfg.validate()?;
    model.info().check_tokens(prefix)?;
    let eos = model.info().eos_id;
    let mut context: Vec<TokenId> = prefix.to_vec();
    let mut generated = TokenSequence::new();
    let mut traces = Vec::new();
    let mut termination = Termination::MaxLength;

    for _ in 0..max_new_tokens {
        let logits = model.next_logits(&context)?;
        let raw = softmax(&logits)?;
        let penalized: ProbVector = apply_penalties(&logits, &context, eos, cfg, generated.len())?;
        let chosen = argmax_token(&penalized);
        traces.push(StepTrace::record(&raw, chosen, penalized[chosen], mass_ks));
        generated.push(chosen);
        context.push(chosen);
        if chosen == eos {
            termination = Termination::Eos;
            break;
        }
    }

    Ok(GenerationRecord {
        prefix: prefix.to_vec().into(),
        generated,
        traces,
        termination,
    })
}
