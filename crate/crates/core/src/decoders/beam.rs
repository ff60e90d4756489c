//! Beam search over summed log raw probabilities, without length
//! normalization. Beams that reach eos freeze and keep competing on total
//! log probability.

use crate::models::LanguageModel;
use crate::types::{
    log_softmax, softmax, GenerationRecord, StepTrace, Termination, TokenId, TokenSequence,
};

use super::DecodeError;

#[derive(Debug, Clone)]
struct Beam {
    tokens: Vec<TokenId>,
    score: f64,
    done: bool,
}

/// Standard beam search. The winning beam is the highest-scoring one after
/// all beams have frozen or the budget is spent; traces are recorded along
/// the winner's path by replaying it against the model.
pub fn beam_search(
    model: &dyn LanguageModel,
    prefix: &[TokenId],
    width: usize,
    max_new_tokens: usize,
    mass_ks: &[usize],
) -> Result<GenerationRecord, DecodeError> {
    let eos = model.info().eos_id;
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        score: 0.0,
        done: false,
    }];

    for _ in 0..max_new_tokens {
        if beams.iter().all(|b| b.done) {
            break;
        }
        // Candidates: (score, source beam, extension token or None for a
        // frozen beam carried over unchanged).
        let mut candidates: Vec<(f64, usize, Option<TokenId>)> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            if beam.done {
                candidates.push((beam.score, bi, None));
                continue;
            }
            let mut context = prefix.to_vec();
            context.extend_from_slice(&beam.tokens);
            let logprobs = log_softmax(&model.next_logits(&context)?)?;
            let mut expansions: Vec<(f64, TokenId)> = logprobs
                .iter()
                .enumerate()
                .filter(|(_, lp)| lp.is_finite())
                .map(|(i, &lp)| (beam.score + lp, TokenId(i as u32)))
                .collect();
            expansions.sort_by(|(sa, ta), (sb, tb)| {
                sb.partial_cmp(sa).unwrap().then(ta.cmp(tb))
            });
            for (score, token) in expansions.into_iter().take(width) {
                candidates.push((score, bi, Some(token)));
            }
        }
        candidates.sort_by(|(sa, ba, ta), (sb, bb, tb)| {
            sb.partial_cmp(sa)
                .unwrap()
                .then(ba.cmp(bb))
                .then(ta.cmp(tb))
        });
        beams = candidates
            .into_iter()
            .take(width)
            .map(|(score, bi, token)| match token {
                None => beams[bi].clone(),
                Some(t) => {
                    let mut tokens = beams[bi].tokens.clone();
                    tokens.push(t);
                    Beam {
                        tokens,
                        score,
                        done: t == eos,
                    }
                }
            })
            .collect();
    }

    // Beams are kept sorted by (score, original order); the winner is first.
    let winner = beams
        .into_iter()
        .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
        .expect("at least one beam");

    let termination = if winner.tokens.last() == Some(&eos) {
        Termination::Eos
    } else {
        Termination::MaxLength
    };

    // Replay the winning path to record raw-distribution traces.
    let mut traces = Vec::with_capacity(winner.tokens.len());
    let mut context = prefix.to_vec();
    for &token in &winner.tokens {
        let raw = softmax(&model.next_logits(&context)?)?;
        traces.push(StepTrace::record(&raw, token, raw[token], mass_ks));
        context.push(token);
    }

    Ok(GenerationRecord {
        prefix: prefix.to_vec().into(),
        generated: TokenSequence::from(winner.tokens),
        traces,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{generate, DecoderConfig, Strategy};
    use crate::models::TableLM;

    fn chain_model() -> TableLM {
        TableLM::new(
            1,
            4,
            3,
            vec![
                (vec![], vec![0.7, 0.2, 0.05, 0.05]),
                (vec![0], vec![0.05, 0.6, 0.3, 0.05]),
                (vec![1], vec![0.1, 0.2, 0.6, 0.1]),
                (vec![2], vec![0.2, 0.5, 0.2, 0.1]),
                (vec![3], vec![0.0, 0.0, 0.0, 1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn width_one_equals_greedy() {
        let m = chain_model();
        let greedy = generate(&m, &[], &DecoderConfig::new(Strategy::Greedy, 6, 0), &[1]).unwrap();
        let beam = beam_search(&m, &[], 1, 6, &[1]).unwrap();
        assert_eq!(beam.generated, greedy.generated);
        assert_eq!(beam.termination, greedy.termination);
    }

    #[test]
    fn all_eos_model_emits_single_eos() {
        let m = TableLM::new(
            1,
            2,
            1,
            vec![(vec![], vec![0.0, 1.0]), (vec![0], vec![0.0, 1.0])],
        )
        .unwrap();
        let rec = beam_search(&m, &[], 3, 8, &[1]).unwrap();
        assert_eq!(rec.generated.as_slice(), &[TokenId(1)]);
        assert_eq!(rec.termination, Termination::Eos);
    }

    #[test]
    fn frozen_beams_compete_by_total_log_probability() {
        // eos right away scores ln(0.58); the path b, eos scores
        // ln(0.41 * 0.9), which is lower, so the frozen one-token beam must
        // win even though longer beams exist.
        let m = TableLM::new(
            1,
            3,
            2,
            vec![
                (vec![], vec![0.01, 0.41, 0.58]),
                (vec![0], vec![0.05, 0.05, 0.9]),
                (vec![1], vec![0.05, 0.05, 0.9]),
            ],
        )
        .unwrap();
        let rec = beam_search(&m, &[], 3, 4, &[1]).unwrap();
        assert_eq!(rec.generated.as_slice(), &[TokenId(2)]);
        assert_eq!(rec.termination, Termination::Eos);
    }

    #[test]
    fn traces_follow_the_winning_path() {
        let m = chain_model();
        let rec = beam_search(&m, &[], 3, 5, &[1, 2]).unwrap();
        assert_eq!(rec.traces.len(), rec.generated.len());
        let mut ctx: Vec<TokenId> = Vec::new();
        for (trace, &token) in rec.traces.iter().zip(rec.generated.as_slice()) {
            let raw = softmax(&m.next_logits(&ctx).unwrap()).unwrap();
            assert_eq!(trace.chosen, token);
            assert_eq!(trace.chosen_prob_raw, raw[token]);
            assert_eq!(trace.is_greedy, trace.chosen == trace.argmax_raw);
            ctx.push(token);
        }
    }
}
