//! Seeded synthetic trace corpora.
//!
//! Each passage at rank `r` contains an answer with probability
//! `a * exp(-b * (r - 1)) + c`. Its logit after layer `l` (1-based) is
//! `+drift * l` for answer passages and `-drift * l` otherwise, plus
//! independent Gaussian noise, so confidence sharpens with depth. Once an
//! answer passage's raw HasAnswer probability exceeds one half, each layer's
//! extracted answer is correct with probability `extraction_reliability`.
//!
//! Question `k` draws from its own ChaCha stream keyed by `(seed, k)`, so
//! output does not depend on how generation is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::sigmoid;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::trace::{canonical_real, PassageTrace, QuestionInstance};

/// `(a, b, c)` in `P(has_answer | rank) = a * exp(-b * (rank - 1)) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerDecay {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AnswerDecay {
    pub fn rate(&self, rank: usize) -> f64 {
        self.a * (-self.b * (rank as f64 - 1.0)).exp() + self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_passages: usize,
    pub n_layers: usize,
    pub seed: u64,
    pub answer_rate_by_rank: AnswerDecay,
    pub drift: f64,
    pub noise_sd: f64,
    pub extraction_reliability: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_passages: 30,
            n_layers: 24,
            seed: 0,
            answer_rate_by_rank: AnswerDecay {
                a: 0.2,
                b: 0.15,
                c: 0.02,
            },
            drift: 0.25,
            noise_sd: 1.0,
            extraction_reliability: 0.7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let AnswerDecay { a, b, c } = self.answer_rate_by_rank;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_passages == 0 || self.n_layers == 0 {
            return fail("n_passages and n_layers must be at least 1".into());
        }
        if !(a.is_finite() && b.is_finite() && c.is_finite()) || a < 0.0 || b < 0.0 || c < 0.0 {
            return fail(format!("answer decay ({a}, {b}, {c}) must be finite and non-negative"));
        }
        if a + c > 1.0 {
            return fail(format!("answer decay a + c = {} exceeds 1", a + c));
        }
        if !(self.drift.is_finite() && self.drift > 0.0) {
            return fail(format!("drift must be positive, got {}", self.drift));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return fail(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if !(0.0..=1.0).contains(&self.extraction_reliability) {
            return fail(format!(
                "extraction_reliability must lie in [0, 1], got {}",
                self.extraction_reliability
            ));
        }
        Ok(())
    }
}

/// Random stream owned by question `index`.
pub fn question_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate(config: &GeneratorConfig, count: usize) -> Result<Vec<QuestionInstance>> {
    generate_with(config, count, Exec::default())
}

pub fn generate_with(config: &GeneratorConfig, count: usize, exec: Exec) -> Result<Vec<QuestionInstance>> {
    config.validate()?;
    Ok(par::map_range(exec, count, |k| generate_question(config, k)))
}

fn generate_question(config: &GeneratorConfig, index: usize) -> QuestionInstance {
    let mut rng = question_stream(config.seed, index as u64);
    let passages = (1..=config.n_passages)
        .map(|rank| {
            let has_answer = rng.random::<f64>() < config.answer_rate_by_rank.rate(rank);
            let sign = if has_answer { 1.0 } else { -1.0 };
            let mut logits = Vec::with_capacity(config.n_layers);
            let mut answer_correct = Vec::with_capacity(config.n_layers);
            for layer in 1..=config.n_layers {
                let noise: f64 = rng.sample(StandardNormal);
                let logit = canonical_real(sign * config.drift * layer as f64 + config.noise_sd * noise);
                // Always draw, so the stream advances identically for every passage.
                let extracted = rng.random::<f64>() < config.extraction_reliability;
                logits.push(logit);
                answer_correct.push(has_answer && sigmoid(logit) > 0.5 && extracted);
            }
            PassageTrace {
                rank,
                has_answer,
                logits,
                answer_correct,
            }
        })
        .collect();
    QuestionInstance {
        question_id: format!("syn-{}-{index:06}", config.seed),
        passages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_passages: 5,
            n_layers: 4,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small(7), 50).unwrap();
        let b = generate(&small(7), 50).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(8), 50).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let a = generate_with(&small(3), 40, Exec::Sequential).unwrap();
        let b = generate_with(&small(3), 40, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_satisfies_trace_invariants() {
        for q in generate(&small(11), 100).unwrap() {
            q.validate().unwrap();
            assert_eq!(q.n(), 5);
            assert_eq!(q.n_layers(), 4);
        }
    }

    #[test]
    fn steep_decay_puts_answers_only_at_rank_one() {
        let config = GeneratorConfig {
            answer_rate_by_rank: AnswerDecay { a: 1.0, b: 1000.0, c: 0.0 },
            ..small(1)
        };
        for q in generate(&config, 200).unwrap() {
            let answers: Vec<usize> = q.answer_towers().collect();
            assert_eq!(answers, vec![0]);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            GeneratorConfig { answer_rate_by_rank: AnswerDecay { a: 0.8, b: 0.1, c: 0.3 }, ..small(0) },
            GeneratorConfig { answer_rate_by_rank: AnswerDecay { a: 0.5, b: 0.1, c: -0.1 }, ..small(0) },
            GeneratorConfig { drift: 0.0, ..small(0) },
            GeneratorConfig { noise_sd: -1.0, ..small(0) },
            GeneratorConfig { extraction_reliability: 1.5, ..small(0) },
            GeneratorConfig { n_layers: 0, ..small(0) },
        ];
        for config in bad {
            assert!(generate(&config, 1).is_err(), "{config:?}");
        }
    }

    #[test]
    fn rank_one_answer_rate_within_three_standard_errors() {
        let config = GeneratorConfig::default();
        let count = 10_000;
        let corpus = generate(&config, count).unwrap();
        let p = config.answer_rate_by_rank.rate(1);
        let hits = corpus.iter().filter(|q| q.passages[0].has_answer).count();
        let observed = hits as f64 / count as f64;
        let se = (p * (1.0 - p) / count as f64).sqrt();
        assert!((observed - p).abs() < 3.0 * se, "observed {observed}, expected {p} ± {}", 3.0 * se);
    }

    #[test]
    fn logits_are_stored_canonical() {
        for q in generate(&small(5), 20).unwrap() {
            for p in &q.passages {
                assert!(p.logits.iter().all(|&x| canonical_real(x) == x));
            }
        }
    }
}
