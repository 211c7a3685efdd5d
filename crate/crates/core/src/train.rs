//! REINFORCE training of [`PolicyParams`].
//!
//! One episode is one question scheduled by the policy in sample mode. Step
//! `t` earns `1 - c` if the expanded tower's passage has an answer and `-c`
//! otherwise; `R_t = r_t + gamma * R_{t+1}`. The episode gradient is
//! `sum_t R_t * grad log pi(a_t | S_t)`, summed over the episode, averaged
//! over the batch and applied with plain SGD.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::policy::{PolicyParams, TowerState};
use crate::schedulers::learned::{rollout, ActionMode};
use crate::schedulers::Budget;
use crate::skyline::Skyline;
use crate::synth::question_stream;
use crate::trace::QuestionInstance;

pub const DEFAULT_STEP_COST: f64 = 0.1;

/// Stream id offset for the per-epoch shuffle, kept apart from episode
/// streams.
const SHUFFLE_STREAM: u64 = u64::MAX;

/// `1 - c` if tower `action` has an answer, `-c` otherwise.
pub fn step_reward(action: usize, q: &QuestionInstance, c: f64) -> f64 {
    if q.passages[action].has_answer {
        1.0 - c
    } else {
        -c
    }
}

/// `R_t = r_t + gamma * R_{t+1}`, with `R_T = r_T`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Episode budget in layers.
    pub max_steps: usize,
    pub step_cost: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Decay of a moving-average return baseline; `None` disables it.
    pub baseline_decay: Option<f64>,
    /// Keep every episode's rewards in the history.
    pub keep_episode_rewards: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            epochs: 16,
            max_steps: 240,
            step_cost: DEFAULT_STEP_COST,
            gamma: 0.9,
            seed: 0,
            baseline_decay: None,
            keep_episode_rewards: false,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !self.step_cost.is_finite() {
            return fail(format!("step cost must be finite, got {}", self.step_cost));
        }
        if let Some(beta) = self.baseline_decay {
            if !(0.0..1.0).contains(&beta) {
                return fail(format!("baseline decay must lie in [0, 1), got {beta}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over episodes of the return from the first step.
    pub mean_return: f64,
    /// HAP of the greedy-mode policy on the held-out questions at the
    /// episode budget.
    pub held_out_hap: Option<f64>,
    pub wall_time_ms: u64,
    /// Per-episode rewards in training order, if requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_rewards: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,mean_return,held_out_hap,wall_time_ms";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let hap = r.held_out_hap.map(|h| h.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", r.epoch, r.mean_return, hap, r.wall_time_ms).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One sampled episode and its REINFORCE gradient.
#[derive(Debug, Clone)]
pub struct Episode {
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    /// `sum_t (R_t - baseline) * grad log pi(a_t | S_t)`.
    pub gradient: Vec<f64>,
}

/// Samples one episode with `rng` and computes its gradient.
///
/// A tower's priority only changes when the tower is expanded, so the
/// per-step terms `(R_t - b) * (1[a_t = j] - pi_t(j))` are summed per tower
/// while its state holds and backpropagated once per state.
pub fn run_episode(
    q: &QuestionInstance,
    params: &PolicyParams,
    calib: &CalibrationTable,
    cfg: &TrainConfig,
    baseline: f64,
    rng: &mut dyn rand::RngCore,
) -> Episode {
    let n = q.n();
    let budget = Budget(cfg.max_steps);
    let r = rollout(q, budget, calib, params, ActionMode::Sample(rng), true);
    let rewards: Vec<f64> = r.actions.iter().map(|&a| step_reward(a, q, cfg.step_cost)).collect();
    let returns = discounted_returns(&rewards, cfg.gamma);

    let mut gradient = vec![0.0; params.count_parameters()];
    let mut scratch = Vec::new();
    let mut coef = vec![0.0; n];
    let mut replay = Skyline::new(n);
    for (t, &a) in r.actions.iter().enumerate() {
        let advantage = returns[t] - baseline;
        let dist = &r.dists[t * n..(t + 1) * n];
        for (j, &p) in dist.iter().enumerate() {
            coef[j] -= advantage * p;
        }
        coef[a] += advantage;
        let before = TowerState::of(&replay, a);
        params.accumulate_priority_gradient(before, coef[a], &mut gradient, &mut scratch);
        coef[a] = 0.0;
        replay.expand(a, q, calib);
    }
    for (j, &c) in coef.iter().enumerate() {
        if c != 0.0 {
            params.accumulate_priority_gradient(TowerState::of(&replay, j), c, &mut gradient, &mut scratch);
        }
    }
    Episode {
        actions: r.actions,
        rewards,
        returns,
        gradient,
    }
}

/// Fraction of greedy-mode policy actions that hit an answer tower.
fn greedy_hap(
    questions: &[QuestionInstance],
    params: &PolicyParams,
    calib: &CalibrationTable,
    budget: Budget,
    exec: Exec,
) -> Option<f64> {
    let counts = par::map(exec, questions, |_, q| {
        let r = rollout(q, budget, calib, params, ActionMode::Greedy, false);
        let hits = r.actions.iter().filter(|&&a| q.passages[a].has_answer).count();
        (hits, r.actions.len())
    });
    let (hits, total) = counts.iter().fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Trains `init` on `corpus` for exactly `cfg.epochs` epochs.
///
/// Each epoch visits the corpus in a seeded random order. The episode for
/// corpus item `k` in epoch `e` samples from stream `(e << 32) | k` of
/// `cfg.seed`, so results do not depend on `cfg.exec`.
pub fn train(
    corpus: &[QuestionInstance],
    held_out: &[QuestionInstance],
    init: PolicyParams,
    cfg: &TrainConfig,
    calib: &CalibrationTable,
) -> Result<(PolicyParams, TrainHistory)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    for q in corpus.iter().chain(held_out) {
        init.check_fits(q.n(), q.n_layers())?;
        calib.check_layers(q.n_layers())?;
    }

    let mut params = init;
    let mut history = TrainHistory::default();
    let mut baseline = 0.0;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let budget = Budget(cfg.max_steps);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut shuffle_rng = question_stream(cfg.seed, SHUFFLE_STREAM - epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut return_sum = 0.0;
        let mut kept = cfg.keep_episode_rewards.then(Vec::new);
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let current = &params;
            let b = baseline;
            let episodes = par::map(cfg.exec, batch, |_, &k| {
                let mut rng = question_stream(cfg.seed, ((epoch as u64) << 32) | k as u64);
                run_episode(&corpus[k], current, calib, cfg, b, &mut rng)
            });

            let mut grad = vec![0.0; params.count_parameters()];
            let mut batch_return = 0.0;
            for (e, &k) in episodes.iter().zip(batch) {
                if let Some(coordinate) = e.gradient.iter().position(|g| !g.is_finite()) {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: batch_no + 1,
                        question_id: corpus[k].question_id.clone(),
                        coordinate,
                    });
                }
                for (g, x) in grad.iter_mut().zip(&e.gradient) {
                    *g += x;
                }
                batch_return += e.returns.first().copied().unwrap_or(0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grad {
                *g *= scale;
            }
            params.ascend(&grad, cfg.lr);
            if let Some(beta) = cfg.baseline_decay {
                baseline = beta * baseline + (1.0 - beta) * batch_return * scale;
            }
            return_sum += batch_return;
            if let Some(kept) = kept.as_mut() {
                kept.extend(episodes.into_iter().map(|e| e.rewards));
            }
        }
        let held_out_hap = greedy_hap(held_out, &params, calib, budget, cfg.exec);
        history.epochs.push(EpochRecord {
            epoch,
            mean_return: return_sum / corpus.len() as f64,
            held_out_hap,
            wall_time_ms: start.elapsed().as_millis() as u64,
            episode_rewards: kept,
        });
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{InitPriority, PolicyShape};
    use crate::synth::{generate, GeneratorConfig};

    fn small_corpus(count: usize) -> Vec<QuestionInstance> {
        let cfg = GeneratorConfig {
            n_passages: 4,
            n_layers: 3,
            seed: 2,
            ..GeneratorConfig::default()
        };
        generate(&cfg, count).unwrap()
    }

    #[test]
    fn reward_values() {
        let q = small_corpus(1).remove(0);
        let mut q = q;
        q.passages[0].has_answer = true;
        q.passages[1].has_answer = false;
        q.passages[1].answer_correct.fill(false);
        assert!((step_reward(0, &q, 0.1) - 0.9).abs() < 1e-15);
        assert_eq!(step_reward(1, &q, 0.1), -0.1);
        assert_eq!(step_reward(0, &q, 0.0), 1.0);
        assert_eq!(step_reward(1, &q, 0.0), 0.0);
    }

    #[test]
    fn returns_recurrence() {
        let r = discounted_returns(&[0.9, -0.1], 0.9);
        assert!((r[0] - 0.81).abs() < 1e-15);
        assert_eq!(r[1], -0.1);
        assert_eq!(discounted_returns(&[0.3, -0.2, 1.0], 0.0), vec![0.3, -0.2, 1.0]);
        assert!(discounted_returns(&[], 0.9).is_empty());
    }

    #[test]
    fn segment_gradient_matches_per_step_sum() {
        let corpus = small_corpus(5);
        let calib = CalibrationTable::identity(3);
        let params = PolicyParams::random(PolicyShape::new(3, 4), InitPriority::Learnable, 4).unwrap();
        let cfg = TrainConfig {
            max_steps: 9,
            ..TrainConfig::default()
        };
        for (k, q) in corpus.iter().enumerate() {
            let mut rng = question_stream(1, k as u64);
            let ep = run_episode(q, &params, &calib, &cfg, 0.05, &mut rng);
            let mut expected = vec![0.0; params.count_parameters()];
            let mut s = Skyline::new(q.n());
            for (t, &a) in ep.actions.iter().enumerate() {
                let g = params.log_prob_gradient(&s, a);
                for (e, x) in expected.iter_mut().zip(&g) {
                    *e += (ep.returns[t] - 0.05) * x;
                }
                s.expand(a, q, &calib);
            }
            for (i, (a, b)) in ep.gradient.iter().zip(&expected).enumerate() {
                assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "coordinate {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let corpus = small_corpus(10);
        let calib = CalibrationTable::identity(3);
        let init = PolicyParams::random(PolicyShape::new(3, 4), InitPriority::Learnable, 1).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&corpus, &corpus, init.clone(), &cfg, &calib).unwrap();
        assert_eq!(trained, init);
        assert_eq!(history.epochs.len(), 2);
    }

    #[test]
    fn single_tower_questions_never_move_parameters() {
        let cfg = GeneratorConfig {
            n_passages: 1,
            n_layers: 3,
            ..GeneratorConfig::default()
        };
        let corpus = generate(&cfg, 8).unwrap();
        let calib = CalibrationTable::identity(3);
        let init = PolicyParams::random(PolicyShape::new(3, 1), InitPriority::Learnable, 1).unwrap();
        let tc = TrainConfig {
            lr: 0.5,
            epochs: 2,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let (trained, _) = train(&corpus, &[], init.clone(), &tc, &calib).unwrap();
        assert_eq!(trained, init);
    }

    #[test]
    fn mean_return_matches_logged_rewards() {
        let corpus = small_corpus(12);
        let calib = CalibrationTable::identity(3);
        let init = PolicyParams::random(PolicyShape::new(3, 4), InitPriority::Learnable, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 5,
            lr: 0.1,
            keep_episode_rewards: true,
            ..TrainConfig::default()
        };
        let (_, history) = train(&corpus, &corpus[..3], init, &cfg, &calib).unwrap();
        for rec in &history.epochs {
            let rewards = rec.episode_rewards.as_ref().unwrap();
            assert_eq!(rewards.len(), corpus.len());
            let mut total = 0.0;
            for r in rewards {
                // Independent forward evaluation of R_0.
                total += r.iter().enumerate().map(|(t, x)| 0.9f64.powi(t as i32) * x).sum::<f64>();
            }
            let expected = total / corpus.len() as f64;
            assert!((rec.mean_return - expected).abs() < 1e-9, "{} vs {expected}", rec.mean_return);
            assert!(rec.held_out_hap.is_some());
        }
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let corpus = small_corpus(20);
        let calib = CalibrationTable::identity(3);
        let init = PolicyParams::random(PolicyShape::new(3, 4), InitPriority::Learnable, 3).unwrap();
        let run = |exec| {
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 6,
                lr: 0.05,
                exec,
                ..TrainConfig::default()
            };
            train(&corpus, &corpus, init.clone(), &cfg, &calib).unwrap()
        };
        let (a, ha) = run(Exec::Sequential);
        let (b, hb) = run(Exec::Parallel);
        assert_eq!(a, b);
        assert_ne!(a, init);
        let strip = |h: &TrainHistory| h.epochs.iter().map(|r| (r.mean_return, r.held_out_hap)).collect::<Vec<_>>();
        assert_eq!(strip(&ha), strip(&hb));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let init = PolicyParams::random(PolicyShape::new(3, 4), InitPriority::Learnable, 3).unwrap();
        let calib = CalibrationTable::identity(3);
        assert!(train(&[], &[], init, &TrainConfig::default(), &calib).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                mean_return: 0.5,
                held_out_hap: None,
                wall_time_ms: 3,
                episode_rewards: None,
            }],
        };
        assert_eq!(h.to_csv(), "epoch,mean_return,held_out_hap,wall_time_ms\n1,0.5,,3\n");
    }
}
