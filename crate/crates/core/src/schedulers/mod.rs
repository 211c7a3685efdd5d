//! Skyline-building strategies.
//!
//! Every strategy spends layers on towers, then hands the final skyline to
//! [`output::output_phase`], which picks the towers to read answers from.
//! One action is one layer on one tower.
//!
//! - [`tower`]: each tower in isolation until its no-answer probability
//!   reaches a threshold.
//! - [`greedy`]: always extend the tower with the highest calibrated
//!   HasAnswer probability (priority queue).
//! - [`learned`]: extend towers according to a [`PolicyParams`] softmax.
//! - [`baseline`]: static standard / efficient / top-k reading.

pub mod baseline;
pub mod greedy;
pub mod learned;
pub mod output;
pub mod tower;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::skyline::Skyline;
use crate::train::{step_reward, DEFAULT_STEP_COST};
use crate::trace::QuestionInstance;

pub use baseline::{run_static, StaticStrategy};
pub use greedy::run_greedy_skyline;
pub use learned::run_policy_skyline;
pub use output::{output_phase, OutputOutcome};
pub use tower::run_tower_builder;

/// Total layer executions allowed across all towers of one question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Budget(pub usize);

impl Budget {
    /// Budget that averages `layers_per_passage` over `n` passages.
    pub fn per_passage(layers_per_passage: usize, n: usize) -> Self {
        Budget(layers_per_passage * n)
    }

    pub fn total_layers(self) -> usize {
        self.0
    }

    pub fn average(self, n: usize) -> f64 {
        self.0 as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Unroll the selected towers to full height and read the last layer.
    LastLayer,
    /// Read each selected tower at its current height.
    AnyLayer,
}

/// Priority of an empty tower under the greedy scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Above every probability, in rank order: all towers get a first layer
    /// before any gets a second, top-ranked first.
    RankOrder,
    /// 0.5 for every empty tower.
    Constant,
}

impl InitRule {
    pub const CONSTANT_PRIORITY: f64 = 0.5;

    /// Priority of empty tower `index` out of `n`.
    pub fn priority(self, index: usize, n: usize) -> f64 {
        match self {
            InitRule::RankOrder => 1.0 + (n - 1 - index) as f64 / n as f64,
            InitRule::Constant => Self::CONSTANT_PRIORITY,
        }
    }
}

/// Action selection for the learned scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyAction {
    Greedy,
    /// Sample from the policy; question `k` uses stream `k` of `seed`.
    Sample { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy<'a> {
    TowerBuilder { tau: f64 },
    GreedySkyline { init: InitRule },
    PolicySkyline { params: &'a PolicyParams, action: PolicyAction },
    Standard,
    Efficient { k_layers: usize },
    TopK { k_passages: usize },
}

impl Strategy<'_> {
    /// Whether the strategy allocates a shared budget across towers.
    pub fn is_global(&self) -> bool {
        matches!(self, Strategy::GreedySkyline { .. } | Strategy::PolicySkyline { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::TowerBuilder { .. } => "tower_builder",
            Strategy::GreedySkyline { .. } => "greedy_skyline",
            Strategy::PolicySkyline { .. } => "policy_skyline",
            Strategy::Standard => "standard",
            Strategy::Efficient { .. } => "efficient",
            Strategy::TopK { .. } => "top_k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig<'a> {
    pub strategy: Strategy<'a>,
    /// Only read by the global strategies.
    pub budget: Budget,
    pub m: usize,
    pub output_mode: OutputMode,
}

impl<'a> SchedulerConfig<'a> {
    pub fn new(strategy: Strategy<'a>, budget: Budget) -> Self {
        SchedulerConfig {
            strategy,
            budget,
            m: 1,
            output_mode: OutputMode::LastLayer,
        }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_output_mode(mut self, mode: OutputMode) -> Self {
        self.output_mode = mode;
        self
    }

    /// Checks the configuration against questions with `n` passages of
    /// `n_layers` layers.
    pub fn validate(&self, n: usize, n_layers: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 {
            return fail("m must be at least 1".into());
        }
        match self.strategy {
            Strategy::TowerBuilder { tau } if !(tau > 0.0 && tau <= 1.0) => {
                fail(format!("tau must lie in (0, 1], got {tau}"))
            }
            Strategy::Efficient { k_layers } if k_layers == 0 || k_layers > n_layers => {
                fail(format!("efficient k must lie in [1, {n_layers}], got {k_layers}"))
            }
            Strategy::TopK { k_passages } if k_passages == 0 || k_passages > n => {
                fail(format!("top-k k must lie in [1, {n}], got {k_passages}"))
            }
            Strategy::GreedySkyline { .. } | Strategy::PolicySkyline { .. }
                if self.budget.0 > n * n_layers =>
            {
                fail(format!(
                    "budget {} exceeds n * L = {}",
                    self.budget.0,
                    n * n_layers
                ))
            }
            Strategy::PolicySkyline { params, .. } => params.check_fits(n, n_layers),
            _ => Ok(()),
        }
    }
}

/// Result of scheduling one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleLog {
    pub question_id: String,
    /// Towers expanded by the scheduler, in order (unrolling excluded).
    pub actions: Vec<usize>,
    /// Per-action reward `1[tower has answer] - c` with the default step cost.
    pub rewards: Vec<f64>,
    /// State after the output phase, unrolling included.
    pub final_skyline: Skyline,
    pub selected_towers: Vec<usize>,
    /// Selected tower whose answer was returned, if any.
    pub reading_tower: Option<usize>,
    pub prediction_correct: bool,
    /// Layers added by last-layer unrolling.
    pub unroll_layers: usize,
}

impl ScheduleLog {
    /// Runs the output phase on `skyline` and packages the log.
    pub(crate) fn finish(
        q: &QuestionInstance,
        mut skyline: Skyline,
        actions: Vec<usize>,
        m: usize,
        mode: OutputMode,
        calib: &CalibrationTable,
    ) -> Self {
        let outcome = output_phase(&mut skyline, q, m, mode, calib);
        let rewards = actions
            .iter()
            .map(|&a| step_reward(a, q, DEFAULT_STEP_COST))
            .collect();
        ScheduleLog {
            question_id: q.question_id.clone(),
            actions,
            rewards,
            final_skyline: skyline,
            selected_towers: outcome.selected,
            reading_tower: outcome.reading_tower,
            prediction_correct: outcome.prediction_correct,
            unroll_layers: outcome.extra_cost,
        }
    }

    pub fn scheduler_layers(&self) -> usize {
        self.actions.len()
    }

    pub fn cost_spent(&self) -> usize {
        self.final_skyline.cost_spent()
    }

    /// Recomputes rewards with step cost `c`.
    pub fn assign_rewards(&mut self, q: &QuestionInstance, c: f64) {
        self.rewards = self.actions.iter().map(|&a| step_reward(a, q, c)).collect();
    }
}

/// Runs `config` on question `q`. `question_index` keys the random stream
/// of sampling policies.
pub fn run(
    q: &QuestionInstance,
    config: &SchedulerConfig<'_>,
    calib: &CalibrationTable,
    question_index: usize,
) -> ScheduleLog {
    let (m, mode) = (config.m, config.output_mode);
    match config.strategy {
        Strategy::TowerBuilder { tau } => run_tower_builder(q, tau, m, mode, calib),
        Strategy::GreedySkyline { init } => run_greedy_skyline(q, config.budget, m, mode, calib, init),
        Strategy::PolicySkyline { params, action } => match action {
            PolicyAction::Greedy => {
                run_policy_skyline(q, config.budget, m, mode, calib, params, learned::ActionMode::Greedy)
            }
            PolicyAction::Sample { seed } => {
                let mut rng = crate::synth::question_stream(seed, question_index as u64);
                run_policy_skyline(
                    q,
                    config.budget,
                    m,
                    mode,
                    calib,
                    params,
                    learned::ActionMode::Sample(&mut rng),
                )
            }
        },
        Strategy::Standard => run_static(q, StaticStrategy::Standard, m, calib),
        Strategy::Efficient { k_layers } => run_static(q, StaticStrategy::Efficient(k_layers), m, calib),
        Strategy::TopK { k_passages } => run_static(q, StaticStrategy::TopK(k_passages), m, calib),
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_order_band_sits_above_probabilities() {
        let n = 30;
        let ps: Vec<f64> = (0..n).map(|i| InitRule::RankOrder.priority(i, n)).collect();
        assert!(ps.iter().all(|&p| p >= 1.0 && p < 2.0));
        assert!(ps.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(InitRule::Constant.priority(7, n), 0.5);
    }

    #[test]
    fn config_validation() {
        let ok = SchedulerConfig::new(Strategy::TowerBuilder { tau: 1.0 }, Budget(0));
        assert!(ok.validate(3, 4).is_ok());
        let bad = [
            SchedulerConfig::new(Strategy::TowerBuilder { tau: 0.0 }, Budget(0)),
            SchedulerConfig::new(Strategy::Efficient { k_layers: 5 }, Budget(0)),
            SchedulerConfig::new(Strategy::TopK { k_passages: 4 }, Budget(0)),
            SchedulerConfig::new(Strategy::GreedySkyline { init: InitRule::Constant }, Budget(13)),
            SchedulerConfig::new(Strategy::Standard, Budget(0)).with_m(0),
        ];
        for c in bad {
            assert!(c.validate(3, 4).is_err(), "{c:?}");
        }
    }
}
