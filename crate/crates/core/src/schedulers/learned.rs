use rand::RngCore;

use crate::calibration::CalibrationTable;
use crate::policy::{argmax_over, masked_softmax, sample_index, PolicyParams};
use crate::skyline::Skyline;
use crate::trace::QuestionInstance;

use super::{Budget, OutputMode, ScheduleLog};

pub enum ActionMode<'a> {
    /// Highest priority, ties to the lowest index.
    Greedy,
    Sample(&'a mut dyn RngCore),
}

/// Scheduler-phase trajectory of one policy run.
pub(crate) struct Rollout {
    pub skyline: Skyline,
    pub actions: Vec<usize>,
    /// Row `t` (length `n`) is the policy distribution at step `t`. Only
    /// filled when requested.
    pub dists: Vec<f64>,
}

/// Runs the policy for at most `budget` actions. Priorities are cached and
/// only the expanded tower is rescored after each step.
pub(crate) fn rollout(
    q: &QuestionInstance,
    budget: Budget,
    calib: &CalibrationTable,
    params: &PolicyParams,
    mut mode: ActionMode<'_>,
    record_dists: bool,
) -> Rollout {
    let (n, full) = (q.n(), q.n_layers());
    let mut skyline = Skyline::new(n);
    let mut priorities: Vec<f64> = (0..n).map(|i| params.priority(&skyline, i)).collect();
    let mut mask: Vec<usize> = (0..n).collect();
    let mut dist = vec![0.0; n];
    let steps = budget.0.min(n * full);
    let mut actions = Vec::with_capacity(steps);
    let mut dists = Vec::with_capacity(if record_dists { steps * n } else { 0 });
    while actions.len() < steps && !mask.is_empty() {
        let needs_dist = record_dists || matches!(mode, ActionMode::Sample(_));
        if needs_dist {
            masked_softmax(&priorities, &mask, &mut dist);
        }
        let action = match &mut mode {
            ActionMode::Greedy => argmax_over(&priorities, mask.iter().copied()).expect("mask is non-empty"),
            ActionMode::Sample(rng) => sample_index(&dist, *rng),
        };
        if record_dists {
            dists.extend_from_slice(&dist);
        }
        skyline.expand(action, q, calib);
        actions.push(action);
        if skyline.height(action) == full {
            mask.retain(|&i| i != action);
        } else {
            priorities[action] = params.priority(&skyline, action);
        }
    }
    Rollout {
        skyline,
        actions,
        dists,
    }
}

/// Global scheduling driven by a learned softmax policy over tower
/// priorities.
pub fn run_policy_skyline(
    q: &QuestionInstance,
    budget: Budget,
    m: usize,
    mode: OutputMode,
    calib: &CalibrationTable,
    params: &PolicyParams,
    action_mode: ActionMode<'_>,
) -> ScheduleLog {
    let r = rollout(q, budget, calib, params, action_mode, false);
    ScheduleLog::finish(q, r.skyline, r.actions, m, mode, calib)
}
