use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::calibration::CalibrationTable;
use crate::skyline::Skyline;
use crate::trace::QuestionInstance;

use super::{Budget, InitRule, OutputMode, ScheduleLog};

/// Heap entry: higher priority first, then lower index.
#[derive(Debug, Clone, Copy)]
struct Entry {
    priority: f64,
    index: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Global greedy scheduling: repeatedly extend the tower whose calibrated
/// HasAnswer probability at its top layer is highest.
///
/// Each tower has exactly one queue entry, re-pushed with its new
/// probability after every expansion until the tower is full.
pub fn run_greedy_skyline(
    q: &QuestionInstance,
    budget: Budget,
    m: usize,
    mode: OutputMode,
    calib: &CalibrationTable,
    init: InitRule,
) -> ScheduleLog {
    let (n, full) = (q.n(), q.n_layers());
    let mut skyline = Skyline::new(n);
    let mut queue: BinaryHeap<Entry> = (0..n)
        .map(|index| Entry {
            priority: init.priority(index, n),
            index,
        })
        .collect();
    let mut actions = Vec::with_capacity(budget.0.min(n * full));
    while actions.len() < budget.0 {
        let Some(Entry { index, .. }) = queue.pop() else {
            break;
        };
        let p = skyline.expand(index, q, calib);
        actions.push(index);
        if skyline.height(index) < full {
            queue.push(Entry { priority: p, index });
        }
    }
    ScheduleLog::finish(q, skyline, actions, m, mode, calib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedulers::fixtures::{logit, question};

    #[test]
    fn expands_most_probable_tower() {
        let q = question(&[
            (false, &[logit(0.2), logit(0.2)], &[false; 2]),
            (true, &[logit(0.7), logit(0.7)], &[false, true]),
        ]);
        let calib = CalibrationTable::identity(2);
        let log = run_greedy_skyline(&q, Budget(3), 1, OutputMode::LastLayer, &calib, InitRule::RankOrder);
        // Both empty towers first (rank order), then the 0.7 tower.
        assert_eq!(log.actions, vec![0, 1, 1]);
    }

    #[test]
    fn zero_budget_does_nothing() {
        let q = question(&[(true, &[5.0, 5.0], &[true, true]), (false, &[0.0, 0.0], &[false; 2])]);
        let calib = CalibrationTable::identity(2);
        let log = run_greedy_skyline(&q, Budget(0), 1, OutputMode::LastLayer, &calib, InitRule::Constant);
        assert!(log.actions.is_empty());
        assert_eq!(log.selected_towers, vec![0]);
        assert!(!log.prediction_correct);
        assert_eq!(log.cost_spent(), 0);
    }

    #[test]
    fn constant_init_competes_with_built_towers() {
        let q = question(&[
            (false, &[logit(0.3), logit(0.3)], &[false; 2]),
            (true, &[logit(0.6), logit(0.8)], &[false, true]),
            (false, &[logit(0.4), logit(0.4)], &[false; 2]),
        ]);
        let calib = CalibrationTable::identity(2);
        let log = run_greedy_skyline(&q, Budget(4), 1, OutputMode::AnyLayer, &calib, InitRule::Constant);
        // 0 (0.3 < 0.5) -> 1 (0.6) -> 1 (0.8, now full) -> 2 (empty 0.5 beats 0.3)
        assert_eq!(log.actions, vec![0, 1, 1, 2]);
        assert!(log.prediction_correct);
    }

    #[test]
    fn stops_when_all_towers_full() {
        let q = question(&[(false, &[0.0], &[false]), (false, &[0.0], &[false])]);
        let calib = CalibrationTable::identity(1);
        let log = run_greedy_skyline(&q, Budget(10), 1, OutputMode::LastLayer, &calib, InitRule::Constant);
        assert_eq!(log.actions.len(), 2);
    }
}
