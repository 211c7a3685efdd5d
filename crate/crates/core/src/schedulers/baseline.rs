use crate::calibration::CalibrationTable;
use crate::skyline::Skyline;
use crate::trace::QuestionInstance;

use super::{OutputMode, ScheduleLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaticStrategy {
    /// Every tower to full height.
    Standard,
    /// Every tower to `k` layers, answers read at layer `k`.
    Efficient(usize),
    /// The `k` top-ranked towers to full height, the rest untouched.
    TopK(usize),
}

/// Fixed-shape reading; towers are built one after another in rank order.
pub fn run_static(
    q: &QuestionInstance,
    strategy: StaticStrategy,
    m: usize,
    calib: &CalibrationTable,
) -> ScheduleLog {
    let full = q.n_layers();
    let (towers, height) = match strategy {
        StaticStrategy::Standard => (q.n(), full),
        StaticStrategy::Efficient(k) => (q.n(), k.min(full)),
        StaticStrategy::TopK(k) => (k.min(q.n()), full),
    };
    let mut skyline = Skyline::new(q.n());
    let mut actions = Vec::with_capacity(towers * height);
    for i in 0..towers {
        for _ in 0..height {
            skyline.expand(i, q, calib);
            actions.push(i);
        }
    }
    // Full towers read the same layer either way; efficient towers must be
    // read where they stopped.
    ScheduleLog::finish(q, skyline, actions, m, OutputMode::AnyLayer, calib)
}
