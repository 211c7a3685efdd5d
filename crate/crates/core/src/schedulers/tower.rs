use crate::calibration::CalibrationTable;
use crate::skyline::Skyline;
use crate::trace::QuestionInstance;

use super::{OutputMode, ScheduleLog};

/// Local early exit: each tower is built bottom-up on its own and stops at
/// the first layer where `1 - HasAnswer >= tau`, or at full height.
///
/// `tau = 1` never exits early since calibrated probabilities stay above
/// zero.
pub fn run_tower_builder(
    q: &QuestionInstance,
    tau: f64,
    m: usize,
    mode: OutputMode,
    calib: &CalibrationTable,
) -> ScheduleLog {
    let full = q.n_layers();
    let exit_below = 1.0 - tau;
    let mut skyline = Skyline::new(q.n());
    let mut actions = Vec::new();
    for i in 0..q.n() {
        while skyline.height(i) < full {
            let p = skyline.expand(i, q, calib);
            actions.push(i);
            if p <= exit_below {
                break;
            }
        }
    }
    ScheduleLog::finish(q, skyline, actions, m, mode, calib)
}
