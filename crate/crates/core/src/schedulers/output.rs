use std::cmp::Ordering;

use crate::calibration::CalibrationTable;
use crate::skyline::Skyline;
use crate::trace::QuestionInstance;

use super::OutputMode;

#[derive(Debug, Clone, PartialEq)]
pub struct OutputOutcome {
    pub selected: Vec<usize>,
    pub reading_tower: Option<usize>,
    pub prediction_correct: bool,
    /// Layers spent unrolling selected towers to full height.
    pub extra_cost: usize,
}

/// Selects up to `m` towers and reads the final answer from them.
///
/// Candidates are the non-empty towers ordered by height, then by top-layer
/// probability (both descending), then by index. In last-layer mode each
/// selected tower is unrolled to full height first. The answer comes from
/// the selected tower with the highest probability at its reading layer
/// (ties to the lower index).
///
/// If every tower is empty nothing was computed: the first `m` towers by
/// rank are reported as selected and the prediction counts as wrong.
pub fn output_phase(
    skyline: &mut Skyline,
    q: &QuestionInstance,
    m: usize,
    mode: OutputMode,
    calib: &CalibrationTable,
) -> OutputOutcome {
    let mut candidates: Vec<usize> = (0..skyline.n()).filter(|&i| !skyline.is_empty_tower(i)).collect();
    if candidates.is_empty() {
        return OutputOutcome {
            selected: (0..m.min(skyline.n())).collect(),
            reading_tower: None,
            prediction_correct: false,
            extra_cost: 0,
        };
    }
    candidates.sort_by(|&a, &b| {
        skyline
            .height(b)
            .cmp(&skyline.height(a))
            .then_with(|| {
                let (pa, pb) = (skyline.summary(a).unwrap(), skyline.summary(b).unwrap());
                pb.partial_cmp(&pa).unwrap_or(Ordering::Equal)
            })
            .then_with(|| a.cmp(&b))
    });
    candidates.truncate(m);

    let mut extra_cost = 0;
    if mode == OutputMode::LastLayer {
        let full = q.n_layers();
        for &i in &candidates {
            while skyline.height(i) < full {
                skyline.expand(i, q, calib);
                extra_cost += 1;
            }
        }
    }

    let mut reading = candidates[0];
    for &i in &candidates[1..] {
        let (p, best) = (skyline.summary(i).unwrap(), skyline.summary(reading).unwrap());
        if p > best || (p == best && i < reading) {
            reading = i;
        }
    }
    let layer = skyline.height(reading);
    let prediction_correct = q.passages[reading].answer_correct[layer - 1];
    candidates.sort_unstable();
    OutputOutcome {
        selected: candidates,
        reading_tower: Some(reading),
        prediction_correct,
        extra_cost,
    }
}
