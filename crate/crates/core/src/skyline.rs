use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::trace::QuestionInstance;

/// Joint tower state for one question: heights plus each tower's latest
/// calibrated HasAnswer probability.
///
/// A summary is present exactly when the tower has at least one layer, and
/// `cost_spent` always equals the sum of heights. Both hold by construction:
/// the only mutation is [`Skyline::expand`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skyline {
    heights: Vec<usize>,
    summaries: Vec<Option<f64>>,
    cost_spent: usize,
}

impl Skyline {
    pub fn new(n: usize) -> Self {
        Skyline {
            heights: vec![0; n],
            summaries: vec![None; n],
            cost_spent: 0,
        }
    }

    /// Builds the state reached by expanding tower `i` to `heights[i]`.
    pub fn with_heights(q: &QuestionInstance, calib: &CalibrationTable, heights: &[usize]) -> Self {
        assert_eq!(heights.len(), q.n(), "one height per tower");
        let mut s = Skyline::new(q.n());
        for (i, &h) in heights.iter().enumerate() {
            for _ in 0..h {
                s.expand(i, q, calib);
            }
        }
        s
    }

    pub fn n(&self) -> usize {
        self.heights.len()
    }

    pub fn heights(&self) -> &[usize] {
        &self.heights
    }

    pub fn height(&self, i: usize) -> usize {
        self.heights[i]
    }

    pub fn summaries(&self) -> &[Option<f64>] {
        &self.summaries
    }

    /// Calibrated HasAnswer probability at tower `i`'s top layer.
    pub fn summary(&self, i: usize) -> Option<f64> {
        self.summaries[i]
    }

    pub fn cost_spent(&self) -> usize {
        self.cost_spent
    }

    pub fn is_empty_tower(&self, i: usize) -> bool {
        self.heights[i] == 0
    }

    /// Towers below `n_layers`, in index order.
    pub fn expandable(&self, n_layers: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.heights[i] < n_layers).collect()
    }

    /// Runs one more layer on tower `i` and returns its new calibrated
    /// HasAnswer probability.
    ///
    /// Panics if the tower is already at full height.
    pub fn expand(&mut self, i: usize, q: &QuestionInstance, calib: &CalibrationTable) -> f64 {
        let passage = &q.passages[i];
        let h = self.heights[i];
        assert!(h < passage.n_layers(), "tower {i} is already at full height");
        let p = calib.probability(h, passage.logits[h]);
        self.heights[i] = h + 1;
        self.summaries[i] = Some(p);
        self.cost_spent += 1;
        p
    }

    pub fn invariants_hold(&self) -> bool {
        self.heights.len() == self.summaries.len()
            && self
                .heights
                .iter()
                .zip(&self.summaries)
                .all(|(&h, s)| (h > 0) == s.is_some())
            && self.cost_spent == self.heights.iter().sum::<usize>()
    }
}
