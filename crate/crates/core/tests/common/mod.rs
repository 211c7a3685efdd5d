#![allow(dead_code)]

use proptest::prelude::*;

use skyline_core::calibration::CalibrationTable;
use skyline_core::schedulers::InitRule;
use skyline_core::trace::{canonical_real, PassageTrace, QuestionInstance};

/// A valid question with `n` passages of `l` layers.
pub fn question(n: std::ops::RangeInclusive<usize>, l: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = QuestionInstance> {
    (n, l).prop_flat_map(|(n, l)| {
        prop::collection::vec(
            (
                any::<bool>(),
                prop::collection::vec(-6.0f64..6.0, l),
                prop::collection::vec(any::<bool>(), l),
            ),
            n,
        )
        .prop_map(|passages| {
            let passages = passages
                .into_iter()
                .enumerate()
                .map(|(i, (has, logits, correct))| PassageTrace {
                    rank: i + 1,
                    has_answer: has,
                    logits: logits.into_iter().map(canonical_real).collect(),
                    answer_correct: correct.into_iter().map(|c| c && has).collect(),
                })
                .collect();
            QuestionInstance::new("prop", passages).unwrap()
        })
    })
}

/// Positive per-layer temperatures.
pub fn calibration(l: usize) -> impl Strategy<Value = CalibrationTable> {
    prop::collection::vec(0.3f64..3.0, l).prop_map(|t| CalibrationTable::new(t).unwrap())
}

pub fn question_and_calibration(
    n: std::ops::RangeInclusive<usize>,
    l: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = (QuestionInstance, CalibrationTable)> {
    question(n, l).prop_flat_map(|q| {
        let l = q.n_layers();
        (Just(q), calibration(l))
    })
}

fn prob(q: &QuestionInstance, calib: &CalibrationTable, tower: usize, height: usize) -> f64 {
    let z = q.passages[tower].logits[height - 1] / calib.temperatures()[height - 1];
    let p = 1.0 / (1.0 + (-z).exp());
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Step-by-step greedy simulation: every step scans all towers and picks the
/// largest priority, lowest index on ties.
pub fn brute_force_greedy(q: &QuestionInstance, calib: &CalibrationTable, budget: usize, init: InitRule) -> Vec<usize> {
    let (n, l) = (q.n(), q.n_layers());
    let mut heights = vec![0usize; n];
    let mut actions = Vec::new();
    while actions.len() < budget {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if heights[i] == l {
                continue;
            }
            let priority = if heights[i] == 0 {
                match init {
                    InitRule::RankOrder => 1.0 + (n - 1 - i) as f64 / n as f64,
                    InitRule::Constant => 0.5,
                }
            } else {
                prob(q, calib, i, heights[i])
            };
            if best.is_none_or(|(_, b)| priority > b) {
                best = Some((i, priority));
            }
        }
        let Some((i, _)) = best else { break };
        heights[i] += 1;
        actions.push(i);
    }
    actions
}

/// Naive diagnostics: `(var_h, avg_rank, flips, h_plus_minus, hap)` with
/// `None` where nothing is averaged.
pub fn naive_diagnostics(
    heights: &[Vec<usize>],
    actions: &[Vec<usize>],
    corpus: &[QuestionInstance],
) -> (f64, Option<f64>, f64, Option<f64>, Option<f64>) {
    let questions = corpus.len() as f64;
    let mut var = 0.0;
    let mut gaps = Vec::new();
    let mut ranks = Vec::new();
    let mut hits = Vec::new();
    let mut flips = 0.0;
    for ((h, a), q) in heights.iter().zip(actions).zip(corpus) {
        let mean = h.iter().map(|&x| x as f64).sum::<f64>() / h.len() as f64;
        var += h.iter().map(|&x| (x as f64 - mean) * (x as f64 - mean)).sum::<f64>() / h.len() as f64;
        let pos: Vec<f64> = (0..h.len()).filter(|&i| q.passages[i].has_answer).map(|i| h[i] as f64).collect();
        let neg: Vec<f64> = (0..h.len()).filter(|&i| !q.passages[i].has_answer).map(|i| h[i] as f64).collect();
        if !pos.is_empty() && !neg.is_empty() {
            gaps.push(pos.iter().sum::<f64>() / pos.len() as f64 - neg.iter().sum::<f64>() / neg.len() as f64);
        }
        for t in 0..a.len() {
            ranks.push((a[t] + 1) as f64);
            hits.push(if q.passages[a[t]].has_answer { 1.0 } else { 0.0 });
            if t > 0 && a[t] != a[t - 1] {
                flips += 1.0;
            }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    (var / questions, mean(&ranks), flips / questions, mean(&gaps), mean(&hits))
}
