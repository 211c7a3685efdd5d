//! Accuracy/cost curves and scheduling diagnostics.
//!
//! Cost is counted in layers: `avg_layers` is total layers executed
//! (unrolling included) divided by `questions * n`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::policy::PolicyParams;
use crate::schedulers::{self, Budget, InitRule, OutputMode, PolicyAction, ScheduleLog, SchedulerConfig, Strategy};
use crate::trace::QuestionInstance;

/// Per-corpus scheduling behaviour. Metrics with nothing to average over
/// are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Population variance of final tower heights, averaged over questions.
    pub var_h: f64,
    /// Mean 1-based rank of the expanded tower over all actions.
    pub avg_rank: Option<f64>,
    /// Mean number of tower switches per question; global schedulers only.
    pub flips: Option<f64>,
    /// Mean height of answer towers minus mean height of the others,
    /// averaged over questions that have both kinds.
    pub h_plus_minus: Option<f64>,
    /// Fraction of actions that expand an answer tower.
    pub hap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Swept value: tau, budget in layers, k, or passage count.
    pub budget_param: f64,
    pub avg_layers: f64,
    pub accuracy: f64,
    /// Mean scheduler actions per question.
    pub scheduler_layers: f64,
    /// Mean unrolled layers per question.
    pub unroll_layers: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub n_passages: usize,
    pub n_layers: usize,
    pub questions: usize,
    /// Sorted by `avg_layers`.
    pub curve: Vec<CurvePoint>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "budget_param,avg_layers,accuracy,scheduler_layers,unroll_layers";
    pub const CSV_DIAGNOSTICS_HEADER: &'static str = "budget_param,var_h,avg_rank,flips,h_plus_minus,hap";

    /// Curve rows, then a blank line, a `# diagnostics` marker and one
    /// diagnostics row per point. Missing metrics are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for p in &self.curve {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.budget_param, p.avg_layers, p.accuracy, p.scheduler_layers, p.unroll_layers
            )
            .unwrap();
        }
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "\n# diagnostics\n{}", Self::CSV_DIAGNOSTICS_HEADER).unwrap();
        for p in &self.curve {
            let d = &p.diagnostics;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.budget_param,
                d.var_h,
                cell(d.avg_rank),
                cell(d.flips),
                cell(d.h_plus_minus),
                cell(d.hap)
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Checks that every question fits `config` and `calib`, and that the
/// corpus has one shape. Returns `(n, L)`.
fn check_corpus(corpus: &[QuestionInstance], config: &SchedulerConfig<'_>, calib: &CalibrationTable) -> Result<(usize, usize)> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::Config("evaluation corpus is empty".into()))?;
    let (n, l) = (first.n(), first.n_layers());
    for q in corpus {
        if q.n() != n || q.n_layers() != l {
            return Err(Error::invariant(
                &q.question_id,
                "passages",
                format!("shape {}x{} differs from the corpus shape {n}x{l}", q.n(), q.n_layers()),
            ));
        }
    }
    calib.check_layers(l)?;
    config.validate(n, l)?;
    Ok((n, l))
}

/// Schedules every question. Question `k` is passed index `k`, which keys
/// the sampling stream of sampling policies.
pub fn run_corpus(
    corpus: &[QuestionInstance],
    config: &SchedulerConfig<'_>,
    calib: &CalibrationTable,
    exec: Exec,
) -> Result<Vec<ScheduleLog>> {
    check_corpus(corpus, config, calib)?;
    Ok(par::map(exec, corpus, |k, q| schedulers::run(q, config, calib, k)))
}

/// Runs `config` on the corpus and summarises it as one curve point.
pub fn evaluate(
    corpus: &[QuestionInstance],
    config: &SchedulerConfig<'_>,
    calib: &CalibrationTable,
    exec: Exec,
) -> Result<CurvePoint> {
    let logs = run_corpus(corpus, config, calib, exec)?;
    Ok(summarize(&logs, corpus, config))
}

fn budget_param(config: &SchedulerConfig<'_>) -> f64 {
    match config.strategy {
        Strategy::TowerBuilder { tau } => tau,
        Strategy::GreedySkyline { .. } | Strategy::PolicySkyline { .. } => config.budget.0 as f64,
        Strategy::Standard => 0.0,
        Strategy::Efficient { k_layers } => k_layers as f64,
        Strategy::TopK { k_passages } => k_passages as f64,
    }
}

fn summarize(logs: &[ScheduleLog], corpus: &[QuestionInstance], config: &SchedulerConfig<'_>) -> CurvePoint {
    let questions = logs.len() as f64;
    let n = corpus[0].n() as f64;
    let cost: usize = logs.iter().map(ScheduleLog::cost_spent).sum();
    let sched: usize = logs.iter().map(ScheduleLog::scheduler_layers).sum();
    let unroll: usize = logs.iter().map(|l| l.unroll_layers).sum();
    let correct = logs.iter().filter(|l| l.prediction_correct).count();
    CurvePoint {
        budget_param: budget_param(config),
        avg_layers: cost as f64 / (questions * n),
        accuracy: correct as f64 / questions,
        scheduler_layers: sched as f64 / questions,
        unroll_layers: unroll as f64 / questions,
        diagnostics: diagnostics(logs, corpus, config.strategy.is_global()),
    }
}

/// Computes the diagnostics of `logs`, which must align with `corpus`.
pub fn diagnostics(logs: &[ScheduleLog], corpus: &[QuestionInstance], include_flips: bool) -> Diagnostics {
    assert_eq!(logs.len(), corpus.len(), "logs and corpus differ in length");
    let mut var_sum = 0.0;
    let mut rank_sum = 0usize;
    let mut hits = 0usize;
    let mut actions = 0usize;
    let mut flips = 0usize;
    let mut hpm_sum = 0.0;
    let mut hpm_count = 0usize;
    for (log, q) in logs.iter().zip(corpus) {
        let heights = log.final_skyline.heights();
        let count = heights.len() as f64;
        let mean = heights.iter().sum::<usize>() as f64 / count;
        var_sum += heights.iter().map(|&h| (h as f64 - mean).powi(2)).sum::<f64>() / count;

        rank_sum += log.actions.iter().map(|&a| a + 1).sum::<usize>();
        hits += log.actions.iter().filter(|&&a| q.passages[a].has_answer).count();
        actions += log.actions.len();
        flips += log.actions.windows(2).filter(|w| w[0] != w[1]).count();

        let (mut pos, mut n_pos, mut neg, mut n_neg) = (0usize, 0usize, 0usize, 0usize);
        for (p, &h) in q.passages.iter().zip(heights) {
            if p.has_answer {
                pos += h;
                n_pos += 1;
            } else {
                neg += h;
                n_neg += 1;
            }
        }
        if n_pos > 0 && n_neg > 0 {
            hpm_sum += pos as f64 / n_pos as f64 - neg as f64 / n_neg as f64;
            hpm_count += 1;
        }
    }
    let per_question = |x: f64| (!logs.is_empty()).then(|| x / logs.len() as f64);
    Diagnostics {
        var_h: per_question(var_sum).unwrap_or(0.0),
        avg_rank: (actions > 0).then(|| rank_sum as f64 / actions as f64),
        flips: if include_flips { per_question(flips as f64) } else { None },
        h_plus_minus: (hpm_count > 0).then(|| hpm_sum / hpm_count as f64),
        hap: (actions > 0).then(|| hits as f64 / actions as f64),
    }
}

/// A strategy with one free parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family<'a> {
    /// Swept over tau.
    TowerBuilder,
    /// Swept over the budget in layers.
    GreedySkyline { init: InitRule },
    /// Swept over the budget in layers.
    PolicySkyline { params: &'a PolicyParams, action: PolicyAction },
    /// Single point; the swept values are ignored.
    Standard,
    /// Swept over the exit layer.
    Efficient,
    /// Swept over the passage count.
    TopK,
}

impl<'a> Family<'a> {
    pub fn name(&self) -> &'static str {
        self.config(1.0, 1, OutputMode::LastLayer)
            .map(|c| c.strategy.name())
            .unwrap_or("unknown")
    }

    /// Configuration for swept value `value`.
    pub fn config(&self, value: f64, m: usize, mode: OutputMode) -> Result<SchedulerConfig<'a>> {
        let count = || -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 && value <= usize::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!("expected a non-negative integer, got {value}")))
            }
        };
        let (strategy, budget) = match *self {
            Family::TowerBuilder => (Strategy::TowerBuilder { tau: value }, Budget(0)),
            Family::GreedySkyline { init } => (Strategy::GreedySkyline { init }, Budget(count()?)),
            Family::PolicySkyline { params, action } => (Strategy::PolicySkyline { params, action }, Budget(count()?)),
            Family::Standard => (Strategy::Standard, Budget(0)),
            Family::Efficient => (Strategy::Efficient { k_layers: count()? }, Budget(0)),
            Family::TopK => (Strategy::TopK { k_passages: count()? }, Budget(0)),
        };
        Ok(SchedulerConfig::new(strategy, budget).with_m(m).with_output_mode(mode))
    }
}

/// One curve point per value; the curve is sorted by cost.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    corpus: &[QuestionInstance],
    family: Family<'_>,
    values: &[f64],
    m: usize,
    mode: OutputMode,
    calib: &CalibrationTable,
    exec: Exec,
) -> Result<EvalReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one parameter value".into()));
    }
    let values: &[f64] = if family == Family::Standard { &values[..1] } else { values };
    let mut curve = Vec::with_capacity(values.len());
    for &v in values {
        let config = family.config(v, m, mode)?;
        curve.push(evaluate(corpus, &config, calib, exec)?);
    }
    curve.sort_by(|a, b| {
        a.avg_layers
            .total_cmp(&b.avg_layers)
            .then(a.budget_param.total_cmp(&b.budget_param))
    });
    Ok(EvalReport {
        strategy: family.name().to_string(),
        n_passages: corpus[0].n(),
        n_layers: corpus[0].n_layers(),
        questions: corpus.len(),
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Reduction {
    Reached { avg_layers: f64, factor: f64 },
    Unreachable,
}

/// Cheapest cost reaching `target_fraction` of `standard_accuracy`, with
/// linear interpolation between adjacent points of `curve` (sorted by
/// cost). The factor is `n_layers / avg_layers`.
pub fn reduction_factor_from(
    curve: &[CurvePoint],
    standard_accuracy: f64,
    target_fraction: f64,
    n_layers: usize,
) -> Reduction {
    let target = target_fraction * standard_accuracy;
    let Some(i) = curve.iter().position(|p| p.accuracy >= target) else {
        return Reduction::Unreachable;
    };
    let hit = &curve[i];
    let avg_layers = if i == 0 || hit.accuracy == target {
        hit.avg_layers
    } else {
        let prev = &curve[i - 1];
        let t = (target - prev.accuracy) / (hit.accuracy - prev.accuracy);
        prev.avg_layers + t * (hit.avg_layers - prev.avg_layers)
    };
    Reduction::Reached {
        avg_layers,
        factor: n_layers as f64 / avg_layers,
    }
}

/// As [`reduction_factor_from`], taking the standard accuracy from the
/// report's full-cost point (`avg_layers == L`).
pub fn reduction_factor(report: &EvalReport, target_fraction: f64) -> Result<Reduction> {
    let full = report.n_layers as f64;
    let standard = report
        .curve
        .iter()
        .find(|p| p.avg_layers == full)
        .ok_or_else(|| Error::Config("curve has no full-cost (standard baseline) point".into()))?;
    Ok(reduction_factor_from(
        &report.curve,
        standard.accuracy,
        target_fraction,
        report.n_layers,
    ))
}
