use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::Context;

use skyline_core::calibration::{calibrate_with, log_grid};
use skyline_core::eval::{self, EvalReport, Family};
use skyline_core::synth::{generate, AnswerDecay};
use skyline_core::trace::{load_traces, save_traces};
use skyline_core::{
    CalibrationTable, Exec, InitRule, OutputMode, PolicyAction, PolicyParams, PolicyShape, QuestionInstance,
};

use crate::config::RunConfig;
use crate::split::{self, SPLIT_NAMES};
use crate::{
    CalibrateArgs, EvaluateArgs, Failure, GenTracesArgs, InitRuleName, OutputModeName, SchedulerArgs, SplitArgs,
    StrategyName, SweepArgs, TrainArgs,
};

type Outcome = Result<String, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Rejects output paths that coincide with each other or with inputs.
fn distinct_paths(outputs: &[&Path], inputs: &[&Path]) -> Result<(), Failure> {
    let mut seen = HashSet::new();
    for p in outputs {
        if !seen.insert(p.to_path_buf()) {
            return Err(usage(format!("output path {} is given twice", p.display())));
        }
    }
    for p in inputs {
        if seen.contains(*p) {
            return Err(usage(format!("{} is both an input and an output", p.display())));
        }
    }
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<QuestionInstance>, Failure> {
    Ok(load_traces(path)?)
}

pub fn gen_traces(a: GenTracesArgs) -> Outcome {
    let mut cfg = RunConfig::load(a.config.as_deref())?.generator;
    cfg.seed = a.seed;
    if let Some(n) = a.n_passages {
        cfg.n_passages = n;
    }
    if let Some(l) = a.n_layers {
        cfg.n_layers = l;
    }
    if let Some((a, b, c)) = a.answer_decay {
        cfg.answer_rate_by_rank = AnswerDecay { a, b, c };
    }
    if let Some(x) = a.drift {
        cfg.drift = x;
    }
    if let Some(x) = a.noise_sd {
        cfg.noise_sd = x;
    }
    if let Some(x) = a.extraction_reliability {
        cfg.extraction_reliability = x;
    }
    let corpus = generate(&cfg, a.count)?;
    save_traces(&corpus, &a.out)?;
    Ok(format!(
        "wrote {} questions ({} passages x {} layers, seed {}) to {}",
        corpus.len(),
        cfg.n_passages,
        cfg.n_layers,
        cfg.seed,
        a.out.display()
    ))
}

pub fn split(a: SplitArgs) -> Outcome {
    let ratios: [u64; 4] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| usage(format!("--ratios needs four values, got {}", a.ratios.len())))?;
    if ratios.iter().sum::<u64>() == 0 {
        return Err(usage("--ratios must not all be zero"));
    }
    let corpus = load_corpus(&a.traces)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let outputs: Vec<PathBuf> = SPLIT_NAMES.iter().map(|n| a.out_dir.join(format!("{n}.jsonl"))).collect();
    let output_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    distinct_paths(&output_refs, &[&a.traces])?;
    let parts = split::split(corpus, a.seed, &ratios);
    let mut counts = Vec::new();
    for ((part, path), name) in parts.iter().zip(&outputs).zip(SPLIT_NAMES) {
        save_traces(part, path)?;
        counts.push(format!("{name} {}", part.len()));
    }
    Ok(format!("split into {} under {}", counts.join(", "), a.out_dir.display()))
}

pub fn calibrate(a: CalibrateArgs) -> Outcome {
    distinct_paths(&[&a.out], &[&a.dev])?;
    let grid = log_grid(a.grid_min, a.grid_max, a.grid_points)?;
    let dev = load_corpus(&a.dev)?;
    let table = calibrate_with(&dev, &grid, Exec::default())?;
    table.save(&a.out)?;
    let t = table.temperatures();
    Ok(format!(
        "calibrated {} layers on {} questions (T from {} to {}) -> {}",
        t.len(),
        dev.len(),
        t.iter().copied().fold(f64::INFINITY, f64::min),
        t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        a.out.display()
    ))
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.history.as_deref());
    let mut inputs = vec![a.dev0.as_path(), a.calibration.as_path()];
    inputs.extend(a.dev1.as_deref());
    inputs.extend(a.init.as_deref());
    distinct_paths(&outputs, &inputs)?;

    let mut cfg = RunConfig::load(a.config.as_deref())?.train;
    cfg.seed = a.seed;
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = a.$field { cfg.$field = v; })*};
    }
    set!(lr, batch_size, epochs, max_steps, step_cost, gamma);
    if a.baseline_decay.is_some() {
        cfg.baseline_decay = a.baseline_decay;
    }
    cfg.validate()?;

    let corpus = load_corpus(&a.dev0)?;
    let held_out = match &a.dev1 {
        Some(p) => load_corpus(p)?,
        None => Vec::new(),
    };
    let calib = CalibrationTable::load(&a.calibration)?;
    let first = corpus.first().ok_or_else(|| Failure::Runtime(anyhow::anyhow!("training corpus is empty")))?;
    let n_layers = first.n_layers();
    let n_max = a.n_max.unwrap_or_else(|| corpus.iter().map(QuestionInstance::n).max().unwrap_or(1));
    let init = match &a.init {
        Some(p) => PolicyParams::load(p)?,
        None => {
            let mut shape = PolicyShape::new(n_layers, n_max);
            shape.d = a.embedding_dim;
            PolicyParams::random(shape, a.init_priority, a.seed)?
        }
    };
    let (params, history) = skyline_core::train::train(&corpus, &held_out, init, &cfg, &calib)?;
    params.save(&a.out)?;
    if let Some(h) = &a.history {
        history.save_csv(h)?;
    }
    let last = history.epochs.last();
    Ok(format!(
        "trained {} epochs on {} questions: final mean return {}, held-out HAP {} -> {}",
        cfg.epochs,
        corpus.len(),
        last.map_or("n/a".into(), |r| format!("{:.4}", r.mean_return)),
        last.and_then(|r| r.held_out_hap).map_or("n/a".into(), |h| format!("{h:.4}")),
        a.out.display()
    ))
}

/// Owned inputs that a [`Family`] borrows from.
struct Prepared {
    corpus: Vec<QuestionInstance>,
    calib: CalibrationTable,
    params: Option<PolicyParams>,
}

fn prepare(s: &SchedulerArgs) -> Result<Prepared, Failure> {
    let mut outputs = Vec::new();
    outputs.extend(s.json.as_deref());
    outputs.extend(s.csv.as_deref());
    let mut inputs = vec![s.traces.as_path()];
    inputs.extend(s.calibration.as_deref());
    inputs.extend(s.params.as_deref());
    distinct_paths(&outputs, &inputs)?;

    let corpus = load_corpus(&s.traces)?;
    let first = corpus.first().ok_or_else(|| Failure::Runtime(anyhow::anyhow!("evaluation corpus is empty")))?;
    let calib = match &s.calibration {
        Some(p) => CalibrationTable::load(p)?,
        None => CalibrationTable::identity(first.n_layers()),
    };
    let params = match s.strategy {
        StrategyName::Policy => {
            let p = s.params.as_ref().ok_or_else(|| usage("--strategy policy needs --params"))?;
            Some(PolicyParams::load(p)?)
        }
        StrategyName::Random => Some(PolicyParams::uniform(PolicyShape::new(first.n_layers(), first.n()))?),
        _ => None,
    };
    Ok(Prepared { corpus, calib, params })
}

fn family<'a>(s: &SchedulerArgs, prepared: &'a Prepared) -> Result<Family<'a>, Failure> {
    let sampled = |needed: bool| -> Result<PolicyAction, Failure> {
        if !needed {
            return Ok(PolicyAction::Greedy);
        }
        s.seed
            .map(|seed| PolicyAction::Sample { seed })
            .ok_or_else(|| usage("sampling needs --seed"))
    };
    Ok(match s.strategy {
        StrategyName::TowerBuilder => Family::TowerBuilder,
        StrategyName::Greedy => Family::GreedySkyline {
            init: match s.init_rule {
                InitRuleName::RankOrder => InitRule::RankOrder,
                InitRuleName::Constant => InitRule::Constant,
            },
        },
        StrategyName::Policy => Family::PolicySkyline {
            params: prepared.params.as_ref().expect("prepared"),
            action: sampled(s.sample)?,
        },
        StrategyName::Random => Family::PolicySkyline {
            params: prepared.params.as_ref().expect("prepared"),
            action: sampled(true)?,
        },
        StrategyName::Standard => Family::Standard,
        StrategyName::Efficient => Family::Efficient,
        StrategyName::TopK => Family::TopK,
    })
}

fn run_report(s: &SchedulerArgs, values: &[f64]) -> Outcome {
    let prepared = prepare(s)?;
    let family = family(s, &prepared)?;
    let mode = match s.output_mode {
        OutputModeName::LastLayer => OutputMode::LastLayer,
        OutputModeName::AnyLayer => OutputMode::AnyLayer,
    };
    let mut report = eval::sweep(&prepared.corpus, family, values, s.m, mode, &prepared.calib, Exec::default())?;
    if s.strategy == StrategyName::Random {
        report.strategy = "random".into();
    }
    write_report(&report, s)?;
    Ok(summarize(&report))
}

fn write_report(report: &EvalReport, s: &SchedulerArgs) -> Result<(), Failure> {
    if let Some(p) = &s.json {
        report.save_json(p)?;
    }
    if let Some(p) = &s.csv {
        report.save_csv(p)?;
    }
    Ok(())
}

fn summarize(report: &EvalReport) -> String {
    let points: Vec<String> = report
        .curve
        .iter()
        .map(|p| format!("{:.3} layers -> {:.4}", p.avg_layers, p.accuracy))
        .collect();
    format!("{} on {} questions: {}", report.strategy, report.questions, points.join("; "))
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let s = &a.scheduler;
    let value = match s.strategy {
        StrategyName::TowerBuilder => a.tau.ok_or_else(|| usage("--strategy tower-builder needs --tau"))?,
        StrategyName::Greedy | StrategyName::Policy | StrategyName::Random => {
            a.budget.ok_or_else(|| usage("global strategies need --budget"))? as f64
        }
        StrategyName::Efficient | StrategyName::TopK => a.k.ok_or_else(|| usage("this strategy needs --k"))? as f64,
        StrategyName::Standard => 0.0,
    };
    run_report(s, &[value])
}

pub fn sweep(a: SweepArgs) -> Outcome {
    let s = &a.scheduler;
    let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let values = match s.strategy {
        StrategyName::TowerBuilder => a.taus.clone(),
        StrategyName::Greedy | StrategyName::Policy | StrategyName::Random => as_f64(&a.budgets),
        StrategyName::Efficient | StrategyName::TopK => as_f64(&a.ks),
        StrategyName::Standard => vec![0.0],
    };
    if values.is_empty() {
        return Err(usage("nothing to sweep: pass --budgets, --taus or --ks to match the strategy"));
    }
    run_report(s, &values)
}
