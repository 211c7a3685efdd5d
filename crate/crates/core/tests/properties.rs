mod common;

use proptest::prelude::*;

use common::{brute_force_greedy, naive_diagnostics, question, question_and_calibration};
use skyline_core::calibration::{apply_calibration, binary_nll, calibrate, log_grid, CalibrationTable};
use skyline_core::eval::diagnostics;
use skyline_core::policy::{masked_softmax, InitPriority, PolicyParams, PolicyShape};
use skyline_core::schedulers::{self, learned::ActionMode, run_greedy_skyline, run_policy_skyline};
use skyline_core::synth::question_stream;
use skyline_core::trace::{read_traces, write_traces};
use skyline_core::{Budget, InitRule, OutputMode, PolicyAction, ScheduleLog, SchedulerConfig, Skyline, Strategy};

fn replay_checks(log: &ScheduleLog, q: &skyline_core::QuestionInstance, calib: &CalibrationTable) {
    let mut s = Skyline::new(q.n());
    for &a in &log.actions {
        assert!(s.height(a) < q.n_layers(), "action on a full tower");
        s.expand(a, q, calib);
        assert!(s.invariants_hold());
    }
    assert!(log.final_skyline.invariants_hold());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn traces_round_trip(qs in prop::collection::vec(question(1..=4, 1..=5), 0..4)) {
        let mut buf = Vec::new();
        write_traces(&mut buf, &qs).unwrap();
        let back = read_traces(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &qs);
        for q in &back {
            for (i, p) in q.passages.iter().enumerate() {
                prop_assert_eq!(p.rank, i + 1);
            }
        }
        let mut again = Vec::new();
        write_traces(&mut again, &back).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn softmax_ignores_shifts(
        p in prop::collection::vec(-20.0f64..20.0, 1..10),
        shift in -100.0f64..100.0,
    ) {
        let mask: Vec<usize> = (0..p.len()).collect();
        let shifted: Vec<f64> = p.iter().map(|x| x + shift).collect();
        let mut a = vec![0.0; p.len()];
        let mut b = vec![0.0; p.len()];
        masked_softmax(&p, &mask, &mut a);
        masked_softmax(&shifted, &mask, &mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn schedulers_preserve_skyline_invariant(
        (q, calib) in question_and_calibration(1..=5, 1..=4),
        budget in 0usize..24,
        tau in 0.05f64..=1.0,
        seed in any::<u64>(),
    ) {
        let budget = Budget(budget.min(q.n() * q.n_layers()));
        let params = PolicyParams::random(PolicyShape::new(q.n_layers(), 5), InitPriority::Learnable, seed).unwrap();
        let strategies = [
            Strategy::TowerBuilder { tau },
            Strategy::GreedySkyline { init: InitRule::RankOrder },
            Strategy::GreedySkyline { init: InitRule::Constant },
            Strategy::PolicySkyline { params: &params, action: PolicyAction::Greedy },
            Strategy::PolicySkyline { params: &params, action: PolicyAction::Sample { seed } },
            Strategy::Standard,
            Strategy::Efficient { k_layers: 1 },
            Strategy::TopK { k_passages: 1 },
        ];
        for strategy in strategies {
            for mode in [OutputMode::LastLayer, OutputMode::AnyLayer] {
                let config = SchedulerConfig::new(strategy, budget).with_m(2).with_output_mode(mode);
                let log = schedulers::run(&q, &config, &calib, 0);
                replay_checks(&log, &q, &calib);
                prop_assert_eq!(log.cost_spent(), log.scheduler_layers() + log.unroll_layers);
                if strategy.is_global() {
                    prop_assert!(log.actions.len() <= budget.0);
                }
            }
        }
    }

    #[test]
    fn greedy_matches_brute_force(
        (q, calib) in question_and_calibration(1..=4, 1..=4),
        budget in 0usize..=16,
        rank_order in any::<bool>(),
    ) {
        let budget = budget.min(q.n() * q.n_layers());
        let init = if rank_order { InitRule::RankOrder } else { InitRule::Constant };
        let log = run_greedy_skyline(&q, Budget(budget), 1, OutputMode::LastLayer, &calib, init);
        prop_assert_eq!(log.actions, brute_force_greedy(&q, &calib, budget, init));
    }

    #[test]
    fn greedy_cells_grow_with_budget(
        (q, calib) in question_and_calibration(1..=5, 1..=4),
        budget in 0usize..20,
        rank_order in any::<bool>(),
    ) {
        let budget = budget.min(q.n() * q.n_layers() - 1);
        let init = if rank_order { InitRule::RankOrder } else { InitRule::Constant };
        let cells = |b| {
            let log = run_greedy_skyline(&q, Budget(b), 1, OutputMode::AnyLayer, &calib, init);
            let mut h = vec![0usize; q.n()];
            for a in log.actions {
                h[a] += 1;
            }
            h
        };
        let (small, large) = (cells(budget), cells(budget + 1));
        prop_assert!(small.iter().zip(&large).all(|(a, b)| a <= b));
        prop_assert_eq!(large.iter().sum::<usize>(), budget + 1);
    }

    #[test]
    fn zero_mlp_policy_reduces_to_greedy(
        (q, calib) in question_and_calibration(1..=5, 1..=4),
        budget in 0usize..20,
    ) {
        let budget = Budget(budget.min(q.n() * q.n_layers()));
        let params = PolicyParams::greedy_equivalent(PolicyShape::new(q.n_layers(), 5), 0.5).unwrap();
        let a = run_policy_skyline(&q, budget, 1, OutputMode::LastLayer, &calib, &params, ActionMode::Greedy);
        let g = run_greedy_skyline(&q, budget, 1, OutputMode::LastLayer, &calib, InitRule::Constant);
        prop_assert_eq!(a.actions, g.actions);
    }

    #[test]
    fn full_towers_get_no_mass(
        (q, calib) in question_and_calibration(2..=5, 1..=3),
        seed in any::<u64>(),
        fill in prop::collection::vec(0usize..4, 5),
    ) {
        let l = q.n_layers();
        let heights: Vec<usize> = (0..q.n()).map(|i| fill[i].min(l)).collect();
        let s = Skyline::with_heights(&q, &calib, &heights);
        let mask = s.expandable(l);
        prop_assume!(!mask.is_empty());
        let params = PolicyParams::random(PolicyShape::new(l, 5), InitPriority::Learnable, seed).unwrap();
        let dist = params.policy_distribution(&s, &mask).unwrap();
        for i in 0..q.n() {
            prop_assert_eq!(dist[i] == 0.0, heights[i] == l);
        }
        prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = question_stream(seed, 0);
        let log = run_policy_skyline(&q, Budget(q.n() * l), 1, OutputMode::AnyLayer, &calib, &params, ActionMode::Sample(&mut rng));
        prop_assert_eq!(log.actions.len(), q.n() * l);
    }

    #[test]
    fn temperature_pulls_toward_half_and_keeps_order(
        logits in prop::collection::vec(-30.0f64..30.0, 2..8),
        t1 in 0.2f64..5.0,
        factor in 1.0f64..4.0,
    ) {
        let t2 = t1 * factor;
        let p1: Vec<f64> = logits.iter().map(|&z| apply_calibration(z, t1)).collect();
        let p2: Vec<f64> = logits.iter().map(|&z| apply_calibration(z, t2)).collect();
        for (a, b) in p1.iter().zip(&p2) {
            prop_assert!((b - 0.5).abs() <= (a - 0.5).abs() + 1e-15);
        }
        for i in 0..logits.len() {
            for j in 0..logits.len() {
                if logits[i] < logits[j] {
                    prop_assert!(p1[i] <= p1[j] && p2[i] <= p2[j]);
                }
            }
        }
    }

    #[test]
    fn greedy_action_survives_uniform_rescaling(
        q in question(2..=5, 2..=4),
        t in 0.3f64..3.0,
        alpha in 0.1f64..5.0,
        fill in prop::collection::vec(1usize..4, 5),
    ) {
        let l = q.n_layers();
        let heights: Vec<usize> = (0..q.n()).map(|i| fill[i].min(l - 1)).collect();
        let uniform = CalibrationTable::new(vec![t; l]).unwrap();
        let mut params = PolicyParams::greedy_equivalent(PolicyShape::new(l, 5), 0.0).unwrap();
        params.set_alpha(alpha);
        let greedy_action = |c: &CalibrationTable| {
            let s = Skyline::with_heights(&q, c, &heights);
            let mask = s.expandable(l);
            let pr: Vec<f64> = (0..q.n()).map(|i| params.priority(&s, i)).collect();
            skyline_core::policy::argmax_over(&pr, mask).unwrap()
        };
        prop_assert_eq!(greedy_action(&CalibrationTable::identity(l)), greedy_action(&uniform));
    }

    #[test]
    fn diagnostics_match_naive_recomputation(
        qs in prop::collection::vec(question(1..=4, 1..=4), 1..6),
        budget in 0usize..16,
        global in any::<bool>(),
    ) {
        let l = qs[0].n_layers();
        let n = qs[0].n();
        let qs: Vec<_> = qs.into_iter().filter(|q| q.n_layers() == l && q.n() == n).collect();
        let calib = CalibrationTable::identity(l);
        let strategy = if global {
            Strategy::GreedySkyline { init: InitRule::RankOrder }
        } else {
            Strategy::TowerBuilder { tau: 0.6 }
        };
        let config = SchedulerConfig::new(strategy, Budget(budget.min(n * l))).with_m(2);
        let logs: Vec<_> = qs.iter().enumerate().map(|(k, q)| schedulers::run(q, &config, &calib, k)).collect();
        let d = diagnostics(&logs, &qs, global);
        let heights: Vec<Vec<usize>> = logs.iter().map(|l| l.final_skyline.heights().to_vec()).collect();
        let actions: Vec<Vec<usize>> = logs.iter().map(|l| l.actions.clone()).collect();
        let (var, rank, flips, gap, hap) = naive_diagnostics(&heights, &actions, &qs);
        prop_assert_eq!(d.var_h, var);
        prop_assert_eq!(d.avg_rank, rank);
        prop_assert_eq!(d.flips, global.then_some(flips));
        prop_assert_eq!(d.h_plus_minus, gap);
        prop_assert_eq!(d.hap, hap);
        if let Some(h) = d.hap {
            prop_assert!((0.0..=1.0).contains(&h));
        }
        if let Some(r) = d.avg_rank {
            prop_assert!(r >= 1.0 && r <= n as f64);
        }
        for log in &logs {
            prop_assert!(log.actions.windows(2).filter(|w| w[0] != w[1]).count() <= log.actions.len().saturating_sub(1));
        }
    }

    #[test]
    fn fitted_temperature_never_worsens_nll(qs in prop::collection::vec(question(2..=4, 1..=3), 3..10)) {
        let l = qs[0].n_layers();
        let qs: Vec<_> = qs.into_iter().filter(|q| q.n_layers() == l).collect();
        let grid = log_grid(0.25, 4.0, 5).unwrap();
        prop_assert!(grid.contains(&1.0));
        let table = calibrate(&qs, &grid).unwrap();
        let labels: Vec<bool> = qs.iter().flat_map(|q| q.passages.iter().map(|p| p.has_answer)).collect();
        for layer in 0..l {
            let logits: Vec<f64> = qs.iter().flat_map(|q| q.passages.iter().map(|p| p.logits[layer])).collect();
            let t = table.temperatures()[layer];
            prop_assert!(binary_nll(&logits, &labels, t) <= binary_nll(&logits, &labels, 1.0));
        }
    }
}
