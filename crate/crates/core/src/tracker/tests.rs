use std::collections::VecDeque;
use std::sync::Arc;

use super::*;
use crate::error::Error;
use crate::fixtures;
use crate::fluid::{PriorityOrder, DEFAULT_TOL};
use crate::network::{Constants, Network};
use crate::sim::{simulate, verify_trace, Fifo, Job, Policy, SimConfig, SimState, SimView};

fn unit_constants() -> Constants {
    Constants {
        lambda_max: 1.0,
        mu_max: 1.0,
        j_max: 1,
        c_big: 53.0,
        class_count: 1,
    }
}

#[test]
fn strict_delta_arithmetic() {
    let c = unit_constants();
    let d = delta_default(&c, 1, 1.0, usize::MAX);
    let expect = (1.0 / (12.0 * 53f64.powi(4))) * (1.0f64 / 53.0).min(1.0);
    assert!((d.strict_log10 - expect.log10()).abs() < 1e-12);
    assert_eq!(d.bound, DeltaBound::Strict);
    assert!((d.applied - expect).abs() < 1e-12 * expect);
}

#[test]
fn practical_cap_binds_when_strict_is_smaller() {
    let d = delta_default(&unit_constants(), 1, 3.0, 10);
    assert_eq!(d.applied, 0.1);
    assert_eq!(d.bound, DeltaBound::PracticalCap);
    assert!(d.strict() < d.applied);
}

#[test]
fn theta_branches() {
    assert_eq!(paper_theta(3.0), 1.0);
    assert_eq!(paper_theta(7.5), 1.0);
    assert_eq!(paper_theta(1.0), 3.0);
}

fn rs_plan(q: &[f64], mode: PlanMode) -> (Network, AllocationPlan, crate::fluid::FluidSolution) {
    let net = fixtures::rybko_stolyar();
    let w = fixtures::rs_witness(&net).unwrap();
    let (plan, fluid) = build_allocation_plan(&net, &w, q, mode, DEFAULT_PRACTICAL_CAP, None).unwrap();
    (net, plan, fluid)
}

#[test]
fn rs_plan_is_feasible_and_telescopes() {
    let (net, plan, fluid) = rs_plan(&[5.0; 4], PlanMode::Practical);
    assert_eq!(plan.intervals(), (plan.theta / plan.delta.applied - 1e-9).ceil() as usize);
    assert!(plan.end() >= plan.theta0);
    plan.check(&net).unwrap();
    plan.matches(&fluid, 1e-9).unwrap();
    let total = fluid.t_at(plan.end()).unwrap();
    for k in 0..4 {
        let sum: f64 = plan.allocations.iter().map(|a| a[k]).sum();
        assert!((sum - total[k]).abs() < 1e-9, "class {k}: {sum} vs {}", total[k]);
    }
    assert!(plan.target >= 3.0 * plan.n * (1.0 - 1e-9));
    assert!(crate::fluid::certify(&net, &fluid, DEFAULT_TOL).unwrap().is_empty());
}

#[test]
fn corrupted_delta_is_a_mismatch() {
    let (_, mut plan, fluid) = rs_plan(&[5.0; 4], PlanMode::Practical);
    plan.delta.applied *= 1.5;
    assert!(matches!(plan.matches(&fluid, 1e-9), Err(Error::PlanMismatch(_))));
}

#[test]
fn strict_mode_reports_strict_delta_and_override() {
    let (_, plan, _) = rs_plan(&[5.0; 4], PlanMode::Strict);
    let c = 10193f64;
    assert_eq!(plan.theta, paper_theta(plan.gamma.unwrap()));
    assert_eq!(plan.delta.bound, DeltaBound::PracticalCap);
    let m = plan.pieces.unwrap() as f64;
    let expect = -(12f64.log10()) - (m + 3.0) * c.log10() + (plan.gamma.unwrap() / c).log10();
    assert!((plan.delta.strict_log10 - expect).abs() < 1e-9);
    assert!(plan.theta / plan.delta.strict() > DEFAULT_PRACTICAL_CAP as f64);
    assert_eq!(plan.intervals(), DEFAULT_PRACTICAL_CAP);
}

#[test]
fn strict_mode_needs_two_stations() {
    let net = fixtures::overloaded_queue();
    let w = fixtures::overloaded_witness(&net).unwrap();
    let r = build_allocation_plan(&net, &w, &[4.0], PlanMode::Strict, 100, None);
    assert!(matches!(r, Err(Error::NotTwoStations(1))));
    let (plan, _) = build_allocation_plan(&net, &w, &[4.0], PlanMode::Practical, 100, None).unwrap();
    assert_eq!(plan.pieces, None);
}

#[test]
fn plan_needs_unit_mass() {
    let net = fixtures::rybko_stolyar();
    let w = fixtures::rs_witness(&net).unwrap();
    let r = build_allocation_plan(&net, &w, &[0.1, 0.0, 0.0, 0.0], PlanMode::Practical, 100, None);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn single_class_station_behaves_like_fifo() {
    let net = fixtures::overloaded_queue();
    let w = fixtures::overloaded_witness(&net).unwrap();
    let (plan, _) = build_allocation_plan(&net, &w, &[10.0], PlanMode::Practical, 500, None).unwrap();
    let plan = Arc::new(plan);
    let st = SimState::with_queue(vec![10]);
    let cfg = SimConfig::default();
    let a = simulate(&net, &mut tracker_policy(plan.clone()), &st, plan.theta0, 4, cfg).unwrap();
    let b = simulate(&net, &mut Fifo, &st, plan.theta0, 4, cfg).unwrap();
    assert_eq!(a.q, b.q);
    assert_eq!(a.d, b.d);
    for (x, y) in a.t.iter().zip(&b.t) {
        assert!((x[0] - y[0]).abs() < 1e-9);
    }
}

fn hand_plan(alloc: Vec<f64>) -> AllocationPlan {
    AllocationPlan {
        mode: PlanMode::Practical,
        q: vec![1.0; 4],
        n: 4.0,
        gamma: None,
        theta: 0.25,
        theta0: 1.0,
        delta: DeltaChoice {
            strict_log10: f64::NEG_INFINITY,
            practical: 0.25,
            applied: 0.25,
            bound: DeltaBound::PracticalCap,
        },
        pieces: None,
        segment_starts: vec![0.0, 1.0],
        grid: vec![0.0, 1.0],
        allocations: vec![alloc],
        grid_q: vec![vec![1.0; 4]; 2],
        order: vec![vec![0, 3], vec![1, 2]],
        target: 4.0,
    }
}

fn buffers(q: &[usize]) -> Vec<VecDeque<Job>> {
    q.iter()
        .map(|&n| {
            (0..n)
                .map(|i| Job {
                    entry: 0.0,
                    arrived: 0.0,
                    seq: i as u64,
                })
                .collect()
        })
        .collect()
}

#[test]
fn zero_allocation_is_served_only_in_leftover_time() {
    let net = fixtures::rybko_stolyar();
    let mut p = tracker_policy(Arc::new(hand_plan(vec![0.0, 0.5, 0.5, 0.5])));
    let bufs = buffers(&[2, 2, 2, 2]);
    let started = [false; 4];
    let view = |now| SimView {
        now,
        net: &net,
        buffers: &bufs,
        started: &started,
    };
    let d = p.decide(&view(0.0));
    assert_eq!(d.serve, vec![Some(3), Some(1)]);
    assert_eq!(d.wakeup, Some(0.5));
    p.advance(0.0, 0.5, &d.serve);
    let d = p.decide(&view(0.5));
    // station A spent class 3's budget and class 0 has none: leftover, lowest index
    assert_eq!(d.serve[0], Some(0));
    // station B moved on to class 2
    assert_eq!(d.serve[1], Some(2));
    p.advance(0.5, 0.5, &d.serve);
    assert_eq!(p.nominal_usage()[0], vec![0.0, 0.5, 0.5, 0.5]);
}

#[test]
fn budgets_reset_at_grid_times_and_empty_classes_are_skipped() {
    let net = fixtures::rybko_stolyar();
    let mut plan = hand_plan(vec![0.3, 0.3, 0.3, 0.3]);
    plan.grid = vec![0.0, 1.0, 2.0];
    plan.allocations.push(vec![0.3; 4]);
    plan.grid_q.push(vec![1.0; 4]);
    let mut p = tracker_policy(Arc::new(plan));
    let bufs = buffers(&[3, 0, 3, 3]);
    let started = [false; 4];
    let view = |now| SimView {
        now,
        net: &net,
        buffers: &bufs,
        started: &started,
    };
    let d = p.decide(&view(0.0));
    assert_eq!(d.serve, vec![Some(0), Some(2)]);
    p.advance(0.0, 0.3, &d.serve);
    assert_eq!(p.decide(&view(0.3)).serve, vec![Some(3), Some(2)]);
    let d = p.decide(&view(1.0));
    assert_eq!(d.serve, vec![Some(0), Some(2)]);
    assert_eq!(d.wakeup, Some(1.3));
}

#[test]
fn tracker_runs_are_consistent_and_respect_allocations() {
    let (net, plan, _) = rs_plan(&[25.0; 4], PlanMode::Practical);
    let plan = Arc::new(plan);
    let mut p = tracker_policy(plan.clone());
    let tr = simulate(&net, &mut p, &SimState::with_queue(vec![25; 4]), plan.theta0, 1, SimConfig::default()).unwrap();
    let rep = verify_trace(&net, &tr);
    assert!(rep.is_empty(), "{}", rep.summary());
    let slack = 1e-9 * plan.interval_length();
    for (m, used) in p.nominal_usage().iter().enumerate() {
        for k in 0..4 {
            assert!(used[k] <= plan.allocations[m][k] + slack, "interval {m} class {k}");
        }
    }
}

#[test]
fn stable_queue_supervisor_falls_back() {
    let net = fixtures::single_queue();
    let src = PlanSource::PriorityFluid {
        order: PriorityOrder::by_index(&net),
        theta: 3.0,
    };
    let cfg = SupervisorConfig {
        practical_cap: 200,
        ..SupervisorConfig::default()
    };
    let out = supervisor_run(&net, &src, &SimState::with_queue(vec![60]), &cfg, 2000.0, 3).unwrap();
    assert!(!out.log.epochs.is_empty());
    assert!(out.log.epochs.iter().all(|e| !e.success));
    assert!(!out.log.fallback.is_empty());
    let tail = out.trace.final_queue()[0];
    assert!(tail < 60, "final queue {tail}");
    assert_eq!(out.log.induction_check().checked, 0);
    assert!(verify_trace(&net, &out.trace).is_empty());
}

fn record(chain: usize, index: usize, start: f64, end: f64, theta: f64, m0: u64, m1: u64) -> EpochRecord {
    EpochRecord {
        chain,
        index,
        chain_start: 0.0,
        start,
        end,
        theta,
        delta: 0.1,
        intervals: 10,
        pieces: None,
        target: 3.0 * m0 as f64,
        start_mass: m0,
        end_mass: m1,
        trough: m0,
        trough_floor: 0.0,
        trough_floor_max_form: 0.0,
        doubled: m1 >= 2 * m0,
        trough_ok: true,
        success: m1 >= 2 * m0,
        complete: true,
    }
}

#[test]
fn induction_check_is_exact_on_logged_values() {
    // epochs of length theta * mass with exact doubling
    let mut log = EpochLog {
        epochs: vec![
            record(0, 0, 0.0, 100.0, 10.0, 10, 20),
            record(0, 1, 100.0, 300.0, 10.0, 20, 40),
            record(0, 2, 300.0, 700.0, 10.0, 40, 80),
        ],
        fallback: vec![],
        n0: 10,
        growth_factor: 2.0,
        c_big: 1.0,
        truncated: false,
    };
    let r = log.induction_check();
    assert!(r.passed);
    assert_eq!(r.checked, 3);
    // 80 * 10 / 700
    assert_eq!(r.worst_margin, 800.0 / 700.0);
    // an epoch that ran too long for its mass breaks the chain property
    log.epochs[2].end = 900.0;
    assert!(!log.induction_check().passed);
    // failures end the checked prefix
    log.epochs[1].success = false;
    assert_eq!(log.induction_check().checked, 1);
}
