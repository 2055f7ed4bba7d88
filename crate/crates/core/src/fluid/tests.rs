use super::*;
use crate::fixtures;
use crate::dist::DistSpec;
use crate::network::{NetworkSpec, StageSpec, TypeSpec};

fn sq() -> Network {
    fixtures::single_queue()
}

fn zero_sq(horizon: f64) -> FluidSolution {
    FluidSolution {
        breakpoints: vec![0.0, horizon],
        q: vec![vec![0.0], vec![0.0]],
        t: vec![vec![0.0], vec![0.5 * horizon]],
    }
}

/// Drain from 4 at full service, then the zero solution, on `[0, 10]`.
fn drain_sq() -> FluidSolution {
    FluidSolution {
        breakpoints: vec![0.0, 4.0, 10.0],
        q: vec![vec![4.0], vec![0.0], vec![0.0]],
        t: vec![vec![0.0], vec![4.0], vec![7.0]],
    }
}

/// Forward Euler on `q' = lambda - mu * x(q)` with `x = 1` while `q > 0` and
/// `x = lambda / mu` once empty, independent of the event integrator.
fn euler_sq(q0: f64, lambda: f64, mu: f64, until: f64, dt: f64) -> (f64, f64) {
    let (mut q, mut t, mut now) = (q0, 0.0, 0.0);
    while now < until - 1e-12 {
        let x = if q > 0.0 { 1.0 } else { lambda / mu };
        q = (q + (lambda - mu * x) * dt).max(0.0);
        t += x * dt;
        now += dt;
    }
    (q, t)
}

#[test]
fn zero_solution_is_valid() {
    let rep = certify(&sq(), &zero_sq(10.0), DEFAULT_TOL).unwrap();
    assert!(rep.is_empty(), "{}", rep.summary());
}

#[test]
fn drain_matches_fine_grid_integration() {
    let net = sq();
    let sol = drain_sq();
    assert!(certify(&net, &sol, DEFAULT_TOL).unwrap().is_empty());
    for t in [1.0, 2.5, 4.0, 7.0, 10.0] {
        let (q, a) = euler_sq(4.0, 1.0, 2.0, t, 1e-4);
        assert!((sol.q_at(t).unwrap()[0] - q).abs() < 1e-3, "q at {t}");
        assert!((sol.t_at(t).unwrap()[0] - a).abs() < 1e-3, "T at {t}");
    }
}

#[test]
fn slope_above_one_is_infeasible() {
    let mut sol = drain_sq();
    // serve 1.5 per unit time on the drain piece and keep conservation
    sol.t[1][0] = 6.0;
    sol.t[2][0] = 9.0;
    sol.q[1][0] = 4.0 + 4.0 - 2.0 * 6.0;
    let rep = validate_fluid_solution(&sq(), &sol, DEFAULT_TOL).unwrap();
    assert!(rep.has(ViolationKind::StationFeasibility));
}

#[test]
fn conservation_break_detected() {
    let mut sol = drain_sq();
    sol.q[1][0] = 0.5;
    let rep = validate_fluid_solution(&sq(), &sol, DEFAULT_TOL).unwrap();
    assert!(rep.has(ViolationKind::Conservation));
}

#[test]
fn negative_and_decreasing_detected() {
    let mut sol = drain_sq();
    sol.q[2][0] = -1.0;
    sol.t[2][0] = 3.0;
    let rep = validate_fluid_solution(&sq(), &sol, DEFAULT_TOL).unwrap();
    assert!(rep.has(ViolationKind::NegativeQueue));
    assert!(rep.has(ViolationKind::DecreasingAllocation));
}

#[test]
fn dimension_mismatch_is_error() {
    let rs = fixtures::rybko_stolyar();
    assert!(matches!(
        validate_fluid_solution(&rs, &drain_sq(), DEFAULT_TOL),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn non_idling_cases() {
    let net = sq();
    assert!(check_non_idling(&net, &zero_sq(10.0), DEFAULT_TOL).unwrap().is_empty());
    assert!(check_non_idling(&net, &drain_sq(), DEFAULT_TOL).unwrap().is_empty());
    // slope 0.9 on the first segment while 4 units wait
    let idle = FluidSolution {
        breakpoints: vec![0.0, 1.0],
        q: vec![vec![4.0], vec![4.0 + 1.0 - 2.0 * 0.9]],
        t: vec![vec![0.0], vec![0.9]],
    };
    assert!(validate_fluid_solution(&net, &idle, DEFAULT_TOL).unwrap().is_empty());
    let rep = check_non_idling(&net, &idle, DEFAULT_TOL).unwrap();
    assert_eq!(rep.violations.len(), 1);
    assert_eq!(rep.violations[0].index, 0);
}

#[test]
fn scale_identity_and_roundtrip() {
    let sol = drain_sq();
    assert_eq!(scale_solution(&sol, 1.0).unwrap(), sol);
    let back = scale_solution(&scale_solution(&sol, 0.5).unwrap(), 2.0).unwrap();
    for k in 0..sol.breakpoints.len() {
        assert!((back.breakpoints[k] - sol.breakpoints[k]).abs() < 1e-12);
        assert!((back.q[k][0] - sol.q[k][0]).abs() < 1e-12);
        assert!((back.t[k][0] - sol.t[k][0]).abs() < 1e-12);
    }
    assert!(scale_solution(&sol, 0.0).is_err());
    assert!(scale_solution(&sol, -1.0).is_err());
}

#[test]
fn scale_two_gives_drain_from_eight() {
    let net = sq();
    let s = scale_solution(&drain_sq(), 2.0).unwrap();
    assert_eq!(s.q[0][0], 8.0);
    assert_eq!(s.end(), 20.0);
    assert!(certify(&net, &s, DEFAULT_TOL).unwrap().is_empty());
    let direct = simulate_priority_fluid(&net, &PriorityOrder::by_index(&net), &[8.0], 20.0).unwrap();
    for t in [0.0, 3.0, 8.0, 15.0, 20.0] {
        assert!((s.q_at(t).unwrap()[0] - direct.q_at(t).unwrap()[0]).abs() < 1e-12);
    }
}

#[test]
fn linearize_linear_piece_is_fixed_point() {
    let sol = drain_sq();
    let lin = linearize_segment(&sol, 0.0, 4.0).unwrap();
    assert_eq!(lin, sol);
    let lin = linearize_segment(&sol, 1.0, 3.0).unwrap();
    for t in [0.0, 1.0, 2.0, 3.0, 4.0, 8.0] {
        assert!((lin.q_at(t).unwrap()[0] - sol.q_at(t).unwrap()[0]).abs() < 1e-12);
    }
}

#[test]
fn linearize_full_domain_averages() {
    let net = sq();
    let lin = linearize_segment(&drain_sq(), 0.0, 10.0).unwrap();
    assert_eq!(lin.breakpoints, vec![0.0, 10.0]);
    assert_eq!(lin.q[1][0], 0.0);
    assert_eq!(lin.t[1][0], 7.0);
    assert!(validate_fluid_solution(&net, &lin, DEFAULT_TOL).unwrap().is_empty());
}

#[test]
fn linearize_keeps_non_idling_when_station_stays_positive() {
    // two-stage re-entrant line at one station: the station total never hits
    // zero on [0, 2] although class 0 empties at t = 1
    let mut spec = fixtures::single_queue_spec();
    spec.types[0].route = vec![0, 0];
    spec.types[0].stages.push(crate::network::StageSpec {
        mu: 4.0,
        service: crate::dist::DistSpec::exponential(4.0),
    });
    let net = Network::new(spec).unwrap();
    let sol = simulate_priority_fluid(&net, &PriorityOrder::by_index(&net), &[1.0, 3.0], 2.0).unwrap();
    assert!(certify(&net, &sol, DEFAULT_TOL).unwrap().is_empty());
    for k in 0..sol.breakpoints.len() {
        assert!(sol.station_level(&net, 0, k) > 0.0);
    }
    let lin = linearize_segment(&sol, 0.0, 2.0).unwrap();
    assert!(validate_fluid_solution(&net, &lin, DEFAULT_TOL).unwrap().is_empty());
    assert!(check_non_idling(&net, &lin, DEFAULT_TOL).unwrap().is_empty());
}

#[test]
fn linearize_errors() {
    let sol = drain_sq();
    assert!(matches!(linearize_segment(&sol, 2.0, 2.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(linearize_segment(&sol, 2.0, 11.0), Err(Error::OutOfDomain { .. })));
}

#[test]
fn priority_fluid_single_queue() {
    let net = sq();
    let order = PriorityOrder::by_index(&net);
    let sol = simulate_priority_fluid(&net, &order, &[4.0], 10.0).unwrap();
    assert_eq!(sol.breakpoints, vec![0.0, 4.0, 10.0]);
    assert_eq!(sol.q[1][0], 0.0);
    assert!((sol.t[2][0] - 7.0).abs() < 1e-12);
    assert!(certify(&net, &sol, DEFAULT_TOL).unwrap().is_empty());
    let z = simulate_priority_fluid(&net, &order, &[0.0], 10.0).unwrap();
    assert!(z.q.iter().all(|r| r[0] == 0.0));
    assert!((z.t[z.segments()][0] - 5.0).abs() < 1e-12);
}

/// `||Q(50)|| / ||q0||` for the RS exit-priority fluid from `(0, 1, 0, 1)`.
const RS_GROWTH_50: f64 = 13.0;

#[test]
fn priority_fluid_rs_grows() {
    let net = fixtures::rybko_stolyar();
    let order = fixtures::rs_exit_priority(&net);
    let q0 = [0.0, 1.0, 0.0, 1.0];
    let sol = simulate_priority_fluid(&net, &order, &q0, 50.0).unwrap();
    assert!(certify(&net, &sol, DEFAULT_TOL).unwrap().is_empty());
    let growth = total_queue(&sol, 50.0).unwrap() / 2.0;
    assert!(growth > 1.0);
    assert!((growth - RS_GROWTH_50).abs() < 1e-9, "growth {growth}");
}

#[test]
fn event_cap_returns_partial() {
    let net = fixtures::rybko_stolyar();
    let order = fixtures::rs_exit_priority(&net);
    let r = simulate_priority_fluid_capped(&net, &order, &[1.0, 0.0, 0.0, 0.0], 100.0, 3);
    match r {
        Err(Error::EventCap { events, partial }) => {
            assert_eq!(events, 4);
            assert!(partial.breakpoints.len() >= 2);
        }
        other => panic!("expected event cap, got {other:?}"),
    }
}

#[test]
fn queue_readouts() {
    let net = sq();
    assert_eq!(total_queue(&zero_sq(10.0), 3.0).unwrap(), 0.0);
    assert_eq!(total_queue(&drain_sq(), 1.0).unwrap(), 3.0);
    assert!(total_queue(&drain_sq(), 11.0).is_err());
    let rs = fixtures::rybko_stolyar();
    let sol = FluidSolution::constant(vec![0.0, 1.0, 0.0, 1.0], 0.0, 1.0);
    assert_eq!(total_queue(&sol, 0.0).unwrap(), 2.0);
    assert_eq!(station_queue(&rs, &sol, 0, 0.0).unwrap(), 1.0);
    assert_eq!(station_queue(&net, &drain_sq(), 0, 2.0).unwrap(), 2.0);
}

#[test]
fn json_roundtrip_and_class_map_check() {
    let net = fixtures::rybko_stolyar();
    let sol = simulate_priority_fluid(&net, &fixtures::rs_exit_priority(&net), &[0.0, 1.0, 0.0, 1.0], 5.0).unwrap();
    let text = sol.to_json(&net);
    assert_eq!(FluidSolution::from_json(&net, &text).unwrap(), sol);
    assert!(FluidSolution::from_json(&sq(), &text).is_err());
}

#[test]
fn malformed_structure_rejected() {
    let mut sol = drain_sq();
    sol.breakpoints[1] = 0.0;
    assert!(matches!(sol.check_structure(), Err(Error::MalformedSolution(_))));
}

/// Re-entrant line on one station with the later stages ranked first: the
/// empty stages are fed by the lowest-ranked class, so a plain sweep
/// oscillates. Holding both at balance gives `x0 (1 + mu0/mu1 + mu0/mu2) = 1`.
#[test]
fn reentrant_priority_is_solved_exactly() {
    let (lambda, mu) = (0.1, [4.982998, 3.732446, 4.645707]);
    let stage = |m: f64| StageSpec {
        mu: m,
        service: DistSpec::exponential(m),
    };
    let net = Network::new(NetworkSpec {
        stations: 1,
        types: vec![TypeSpec {
            route: vec![0, 0, 0],
            lambda,
            arrival: DistSpec::exponential(lambda),
            stages: mu.iter().map(|&m| stage(m)).collect(),
        }],
    })
    .unwrap();
    let order = PriorityOrder::new(&net, vec![vec![1, 2, 0]]).unwrap();
    let sol = simulate_priority_fluid(&net, &order, &[5.0, 0.0, 0.0], 2.0).unwrap();
    assert!(certify(&net, &sol, DEFAULT_TOL).unwrap().is_empty());
    let x0 = 1.0 / (1.0 + mu[0] / mu[1] + mu[0] / mu[2]);
    let du = sol.breakpoints[1] - sol.breakpoints[0];
    assert!((sol.t[1][0] / du - x0).abs() < 1e-12);
    assert!(((sol.q[1][0] - 5.0) / du - (lambda - mu[0] * x0)).abs() < 1e-12);
    assert!(sol.q[1][1].abs() < 1e-12 && sol.q[1][2].abs() < 1e-12);
}
