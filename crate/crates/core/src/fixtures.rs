//! Bundled networks and instability witnesses used by tests, examples and
//! the CLI.

use crate::dist::DistSpec;
use crate::divergence::{normalize_witness, Witness};
use crate::error::Result;
use crate::fluid::{simulate_priority_fluid, FluidSolution, PriorityOrder};
use crate::network::{Network, NetworkSpec, StageSpec, TypeSpec};

fn exp_type(route: Vec<usize>, lambda: f64, mus: &[f64]) -> TypeSpec {
    TypeSpec {
        route,
        lambda,
        arrival: DistSpec::exponential(lambda),
        stages: mus
            .iter()
            .map(|&mu| StageSpec {
                mu,
                service: DistSpec::exponential(mu),
            })
            .collect(),
    }
}

/// One station, one type, `lambda = 1`, `mu = 2`, exponential primitives.
pub fn single_queue_spec() -> NetworkSpec {
    NetworkSpec {
        stations: 1,
        types: vec![exp_type(vec![0], 1.0, &[2.0])],
    }
}

/// One station with `lambda = 2 > mu = 1`: the fluid grows along the ray
/// `Q(t) = t`.
pub fn overloaded_queue_spec() -> NetworkSpec {
    NetworkSpec {
        stations: 1,
        types: vec![exp_type(vec![0], 2.0, &[1.0])],
    }
}

/// Single queue with deterministic interarrival 1 and service 0.5.
pub fn deterministic_queue_spec() -> NetworkSpec {
    NetworkSpec {
        stations: 1,
        types: vec![TypeSpec {
            route: vec![0],
            lambda: 1.0,
            arrival: DistSpec::deterministic(1.0),
            stages: vec![StageSpec {
                mu: 2.0,
                service: DistSpec::deterministic(0.5),
            }],
        }],
    }
}

/// Two stations A = 0 and B = 1. Type 0 visits A then B, type 1 visits B
/// then A. First stages are fast (`mu = 6`), second stages slow
/// (`mu = 1.5`), `lambda = 1` for both types. Each station has nominal load
/// 5/6, but the two slow classes together need 4/3 of a server.
pub fn rybko_stolyar_spec() -> NetworkSpec {
    NetworkSpec {
        stations: 2,
        types: vec![
            exp_type(vec![0, 1], 1.0, &[6.0, 1.5]),
            exp_type(vec![1, 0], 1.0, &[6.0, 1.5]),
        ],
    }
}

pub fn single_queue() -> Network {
    Network::new(single_queue_spec()).expect("fixture is valid")
}

pub fn overloaded_queue() -> Network {
    Network::new(overloaded_queue_spec()).expect("fixture is valid")
}

pub fn deterministic_queue() -> Network {
    Network::new(deterministic_queue_spec()).expect("fixture is valid")
}

pub fn rybko_stolyar() -> Network {
    Network::new(rybko_stolyar_spec()).expect("fixture is valid")
}

/// Priority to the slow exit classes: class 3 over class 0 at A, class 1
/// over class 2 at B.
pub fn rs_exit_priority(net: &Network) -> PriorityOrder {
    PriorityOrder::new(net, vec![vec![3, 0], vec![1, 2]]).expect("fixture order")
}

/// Norm of the seed state the RS witness spirals out of.
pub const RS_SEED_MASS: f64 = 1e-13;
/// Duration of the straight-line start that reaches the seed state.
pub const RS_SEED_DURATION: f64 = 1e-6;
/// Mass at which the RS witness is cut off before normalisation.
pub const RS_TARGET_MASS: f64 = 1.0;

/// Raw RS witness: a straight line from the empty state to a tiny seed mass
/// in class 0, followed by the exit-priority fluid until the total mass
/// first reaches [`RS_TARGET_MASS`].
///
/// The exit-priority fluid has no straight-line escape from zero, so any
/// exact witness spirals through infinitely many phases near the origin.
/// The straight start replaces that spiral below `RS_SEED_MASS`; it is
/// exactly feasible and only idles while the station holds less than
/// `RS_SEED_MASS` of fluid, far below the 1e-9 check tolerance.
pub fn rs_raw_witness(net: &Network) -> Result<FluidSolution> {
    let d = net.classes();
    let mut seed = vec![0.0; d];
    seed[0] = RS_SEED_MASS;
    let dur = RS_SEED_DURATION;
    // serve each class exactly what leaves the seed state behind it
    let mut served = vec![0.0; d];
    for ty in 0..net.types() {
        let mut upstream = 0.0;
        for k in net.first_class(ty)..=net.last_class(ty) {
            upstream += seed[k];
            served[k] = (net.lambda(ty) * dur - upstream) / net.mu(k);
        }
    }
    let mut raw = FluidSolution {
        breakpoints: vec![0.0, dur],
        q: vec![vec![0.0; d], seed.clone()],
        t: vec![vec![0.0; d], served.clone()],
    };
    // run long enough to pass the target, then cut at the crossing
    let order = rs_exit_priority(net);
    let tail = simulate_priority_fluid(net, &order, &seed, 64.0)?;
    let cross = tail
        .breakpoints
        .iter()
        .zip(&tail.q)
        .find(|(_, q)| q.iter().sum::<f64>() >= RS_TARGET_MASS)
        .map(|(&u, _)| u)
        .unwrap_or(tail.end());
    let tail = tail.restrict(0.0, cross)?;
    let shifted = FluidSolution {
        breakpoints: tail.breakpoints.iter().map(|u| u + dur).collect(),
        q: tail.q,
        t: tail
            .t
            .iter()
            .map(|r| r.iter().zip(&served).map(|(a, b)| a + b).collect())
            .collect(),
    };
    raw.append(&shifted)?;
    Ok(raw)
}

/// The RS witness normalised to `[0, 1]`.
pub fn rs_witness(net: &Network) -> Result<Witness> {
    normalize_witness(net, &rs_raw_witness(net)?)
}

/// The overloaded queue's ray witness `Q(t) = t`, `T(t) = t` on `[0, 1]`.
pub fn overloaded_witness(net: &Network) -> Result<Witness> {
    let sol = FluidSolution {
        breakpoints: vec![0.0, 1.0],
        q: vec![vec![0.0], vec![net.lambda(0) - net.mu(0)]],
        t: vec![vec![0.0], vec![1.0]],
    };
    Witness::new(net, sol)
}
