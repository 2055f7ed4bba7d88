//! Linearly divergent fluid solutions built from an instability witness.
//!
//! A witness is a non-idling fluid solution on `[0, 1]` that leaves the empty
//! state. Replaying it at scale `2^n` on the block `[2^n, 2^(n+1)]`, on top of
//! whatever fluid is already present, yields a solution from any initial
//! state whose mass grows at least linearly in time. The fluid that is not
//! part of the replayed witness is served with the capacity the witness
//! leaves unused, so the combined solution stays non-idling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{
    certify, scale_solution, FluidSolution, PriorityAllocator, PriorityOrder, RunEnd,
    SegmentRunner, DEFAULT_TOL,
};
use crate::network::{norm1, Network};

/// Event cap for the fill integration across all blocks.
const FILL_EVENT_CAP: usize = 5_000_000;

/// A certified non-idling fluid solution on `[0, 1]` with `Q(0) = 0` and
/// `Q(t) != 0` for every `t` in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    sol: FluidSolution,
}

impl Witness {
    /// Certifies `sol` as a witness.
    pub fn new(net: &Network, sol: FluidSolution) -> Result<Self> {
        let rep = certify(net, &sol, DEFAULT_TOL)?;
        if !rep.is_empty() {
            return Err(Error::FluidViolation(rep.summary()));
        }
        if sol.start() != 0.0 || (sol.end() - 1.0).abs() > 1e-12 {
            return Err(Error::NoWitness(format!(
                "witness must live on [0, 1], got [{}, {}]",
                sol.start(),
                sol.end()
            )));
        }
        if norm1(&sol.q[0]) > DEFAULT_TOL {
            return Err(Error::NoWitness("witness must start empty".into()));
        }
        for k in 1..sol.breakpoints.len() {
            let mid: Vec<f64> = sol.q[k - 1]
                .iter()
                .zip(&sol.q[k])
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            if !(norm1(&sol.q[k]) > 0.0 && norm1(&mid) > 0.0) {
                return Err(Error::NoWitness(format!(
                    "witness vanishes near t = {}",
                    sol.breakpoints[k]
                )));
            }
        }
        Ok(Witness { sol })
    }

    pub fn solution(&self) -> &FluidSolution {
        &self.sol
    }

    /// `||Q(1)||`.
    pub fn end_norm(&self) -> f64 {
        norm1(self.sol.q.last().expect("nonempty"))
    }

    pub fn load(net: &Network, path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::new(net, FluidSolution::load(net, path)?)
    }
}

/// Trims `raw` to its last excursion from zero and rescales it to `[0, 1]`.
///
/// The end point is the last breakpoint with nonzero mass; the start is the
/// last breakpoint before it where every class is empty. Because the norm of
/// a nonnegative piecewise-linear vector is linear on each segment, the mass
/// can only vanish on a segment by vanishing at one of its breakpoints.
pub fn normalize_witness(net: &Network, raw: &FluidSolution) -> Result<Witness> {
    let rep = certify(net, raw, DEFAULT_TOL)?;
    if !rep.is_empty() {
        return Err(Error::FluidViolation(rep.summary()));
    }
    let is_zero = |k: usize| raw.q[k].iter().all(|&x| x <= 0.0);
    let end = (0..raw.breakpoints.len())
        .rev()
        .find(|&k| !is_zero(k))
        .ok_or_else(|| Error::NoWitness("solution never leaves zero".into()))?;
    let start = (0..end)
        .rev()
        .find(|&k| is_zero(k))
        .ok_or_else(|| Error::NoWitness("solution does not start at zero".into()))?;
    let (a, b) = (raw.breakpoints[start], raw.breakpoints[end]);
    let mut piece = raw.restrict(a, b)?.shift_to_origin();
    piece.q[0].iter_mut().for_each(|x| *x = 0.0);
    let mut sol = scale_solution(&piece, 1.0 / (b - a))?.dedup();
    *sol.breakpoints.last_mut().expect("nonempty") = 1.0;
    Witness::new(net, sol)
}

/// Constants certifying linear divergence of the solutions built from a
/// witness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCertificate {
    /// Minimum of `||Q_w(t)||` over `t` in `[||Q_w(1)|| / (4C), 1]`.
    pub gamma1: f64,
    pub gamma0: f64,
    /// Linear divergence rate, `gamma0 / 2`.
    pub gamma: f64,
    /// `||Q_w(1)||`.
    pub end_norm: f64,
    pub c_big: f64,
}

impl DivergenceCertificate {
    /// `min(gamma / C, 1)`.
    pub fn floor_factor(&self) -> f64 {
        (self.gamma / self.c_big).min(1.0)
    }

    /// Lower bound `(||q|| / 2) min(gamma / C, 1)` on the mass of the
    /// divergent solution started from a state of norm `q_norm`.
    pub fn floor_bound(&self, q_norm: f64) -> f64 {
        0.5 * q_norm * self.floor_factor()
    }

    /// The same bound with `max` in place of `min`, for reporting only.
    pub fn floor_bound_max_form(&self, q_norm: f64) -> f64 {
        0.5 * q_norm * (self.gamma / self.c_big).max(1.0)
    }
}

/// Computes `gamma1`, `gamma0 = min(||Q_w(1)|| / 4, gamma1)` and
/// `gamma = gamma0 / 2`. When `||Q_w(1)|| >= 4C` the doubling step already
/// clears the block and `gamma0 = ||Q_w(1)|| / 4`.
pub fn gamma_of_witness(net: &Network, w: &Witness) -> DivergenceCertificate {
    let sol = w.solution();
    let c = net.constants().c_big;
    let v = w.end_norm();
    let lo = (v / (4.0 * c)).min(1.0);
    // the norm is linear per segment, so its minimum sits at lo or a breakpoint
    let mut gamma1 = norm1(&sol.q_at(lo).expect("lo in [0, 1]"));
    for k in 0..sol.breakpoints.len() {
        if sol.breakpoints[k] >= lo {
            gamma1 = gamma1.min(sol.norm_at_breakpoint(k));
        }
    }
    let gamma0 = if v >= 4.0 * c { v / 4.0 } else { (v / 4.0).min(gamma1) };
    DivergenceCertificate {
        gamma1,
        gamma0,
        gamma: gamma0 / 2.0,
        end_norm: v,
        c_big: c,
    }
}

/// Start and scale of each doubling block covering `[0, horizon]`: `[0, 1]`
/// and `[1, 2]` at scale 1, then `[2^n, 2^(n+1)]` at scale `2^n`.
pub fn doubling_blocks(horizon: f64) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 1.0)];
    let mut a = 1.0;
    while a < horizon {
        out.push((a, a.max(1.0)));
        a *= 2.0;
    }
    out
}

/// Builds a non-idling fluid solution on `[0, horizon]` from initial state
/// `q` that replays the witness at scale `2^n` on each doubling block.
///
/// Fluid outside the replayed witness gets the capacity the witness leaves
/// unused, handed to classes in index order; empty classes are only served
/// up to their inflow.
pub fn build_divergent(
    net: &Network,
    w: &Witness,
    q: &[f64],
    horizon: f64,
) -> Result<FluidSolution> {
    if !(horizon >= 1.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be >= 1, got {horizon}"
        )));
    }
    let d = net.classes();
    if q.len() != d {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, network has {d} classes",
            q.len()
        )));
    }
    if q.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("initial state must be finite and >= 0".into()));
    }
    let ws = w.solution();
    let order = PriorityOrder::by_index(net);
    let mut runner = SegmentRunner::new(PriorityAllocator::new(net, &order), q.to_vec(), 0.0, FILL_EVENT_CAP);
    let mut out = FluidSolution {
        breakpoints: vec![0.0],
        q: vec![q.to_vec()],
        t: vec![vec![0.0; d]],
    };
    // witness allocation accumulated over finished blocks
    let mut base_t = vec![0.0; d];
    for (a, beta) in doubling_blocks(horizon) {
        let block_end = (a + beta).min(horizon);
        for k in 0..ws.segments() {
            let (s0, s1) = (ws.breakpoints[k], ws.breakpoints[k + 1]);
            let (u0, u1) = (a + beta * s0, (a + beta * s1).min(block_end));
            if u0 >= block_end {
                break;
            }
            let ds = s1 - s0;
            let mut caps = vec![0.0; net.stations()];
            for (st, cap) in caps.iter_mut().enumerate() {
                let busy: f64 = net
                    .station_classes(st)
                    .iter()
                    .map(|&c| ws.t[k + 1][c] - ws.t[k][c])
                    .sum();
                *cap = (1.0 - busy / ds).max(0.0);
            }
            let (wq0, wq1, wt0, wt1) = (&ws.q[k], &ws.q[k + 1], &ws.t[k], &ws.t[k + 1]);
            let mut emit = |u: f64, l: &[f64], e: &[f64]| {
                let frac = ((u - a) / beta - s0) / ds;
                let qo: Vec<f64> = (0..d)
                    .map(|c| beta * (wq0[c] + frac * (wq1[c] - wq0[c])) + l[c])
                    .collect();
                let to: Vec<f64> = (0..d)
                    .map(|c| base_t[c] + beta * (wt0[c] + frac * (wt1[c] - wt0[c])) + e[c])
                    .collect();
                out.push_row(u, qo, to);
            };
            if runner.run(u1, &caps, false, &mut emit)? == RunEnd::EventCap {
                return Err(Error::EventCap {
                    events: runner.events,
                    partial: Box::new(out),
                });
            }
        }
        // fold the replayed witness into the carried fluid
        let frac_end = (block_end - a) / beta;
        let wq = ws.q_at(frac_end.min(1.0))?;
        let wt = ws.t_at(frac_end.min(1.0))?;
        for c in 0..d {
            runner.q[c] += beta * wq[c];
            base_t[c] += beta * wt[c];
        }
        if block_end >= horizon {
            break;
        }
    }
    Ok(out)
}

/// True iff `||Q(t)|| >= gamma t - tol` at every breakpoint and segment
/// midpoint.
pub fn verify_linear_divergence(sol: &FluidSolution, gamma: f64, tol: f64) -> bool {
    let ok = |u: f64, q: &[f64]| norm1(q) >= gamma * u - tol;
    for k in 0..sol.breakpoints.len() {
        if !ok(sol.breakpoints[k], &sol.q[k]) {
            return false;
        }
        if k + 1 < sol.breakpoints.len() {
            let u = 0.5 * (sol.breakpoints[k] + sol.breakpoints[k + 1]);
            let mid: Vec<f64> = sol.q[k]
                .iter()
                .zip(&sol.q[k + 1])
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            if !ok(u, &mid) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn blocks_double() {
        let b = doubling_blocks(8.0);
        assert_eq!(b, vec![(0.0, 1.0), (1.0, 1.0), (2.0, 2.0), (4.0, 4.0)]);
        assert_eq!(doubling_blocks(1.0), vec![(0.0, 1.0)]);
    }

    #[test]
    fn ray_witness_gamma_closed_form() {
        let net = fixtures::overloaded_queue();
        let w = fixtures::overloaded_witness(&net).unwrap();
        let cert = gamma_of_witness(&net, &w);
        let c = 118.0;
        // min of t * v on [v / 4C, 1] with v = 1
        assert!((cert.gamma1 - 1.0 / (4.0 * c)).abs() < 1e-15);
        assert!((cert.gamma0 - (0.25f64).min(1.0 / (4.0 * c))).abs() < 1e-15);
        assert_eq!(cert.gamma, cert.gamma0 / 2.0);
    }

    #[test]
    fn rs_witness_is_certified() {
        let net = fixtures::rybko_stolyar();
        let w = fixtures::rs_witness(&net).unwrap();
        assert!(w.end_norm() > 0.0);
        assert!(gamma_of_witness(&net, &w).gamma > 0.0);
    }

    #[test]
    fn normalize_is_fixed_point_on_witness() {
        let net = fixtures::rybko_stolyar();
        let w = fixtures::rs_witness(&net).unwrap();
        let again = normalize_witness(&net, w.solution()).unwrap();
        let (a, b) = (w.solution(), again.solution());
        assert_eq!(a.breakpoints.len(), b.breakpoints.len());
        for k in 0..a.breakpoints.len() {
            assert!((a.breakpoints[k] - b.breakpoints[k]).abs() < 1e-12);
            for c in 0..net.classes() {
                assert!((a.q[k][c] - b.q[k][c]).abs() < 1e-12);
                assert!((a.t[k][c] - b.t[k][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_trims_leading_zero() {
        let net = fixtures::rybko_stolyar();
        let w = fixtures::rs_witness(&net).unwrap();
        let rates: Vec<f64> = (0..net.classes())
            .map(|c| net.lambda(net.class(c).ty) / net.mu(c))
            .collect();
        let mut raw = FluidSolution {
            breakpoints: vec![0.0, 3.0],
            q: vec![vec![0.0; 4], vec![0.0; 4]],
            t: vec![vec![0.0; 4], rates.iter().map(|r| 3.0 * r).collect()],
        };
        let ws = w.solution();
        let shifted = FluidSolution {
            breakpoints: ws.breakpoints.iter().map(|u| u + 3.0).collect(),
            q: ws.q.clone(),
            t: ws
                .t
                .iter()
                .map(|r| r.iter().zip(&raw.t[1]).map(|(a, b)| a + b).collect())
                .collect(),
        };
        raw.append(&shifted).unwrap();
        assert!(certify(&net, &raw, 1e-9).unwrap().is_empty());
        let n = normalize_witness(&net, &raw).unwrap();
        // t0 - t_hat = 1, so the piece is only shifted
        assert!((n.end_norm() - w.end_norm()).abs() < 1e-12);
        assert_eq!(n.solution().breakpoints.len(), ws.breakpoints.len());
        for k in 0..ws.breakpoints.len() {
            for c in 0..4 {
                assert!((n.solution().q[k][c] - ws.q[k][c]).abs() < 1e-12);
                assert!((n.solution().t[k][c] - ws.t[k][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_never_leaves() {
        let net = fixtures::single_queue();
        let z = FluidSolution {
            breakpoints: vec![0.0, 10.0],
            q: vec![vec![0.0], vec![0.0]],
            t: vec![vec![0.0], vec![5.0]],
        };
        assert!(matches!(normalize_witness(&net, &z), Err(Error::NoWitness(_))));
    }

    #[test]
    fn divergence_check_controls() {
        let net = fixtures::single_queue();
        let z = FluidSolution {
            breakpoints: vec![0.0, 10.0],
            q: vec![vec![0.0], vec![0.0]],
            t: vec![vec![0.0], vec![5.0]],
        };
        assert!(verify_linear_divergence(&z, 0.0, 0.0));
        let drain = crate::fluid::simulate_priority_fluid(
            &net,
            &PriorityOrder::by_index(&net),
            &[4.0],
            10.0,
        )
        .unwrap();
        assert!(!verify_linear_divergence(&drain, 0.1, 1e-9));
    }
}
