//! Replays the bookkeeping identities of a simulation trace.

use serde::{Deserialize, Serialize};

use super::{SimTrace, BOOKKEEPING_TOL};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceViolationKind {
    /// Rows of the wrong width or non-increasing sample times.
    Shape,
    /// A cumulative count or busy time decreased.
    Monotonicity,
    /// Queue does not match initial level plus inflow minus outflow.
    Conservation,
    /// Station busy time exceeds elapsed time.
    Feasibility,
    /// Station busy for less than the whole window while never empty.
    NonIdling,
    /// Accumulated service disagrees with the sampled service times.
    Bookkeeping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceViolation {
    pub kind: TraceViolationKind,
    /// Sample row (the window ends at this row).
    pub sample: usize,
    /// Class, type or station index.
    pub index: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub violations: Vec<TraceViolation>,
}

impl TraceReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: TraceViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn summary(&self) -> String {
        match self.violations.first() {
            None => "consistent".into(),
            Some(v) => format!(
                "{} violations, first: {:?} at sample {} index {} (magnitude {:e})",
                self.violations.len(),
                v.kind,
                v.sample,
                v.index,
                v.magnitude
            ),
        }
    }

    fn push(&mut self, kind: TraceViolationKind, sample: usize, index: usize, magnitude: f64) {
        self.violations.push(TraceViolation {
            kind,
            sample,
            index,
            magnitude,
        });
    }
}

/// Checks conservation at every sample, and station feasibility and
/// non-idling on every inter-sample window. Busy-time comparisons use the
/// tolerance `1e-9 * max(1, window)`; counts are compared exactly.
pub fn verify_trace(net: &Network, trace: &SimTrace) -> TraceReport {
    use TraceViolationKind::*;
    let mut rep = TraceReport::default();
    let (d, types, stations) = (net.classes(), net.types(), net.stations());
    let n = trace.times.len();
    let shape_ok = n > 0
        && [trace.q.len(), trace.a.len(), trace.d.len(), trace.t.len(), trace.qmin.len()]
            .iter()
            .all(|&l| l == n)
        && (0..n).all(|s| {
            trace.q[s].len() == d
                && trace.a[s].len() == types
                && trace.d[s].len() == d
                && trace.t[s].len() == d
                && trace.qmin[s].len() == stations
        });
    if !shape_ok {
        rep.push(Shape, 0, 0, f64::NAN);
        return rep;
    }
    for s in 1..n {
        if !(trace.times[s] > trace.times[s - 1]) {
            rep.push(Shape, s, 0, trace.times[s - 1] - trace.times[s]);
        }
    }
    if !rep.is_empty() {
        return rep;
    }
    let q0 = &trace.q[0];
    for s in 0..n {
        for k in 0..d {
            let info = net.class(k);
            let inflow = match info.prev {
                None => trace.a[s][info.ty],
                Some(p) => trace.d[s][p],
            } as i128;
            let expect = q0[k] as i128 + inflow - trace.d[s][k] as i128;
            let got = trace.q[s][k] as i128;
            if got != expect {
                rep.push(Conservation, s, k, (got - expect).abs() as f64);
            }
        }
        if s == 0 {
            continue;
        }
        for i in 0..types {
            if trace.a[s][i] < trace.a[s - 1][i] {
                rep.push(Monotonicity, s, i, (trace.a[s - 1][i] - trace.a[s][i]) as f64);
            }
        }
        for k in 0..d {
            if trace.d[s][k] < trace.d[s - 1][k] {
                rep.push(Monotonicity, s, k, (trace.d[s - 1][k] - trace.d[s][k]) as f64);
            }
            if trace.t[s][k] < trace.t[s - 1][k] {
                rep.push(Monotonicity, s, k, trace.t[s - 1][k] - trace.t[s][k]);
            }
        }
        let dt = trace.times[s] - trace.times[s - 1];
        let tol = BOOKKEEPING_TOL * dt.max(1.0);
        for st in 0..stations {
            let busy: f64 = net
                .station_classes(st)
                .iter()
                .map(|&k| trace.t[s][k] - trace.t[s - 1][k])
                .sum();
            if busy > dt + tol {
                rep.push(Feasibility, s, st, busy - dt);
            }
            if trace.qmin[s][st] > 0 && busy < dt - tol {
                rep.push(NonIdling, s, st, dt - busy);
            }
        }
    }
    for (idx, err) in [trace.residual_max_err, trace.counting_max_err].into_iter().enumerate() {
        if !(err <= BOOKKEEPING_TOL) {
            rep.push(Bookkeeping, n - 1, idx, err);
        }
    }
    rep
}
