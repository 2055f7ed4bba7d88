//! Piecewise-linear fluid solutions and the checks that certify them.
//!
//! A [`FluidSolution`] stores, at every breakpoint `u_k`, the queue level of
//! each class and the cumulative time each class has been served. Between
//! breakpoints both are linear. External arrivals are implied as
//! `lambda_i * t` and departures as `mu_ij * T_ij(t)`, so a solution is a
//! valid fluid trajectory exactly when flow is conserved across every
//! segment, queues stay nonnegative, allocations never decrease, and no
//! station is allocated more than 100% of its time.

mod priority;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{norm1, Network};

pub use priority::{
    simulate_priority_fluid, simulate_priority_fluid_capped, PriorityOrder, DEFAULT_EVENT_CAP,
};
pub(crate) use priority::{PriorityAllocator, RunEnd, SegmentRunner};

/// Default absolute tolerance for fluid checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Breakpoints closer than this are merged.
pub const MERGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FluidSolution {
    /// Strictly increasing times `u_0 < ... < u_K`.
    pub breakpoints: Vec<f64>,
    /// `q[k][c]`: queue level of class `c` at `u_k`.
    pub q: Vec<Vec<f64>>,
    /// `t[k][c]`: cumulative allocation of class `c` at `u_k`.
    pub t: Vec<Vec<f64>>,
}

impl FluidSolution {
    /// Constant solution on `[start, end]` with zero allocation growth.
    pub fn constant(q: Vec<f64>, start: f64, end: f64) -> Self {
        let d = q.len();
        FluidSolution {
            breakpoints: vec![start, end],
            q: vec![q.clone(), q],
            t: vec![vec![0.0; d]; 2],
        }
    }

    pub fn check_structure(&self) -> Result<()> {
        let n = self.breakpoints.len();
        if n < 2 {
            return Err(Error::MalformedSolution(
                "need at least two breakpoints".into(),
            ));
        }
        if self.q.len() != n || self.t.len() != n {
            return Err(Error::MalformedSolution(format!(
                "{n} breakpoints but {} q rows and {} t rows",
                self.q.len(),
                self.t.len()
            )));
        }
        let d = self.q[0].len();
        if self.q.iter().chain(&self.t).any(|r| r.len() != d) {
            return Err(Error::MalformedSolution("ragged rows".into()));
        }
        if self.breakpoints[0] < 0.0 {
            return Err(Error::MalformedSolution("u_0 must be >= 0".into()));
        }
        for w in self.breakpoints.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::MalformedSolution(format!(
                    "breakpoints not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        let finite = self
            .breakpoints
            .iter()
            .chain(self.q.iter().flatten())
            .chain(self.t.iter().flatten())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::MalformedSolution("non-finite value".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    pub fn segments(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().expect("nonempty")
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (a, b) = (self.start(), self.end());
        if !(t >= a && t <= b) {
            return Err(Error::OutOfDomain { t, start: a, end: b });
        }
        let k = self.breakpoints.partition_point(|&u| u <= t);
        // k >= 1 since u_0 <= t
        if k == self.breakpoints.len() {
            return Ok((k - 1, 0.0));
        }
        let (u0, u1) = (self.breakpoints[k - 1], self.breakpoints[k]);
        Ok((k - 1, (t - u0) / (u1 - u0)))
    }

    fn interp(rows: &[Vec<f64>], k: usize, w: f64) -> Vec<f64> {
        if w == 0.0 {
            return rows[k].clone();
        }
        rows[k]
            .iter()
            .zip(&rows[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// Interpolated queue vector at `t`.
    pub fn q_at(&self, t: f64) -> Result<Vec<f64>> {
        let (k, w) = self.locate(t)?;
        Ok(Self::interp(&self.q, k, w))
    }

    /// Interpolated cumulative allocation at `t`.
    pub fn t_at(&self, t: f64) -> Result<Vec<f64>> {
        let (k, w) = self.locate(t)?;
        Ok(Self::interp(&self.t, k, w))
    }

    pub fn norm_at_breakpoint(&self, k: usize) -> f64 {
        norm1(&self.q[k])
    }

    /// Sum of class levels at `station` for breakpoint row `k`.
    pub fn station_level(&self, net: &Network, station: usize, k: usize) -> f64 {
        net.station_classes(station).iter().map(|&c| self.q[k][c]).sum()
    }

    /// Piece of the solution on `[a, b]`, times unchanged.
    pub fn restrict(&self, a: f64, b: f64) -> Result<FluidSolution> {
        if !(a < b) {
            return Err(Error::InvalidArgument(format!("restrict needs a < b, got [{a}, {b}]")));
        }
        let (ka, wa) = self.locate(a)?;
        let (kb, wb) = self.locate(b)?;
        let mut out = FluidSolution {
            breakpoints: vec![a],
            q: vec![Self::interp(&self.q, ka, wa)],
            t: vec![Self::interp(&self.t, ka, wa)],
        };
        for k in (ka + 1)..=kb {
            let u = self.breakpoints[k];
            if u > a && u < b {
                out.push_row(u, self.q[k].clone(), self.t[k].clone());
            }
        }
        out.push_row(b, Self::interp(&self.q, kb, wb), Self::interp(&self.t, kb, wb));
        Ok(out)
    }

    /// Moves the solution to start at time 0 and rebases allocations so that
    /// `T(0) = 0`.
    pub fn shift_to_origin(&self) -> FluidSolution {
        let a = self.start();
        let t0 = self.t[0].clone();
        FluidSolution {
            breakpoints: self.breakpoints.iter().map(|u| u - a).collect(),
            q: self.q.clone(),
            t: self
                .t
                .iter()
                .map(|r| r.iter().zip(&t0).map(|(x, b)| x - b).collect())
                .collect(),
        }
    }

    /// Appends a row, merging it into the previous one if the times are
    /// closer than [`MERGE_EPS`]. The later row wins.
    pub(crate) fn push_row(&mut self, u: f64, q: Vec<f64>, t: Vec<f64>) {
        if let Some(&last) = self.breakpoints.last() {
            if u - last < MERGE_EPS && self.breakpoints.len() > 1 {
                let n = self.breakpoints.len();
                self.breakpoints[n - 1] = u.max(last);
                self.q[n - 1] = q;
                self.t[n - 1] = t;
                return;
            } else if u - last < MERGE_EPS {
                // never collapse the first row; drop the new one
                return;
            }
        }
        self.breakpoints.push(u);
        self.q.push(q);
        self.t.push(t);
    }

    /// Merges breakpoints closer than [`MERGE_EPS`], keeping the later row.
    /// Dropping an intermediate row keeps every increment identity intact.
    pub fn dedup(&self) -> FluidSolution {
        let mut out = FluidSolution {
            breakpoints: vec![self.breakpoints[0]],
            q: vec![self.q[0].clone()],
            t: vec![self.t[0].clone()],
        };
        for k in 1..self.breakpoints.len() {
            out.push_row(self.breakpoints[k], self.q[k].clone(), self.t[k].clone());
        }
        out
    }

    /// Concatenates `next`, which must start where `self` ends.
    pub fn append(&mut self, next: &FluidSolution) -> Result<()> {
        if (next.start() - self.end()).abs() > MERGE_EPS {
            return Err(Error::InvalidArgument(format!(
                "append: {} does not continue {}",
                next.start(),
                self.end()
            )));
        }
        for k in 1..next.breakpoints.len() {
            self.push_row(next.breakpoints[k], next.q[k].clone(), next.t[k].clone());
        }
        Ok(())
    }

    /// Serializable form carrying the class index map.
    pub fn to_file(&self, net: &Network) -> FluidFile {
        FluidFile {
            breakpoints: self.breakpoints.clone(),
            classes: net.class_pairs(),
            q: self.q.iter().flatten().copied().collect(),
            t: self.t.iter().flatten().copied().collect(),
        }
    }

    pub fn to_json(&self, net: &Network) -> String {
        serde_json::to_string(&self.to_file(net)).expect("solution serializes")
    }

    pub fn from_json(net: &Network, text: &str) -> Result<Self> {
        serde_json::from_str::<FluidFile>(text)?.into_solution(net)
    }

    pub fn load(net: &Network, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(net, &std::fs::read_to_string(path)?)
    }
}

/// On-disk layout: `q` and `t` are row-major `(K+1) x d` matrices and
/// `classes[c] = [type, stage]` names column `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidFile {
    pub breakpoints: Vec<f64>,
    pub classes: Vec<(usize, usize)>,
    pub q: Vec<f64>,
    pub t: Vec<f64>,
}

impl FluidFile {
    pub fn into_solution(self, net: &Network) -> Result<FluidSolution> {
        if self.classes != net.class_pairs() {
            return Err(Error::Dimension(
                "class index map does not match the network".into(),
            ));
        }
        let d = self.classes.len();
        let n = self.breakpoints.len();
        if self.q.len() != n * d || self.t.len() != n * d {
            return Err(Error::Dimension(format!(
                "expected {} entries in q and t, got {} and {}",
                n * d,
                self.q.len(),
                self.t.len()
            )));
        }
        let rows = |v: &[f64]| v.chunks(d.max(1)).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let sol = FluidSolution {
            q: rows(&self.q),
            t: rows(&self.t),
            breakpoints: self.breakpoints,
        };
        sol.check_structure()?;
        Ok(sol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    NegativeQueue,
    DecreasingAllocation,
    InitialAllocation,
    StationFeasibility,
    Conservation,
    NonIdling,
}

impl ViolationKind {
    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::NegativeQueue => "negative queue",
            ViolationKind::DecreasingAllocation => "decreasing allocation",
            ViolationKind::InitialAllocation => "nonzero initial allocation",
            ViolationKind::StationFeasibility => "station feasibility",
            ViolationKind::Conservation => "flow conservation",
            ViolationKind::NonIdling => "non-idling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Segment index (or breakpoint index for pointwise checks).
    pub segment: usize,
    /// Class or station index, depending on the kind.
    pub index: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FluidReport {
    pub violations: Vec<Violation>,
    pub max_violation: f64,
}

impl FluidReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn add(&mut self, kind: ViolationKind, segment: usize, index: usize, magnitude: f64) {
        self.max_violation = self.max_violation.max(magnitude);
        self.violations.push(Violation {
            kind,
            segment,
            index,
            magnitude,
        });
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn merge(&mut self, other: FluidReport) {
        self.max_violation = self.max_violation.max(other.max_violation);
        self.violations.extend(other.violations);
    }

    pub fn summary(&self) -> String {
        match self.violations.first() {
            None => "ok".to_string(),
            Some(v) => format!(
                "{} violation(s), first: {} at segment {} index {} (magnitude {:e})",
                self.violations.len(),
                v.kind.label(),
                v.segment,
                v.index,
                v.magnitude
            ),
        }
    }
}

fn check_dims(net: &Network, sol: &FluidSolution) -> Result<()> {
    sol.check_structure()?;
    if sol.dim() != net.classes() {
        return Err(Error::Dimension(format!(
            "solution has {} classes, network has {}",
            sol.dim(),
            net.classes()
        )));
    }
    Ok(())
}

/// Checks nonnegativity, monotone allocations, station feasibility and flow
/// conservation segment by segment, each within additive tolerance `tol`.
pub fn validate_fluid_solution(
    net: &Network,
    sol: &FluidSolution,
    tol: f64,
) -> Result<FluidReport> {
    check_dims(net, sol)?;
    let mut rep = FluidReport::default();
    let d = net.classes();

    for (k, row) in sol.q.iter().enumerate() {
        for (c, &x) in row.iter().enumerate() {
            if x < -tol {
                rep.add(ViolationKind::NegativeQueue, k, c, -x);
            }
        }
    }
    if sol.start() == 0.0 {
        for (c, &x) in sol.t[0].iter().enumerate() {
            if x.abs() > tol {
                rep.add(ViolationKind::InitialAllocation, 0, c, x.abs());
            }
        }
    }
    for k in 0..sol.segments() {
        let du = sol.breakpoints[k + 1] - sol.breakpoints[k];
        let dt: Vec<f64> = (0..d).map(|c| sol.t[k + 1][c] - sol.t[k][c]).collect();
        for (c, &x) in dt.iter().enumerate() {
            if x < -tol {
                rep.add(ViolationKind::DecreasingAllocation, k, c, -x);
            }
        }
        for s in 0..net.stations() {
            let used: f64 = net.station_classes(s).iter().map(|&c| dt[c]).sum();
            if used - du > tol {
                rep.add(ViolationKind::StationFeasibility, k, s, used - du);
            }
        }
        for c in 0..d {
            let info = net.class(c);
            let inflow = match info.prev {
                None => net.lambda(info.ty) * du,
                Some(p) => net.mu(p) * dt[p],
            };
            let expected = inflow - info.mu * dt[c];
            let dq = sol.q[k + 1][c] - sol.q[k][c];
            let err = (dq - expected).abs();
            if err > tol {
                rep.add(ViolationKind::Conservation, k, c, err);
            }
        }
    }
    Ok(rep)
}

/// Checks that no station idles on a segment while its queue is positive.
///
/// A segment idles when `du - dT_station > tol * max(du, 1)`; for segments of
/// unit length or longer this is the slope test `dT/du < 1 - tol`, for
/// shorter ones it bounds the idle time absolutely.
pub fn check_non_idling(net: &Network, sol: &FluidSolution, tol: f64) -> Result<FluidReport> {
    check_dims(net, sol)?;
    let mut rep = FluidReport::default();
    for k in 0..sol.segments() {
        let du = sol.breakpoints[k + 1] - sol.breakpoints[k];
        for s in 0..net.stations() {
            let classes = net.station_classes(s);
            let busy: f64 = classes.iter().map(|&c| sol.t[k + 1][c] - sol.t[k][c]).sum();
            let idle = du - busy;
            if idle > tol * du.max(1.0) {
                let level = sol
                    .station_level(net, s, k)
                    .max(sol.station_level(net, s, k + 1));
                if level > tol {
                    rep.add(ViolationKind::NonIdling, k, s, idle);
                }
            }
        }
    }
    Ok(rep)
}

/// Both checks at once.
pub fn certify(net: &Network, sol: &FluidSolution, tol: f64) -> Result<FluidReport> {
    let mut rep = validate_fluid_solution(net, sol, tol)?;
    rep.merge(check_non_idling(net, sol, tol)?);
    Ok(rep)
}

/// `Q'(t) = beta Q(t / beta)`, `T'(t) = beta T(t / beta)`.
pub fn scale_solution(sol: &FluidSolution, beta: f64) -> Result<FluidSolution> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be positive and finite, got {beta}"
        )));
    }
    let scale = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().map(|x| beta * x).collect())
            .collect()
    };
    Ok(FluidSolution {
        breakpoints: sol.breakpoints.iter().map(|u| beta * u).collect(),
        q: scale(&sol.q),
        t: scale(&sol.t),
    })
}

/// Replaces the solution on `[t1, t2]` by the straight line between its
/// endpoint values.
pub fn linearize_segment(sol: &FluidSolution, t1: f64, t2: f64) -> Result<FluidSolution> {
    if !(t1 < t2) {
        return Err(Error::InvalidArgument(format!(
            "linearize needs t1 < t2, got [{t1}, {t2}]"
        )));
    }
    let (a, b) = (sol.start(), sol.end());
    if t1 < a || t2 > b {
        return Err(Error::OutOfDomain {
            t: if t1 < a { t1 } else { t2 },
            start: a,
            end: b,
        });
    }
    // snap to existing breakpoints so endpoint values are copied verbatim
    let snap = |t: f64| {
        sol.breakpoints
            .iter()
            .copied()
            .find(|u| (u - t).abs() < MERGE_EPS)
            .unwrap_or(t)
    };
    let (t1, t2) = (snap(t1), snap(t2));
    let (q1, q2) = (sol.q_at(t1)?, sol.q_at(t2)?);
    let (a1, a2) = (sol.t_at(t1)?, sol.t_at(t2)?);
    let mut out = FluidSolution {
        breakpoints: Vec::new(),
        q: Vec::new(),
        t: Vec::new(),
    };
    let mut emitted_mid = false;
    for k in 0..sol.breakpoints.len() {
        let u = sol.breakpoints[k];
        if u < t1 {
            out.push_raw(u, sol.q[k].clone(), sol.t[k].clone());
        } else if u <= t2 {
            if !emitted_mid {
                out.push_raw(t1, q1.clone(), a1.clone());
                out.push_raw(t2, q2.clone(), a2.clone());
                emitted_mid = true;
            }
        } else {
            if !emitted_mid {
                out.push_raw(t1, q1.clone(), a1.clone());
                out.push_raw(t2, q2.clone(), a2.clone());
                emitted_mid = true;
            }
            out.push_raw(u, sol.q[k].clone(), sol.t[k].clone());
        }
    }
    Ok(out)
}

impl FluidSolution {
    fn push_raw(&mut self, u: f64, q: Vec<f64>, t: Vec<f64>) {
        if self.breakpoints.last().is_some_and(|&l| l >= u) {
            return;
        }
        self.breakpoints.push(u);
        self.q.push(q);
        self.t.push(t);
    }
}

/// `||Q(t)||_1`.
pub fn total_queue(sol: &FluidSolution, t: f64) -> Result<f64> {
    Ok(norm1(&sol.q_at(t)?))
}

/// Total fluid at `station` at time `t`.
pub fn station_queue(net: &Network, sol: &FluidSolution, station: usize, t: f64) -> Result<f64> {
    let q = sol.q_at(t)?;
    Ok(net.station_classes(station).iter().map(|&c| q[c]).sum())
}

/// Minimum of `||Q||` over the solution (attained at a breakpoint).
pub fn min_norm(sol: &FluidSolution) -> f64 {
    (0..sol.breakpoints.len())
        .map(|k| sol.norm_at_breakpoint(k))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests;
