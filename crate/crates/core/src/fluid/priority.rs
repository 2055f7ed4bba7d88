//! Event-driven integration of fluid dynamics under static priorities.
//!
//! Each station hands its capacity down its priority list. A class with
//! positive fluid takes everything that is left; an empty class takes only
//! what keeps it empty (its inflow divided by its rate). Allocation rates are
//! constant until some positive buffer drains, so the trajectory is exactly
//! piecewise linear with a breakpoint at every drain event.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fluid::FluidSolution;
use crate::network::Network;

/// Default cap on drain events for one integration.
pub const DEFAULT_EVENT_CAP: usize = 1_000_000;

const MAX_SWEEPS: usize = 1_000;
const SWEEP_TOL: f64 = 1e-14;
/// Relative slack when deciding whether an empty class can be held at balance.
const CUT_TOL: f64 = 1e-12;
/// A draining buffer left with less than this fraction of its previous level
/// after a step is considered empty.
const SNAP_REL: f64 = 1e-13;

/// Per-station class lists, highest priority first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityOrder(pub Vec<Vec<usize>>);

impl PriorityOrder {
    /// Checks that every station's list is a permutation of its classes.
    pub fn new(net: &Network, per_station: Vec<Vec<usize>>) -> Result<Self> {
        if per_station.len() != net.stations() {
            return Err(Error::IncompletePriority(format!(
                "{} station lists for {} stations",
                per_station.len(),
                net.stations()
            )));
        }
        for (s, list) in per_station.iter().enumerate() {
            let mut got = list.clone();
            got.sort_unstable();
            let mut want = net.station_classes(s).to_vec();
            want.sort_unstable();
            if got != want {
                return Err(Error::IncompletePriority(format!(
                    "station {s}: order {list:?} is not a permutation of classes {want:?}"
                )));
            }
        }
        Ok(PriorityOrder(per_station))
    }

    /// Lowest class index first at every station.
    pub fn by_index(net: &Network) -> Self {
        PriorityOrder(
            (0..net.stations())
                .map(|s| net.station_classes(s).to_vec())
                .collect(),
        )
    }

    /// Builds an order from `(type, stage)` pairs.
    pub fn from_pairs(net: &Network, per_station: &[Vec<(usize, usize)>]) -> Result<Self> {
        let pairs = net.class_pairs();
        let lists = per_station
            .iter()
            .map(|l| {
                l.iter()
                    .map(|p| {
                        pairs.iter().position(|q| q == p).ok_or_else(|| {
                            Error::IncompletePriority(format!("unknown class {p:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(net, lists)
    }

    /// Parses `c,c,...;c,...` (class indices per station, highest first).
    pub fn parse(net: &Network, text: &str) -> Result<Self> {
        let lists = text
            .split(';')
            .map(|s| {
                s.split(',')
                    .filter(|x| !x.trim().is_empty())
                    .map(|x| {
                        x.trim()
                            .parse::<usize>()
                            .map_err(|e| Error::Parse(format!("bad class index `{x}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(net, lists)
    }

    /// Position of each class in its station's list (0 = highest).
    pub fn ranks(&self, classes: usize) -> Vec<usize> {
        let mut r = vec![0; classes];
        for list in &self.0 {
            for (pos, &c) in list.iter().enumerate() {
                r[c] = pos;
            }
        }
        r
    }
}

/// Computes instantaneous allocation rates for a priority order.
#[derive(Debug, Clone)]
pub(crate) struct PriorityAllocator {
    order: Vec<Vec<usize>>,
    mu: Vec<f64>,
    prev: Vec<Option<usize>>,
    /// External arrival rate for first-stage classes, 0 otherwise.
    lambda: Vec<f64>,
}

impl PriorityAllocator {
    pub(crate) fn new(net: &Network, order: &PriorityOrder) -> Self {
        let d = net.classes();
        PriorityAllocator {
            order: order.0.clone(),
            mu: (0..d).map(|k| net.mu(k)).collect(),
            prev: (0..d).map(|k| net.class(k).prev).collect(),
            lambda: (0..d)
                .map(|k| {
                    let c = net.class(k);
                    if c.prev.is_none() {
                        net.lambda(c.ty)
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }

    fn inflow(&self, k: usize, x: &[f64], external: bool) -> f64 {
        match self.prev[k] {
            None if external => self.lambda[k],
            None => 0.0,
            Some(p) => self.mu[p] * x[p],
        }
    }

    /// Returns allocation rates and, per class, whether the class is an
    /// empty buffer held exactly at balance.
    ///
    /// A priority sweep settles in a few passes whenever no empty class is fed
    /// by a lower-priority class at its own station; otherwise the sweep can
    /// oscillate and the allocation is solved exactly instead.
    fn allocate(&self, q: &[f64], caps: &[f64], external: bool) -> Result<(Vec<f64>, Vec<bool>)> {
        let d = q.len();
        let mut x = vec![0.0; d];
        let mut balanced = vec![false; d];
        for _ in 0..MAX_SWEEPS {
            let mut change: f64 = 0.0;
            for (s, list) in self.order.iter().enumerate() {
                let mut left = caps[s];
                for &k in list {
                    let new = if q[k] > 0.0 {
                        balanced[k] = false;
                        left
                    } else {
                        let need = self.inflow(k, &x, external) / self.mu[k];
                        balanced[k] = need <= left;
                        need.min(left)
                    };
                    change = change.max((new - x[k]).abs());
                    x[k] = new;
                    left = (left - new).max(0.0);
                }
            }
            if change <= SWEEP_TOL {
                return Ok((x, balanced));
            }
        }
        self.allocate_exact(q, caps, external)
    }

    /// Per station, the list position of the class that takes the remaining
    /// capacity: every class before it is empty and held at balance under
    /// rates `x`, every class after it gets nothing. The list length means
    /// no class takes the remainder.
    fn cuts(&self, x: &[f64], q: &[f64], caps: &[f64], external: bool) -> Vec<usize> {
        self.order
            .iter()
            .enumerate()
            .map(|(s, list)| {
                let mut left = caps[s];
                let slack = CUT_TOL * caps[s].max(1.0);
                for (pos, &k) in list.iter().enumerate() {
                    if q[k] > 0.0 {
                        return pos;
                    }
                    let need = self.inflow(k, x, external) / self.mu[k];
                    if need > left + slack {
                        return pos;
                    }
                    left -= need;
                }
                list.len()
            })
            .collect()
    }

    /// Solves the linear system fixed by the cut positions.
    fn solve_cuts(&self, cuts: &[usize], caps: &[f64], external: bool, d: usize) -> Result<Vec<f64>> {
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut b = DVector::<f64>::zeros(d);
        for (s, list) in self.order.iter().enumerate() {
            let cut = cuts[s];
            for (pos, &k) in list.iter().enumerate() {
                if pos < cut {
                    a[(k, k)] = self.mu[k];
                    match self.prev[k] {
                        Some(p) => a[(k, p)] -= self.mu[p],
                        None if external => b[k] = self.lambda[k],
                        None => {}
                    }
                } else if pos == cut {
                    for &j in &list[..=cut] {
                        a[(k, j)] = 1.0;
                    }
                    b[k] = caps[s];
                } else {
                    a[(k, k)] = 1.0;
                }
            }
        }
        let x = a.lu().solve(&b).ok_or_else(|| {
            Error::InvalidArgument("priority allocation system is singular".into())
        })?;
        Ok(x.iter().map(|&v| v.max(0.0)).collect())
    }

    /// Iterates cut positions to a consistent allocation. Cuts start at the
    /// first nonempty class of each station.
    fn allocate_exact(&self, q: &[f64], caps: &[f64], external: bool) -> Result<(Vec<f64>, Vec<bool>)> {
        let d = q.len();
        let mut cuts: Vec<usize> = self
            .order
            .iter()
            .map(|l| l.iter().position(|&k| q[k] > 0.0).unwrap_or(l.len()))
            .collect();
        for _ in 0..4 * d + 8 {
            let x = self.solve_cuts(&cuts, caps, external, d)?;
            let next = self.cuts(&x, q, caps, external);
            if next == cuts {
                let mut balanced = vec![false; d];
                for (s, list) in self.order.iter().enumerate() {
                    for &k in &list[..cuts[s]] {
                        balanced[k] = true;
                    }
                }
                return Ok((x, balanced));
            }
            cuts = next;
        }
        Err(Error::InvalidArgument(
            "priority allocation did not converge".into(),
        ))
    }
}

/// Integrates priority dynamics over a time window, emitting a row at each
/// drain event and at the end of the window.
pub(crate) struct SegmentRunner {
    alloc: PriorityAllocator,
    pub q: Vec<f64>,
    /// Allocation accumulated by this runner.
    pub t: Vec<f64>,
    pub now: f64,
    pub events: usize,
    pub event_cap: usize,
}

impl SegmentRunner {
    pub(crate) fn new(alloc: PriorityAllocator, q0: Vec<f64>, start: f64, event_cap: usize) -> Self {
        let d = q0.len();
        SegmentRunner {
            alloc,
            q: q0,
            t: vec![0.0; d],
            now: start,
            events: 0,
            event_cap,
        }
    }

    /// Runs until `until` with station capacities `caps`; `external` toggles
    /// exogenous arrivals. `emit(time, q, t)` is called after every step.
    pub(crate) fn run(
        &mut self,
        until: f64,
        caps: &[f64],
        external: bool,
        emit: &mut dyn FnMut(f64, &[f64], &[f64]),
    ) -> Result<RunEnd> {
        let d = self.q.len();
        while self.now < until {
            let (x, balanced) = self.alloc.allocate(&self.q, caps, external)?;
            let mut dq = vec![0.0; d];
            for k in 0..d {
                dq[k] = if self.q[k] <= 0.0 && balanced[k] {
                    0.0
                } else {
                    self.alloc.inflow(k, &x, external) - self.alloc.mu[k] * x[k]
                };
                if self.q[k] <= 0.0 && dq[k] < 0.0 {
                    dq[k] = 0.0;
                }
            }
            let mut tau = until - self.now;
            let mut hit = None;
            for k in 0..d {
                if dq[k] < 0.0 {
                    let e = self.q[k] / -dq[k];
                    if e < tau {
                        tau = e;
                        hit = Some(k);
                    }
                }
            }
            let old = self.q.clone();
            for k in 0..d {
                self.q[k] += dq[k] * tau;
                self.t[k] += x[k] * tau;
                if dq[k] < 0.0 && (self.q[k] <= SNAP_REL * old[k] || self.q[k] < 0.0) {
                    self.q[k] = 0.0;
                }
            }
            if let Some(k) = hit {
                self.q[k] = 0.0;
                self.now += tau;
                self.events += 1;
                if self.events > self.event_cap {
                    emit(self.now, &self.q, &self.t);
                    return Ok(RunEnd::EventCap);
                }
            } else {
                self.now = until;
            }
            emit(self.now, &self.q, &self.t);
        }
        Ok(RunEnd::Reached)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RunEnd {
    Reached,
    EventCap,
}

/// Integrates the fluid model under a static priority order from `q0` over
/// `[0, horizon]`.
pub fn simulate_priority_fluid(
    net: &Network,
    order: &PriorityOrder,
    q0: &[f64],
    horizon: f64,
) -> Result<FluidSolution> {
    simulate_priority_fluid_capped(net, order, q0, horizon, DEFAULT_EVENT_CAP)
}

/// As [`simulate_priority_fluid`] with an explicit event cap. Exceeding the
/// cap returns [`Error::EventCap`] carrying the partial solution.
pub fn simulate_priority_fluid_capped(
    net: &Network,
    order: &PriorityOrder,
    q0: &[f64],
    horizon: f64,
    event_cap: usize,
) -> Result<FluidSolution> {
    if q0.len() != net.classes() {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, network has {} classes",
            q0.len(),
            net.classes()
        )));
    }
    if q0.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument("initial state must be finite and >= 0".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let order = PriorityOrder::new(net, order.0.clone())?;
    let d = net.classes();
    let mut sol = FluidSolution {
        breakpoints: vec![0.0],
        q: vec![q0.to_vec()],
        t: vec![vec![0.0; d]],
    };
    let caps = vec![1.0; net.stations()];
    let mut runner = SegmentRunner::new(PriorityAllocator::new(net, &order), q0.to_vec(), 0.0, event_cap);
    let res = runner.run(horizon, &caps, true, &mut |u, q, t| {
        sol.push_row(u, q.to_vec(), t.to_vec())
    });
    match res? {
        RunEnd::Reached => {
            if sol.breakpoints.len() < 2 {
                // horizon shorter than the merge window
                sol.breakpoints.push(horizon);
                sol.q.push(runner.q.clone());
                sol.t.push(runner.t.clone());
            }
            Ok(sol)
        }
        RunEnd::EventCap => Err(Error::EventCap {
            events: runner.events,
            partial: Box::new(sol),
        }),
    }
}
