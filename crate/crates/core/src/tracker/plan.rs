use serde::{Deserialize, Serialize};

use crate::divergence::{build_divergent, gamma_of_witness, Witness};
use crate::error::{Error, Result};
use crate::fdp::fdp_decompose;
use crate::fluid::FluidSolution;
use crate::network::{norm1, Constants, Network};

/// Default maximum number of grid intervals per plan.
pub const DEFAULT_PRACTICAL_CAP: usize = 10_000;

/// Relative slack for the per-interval feasibility check.
const FEASIBILITY_TOL: f64 = 1e-9;

/// How the horizon multiplier `theta` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    /// `theta = max(1, 3 / gamma)`; requires two stations.
    Strict,
    /// `theta` is the first time (per unit of `||q||`) at which the planned
    /// fluid reaches `3 ||q||`, capped by the strict value.
    Practical,
}

/// Which constraint fixed the grid constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaBound {
    /// The strict value fits under the interval cap and is used as is.
    Strict,
    /// The strict value would need more intervals than the cap allows; the
    /// cap-derived value is applied instead.
    PracticalCap,
}

/// Grid constant candidates and the value applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaChoice {
    /// `log10` of `min(gamma / C, 1) / (12 C^(M+3))`, which underflows as a
    /// plain float for realistic `C` and `M`.
    pub strict_log10: f64,
    /// `theta / cap`.
    pub practical: f64,
    pub applied: f64,
    pub bound: DeltaBound,
}

impl DeltaChoice {
    /// The strict value as a float (may be zero after underflow).
    pub fn strict(&self) -> f64 {
        10f64.powf(self.strict_log10)
    }
}

/// `max(1, 3 / gamma)`.
pub fn paper_theta(gamma: f64) -> f64 {
    (3.0 / gamma).max(1.0)
}

/// Grid constant for a given `theta`: the strict bound when it needs at most
/// `practical_cap` intervals, the cap-derived `theta / practical_cap`
/// otherwise.
pub fn delta_for_theta(c: &Constants, pieces: usize, gamma: f64, theta: f64, practical_cap: usize) -> DeltaChoice {
    let cb = c.c_big;
    let strict_log10 = -(12f64.log10()) - (pieces as f64 + 3.0) * cb.log10() + (gamma / cb).min(1.0).log10();
    let practical = theta / practical_cap.max(1) as f64;
    let (applied, bound) = if strict_log10 >= practical.log10() {
        (10f64.powf(strict_log10), DeltaBound::Strict)
    } else {
        (practical, DeltaBound::PracticalCap)
    };
    DeltaChoice {
        strict_log10,
        practical,
        applied,
        bound,
    }
}

/// [`delta_for_theta`] with `theta = max(1, 3 / gamma)`.
pub fn delta_default(c: &Constants, pieces: usize, gamma: f64, practical_cap: usize) -> DeltaChoice {
    delta_for_theta(c, pieces, gamma, paper_theta(gamma), practical_cap)
}

/// Interval-by-interval service allocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub mode: PlanMode,
    pub q: Vec<f64>,
    /// `||q||`.
    pub n: f64,
    /// Divergence rate the plan was derived for, when known.
    pub gamma: Option<f64>,
    pub theta: f64,
    /// `theta * n`.
    pub theta0: f64,
    pub delta: DeltaChoice,
    /// Number of decomposition pieces, when a decomposition was made.
    pub pieces: Option<usize>,
    /// Cut times of the decomposition (`[0, end]` without one).
    pub segment_starts: Vec<f64>,
    /// `t_m = m delta n` for `m = 0..=ceil(theta / delta)`.
    pub grid: Vec<f64>,
    /// Per interval and class, the fluid busy time on `[t_m, t_(m+1)]`.
    pub allocations: Vec<Vec<f64>>,
    /// Fluid queue at each grid time.
    pub grid_q: Vec<Vec<f64>>,
    /// Per station, the order in which classes use their allocations.
    pub order: Vec<Vec<usize>>,
    /// `||Q(theta0)||` of the planned fluid.
    pub target: f64,
}

impl AllocationPlan {
    /// Samples `fluid` (which must start at 0 in state `q`) on the grid
    /// `m * delta * n`, `m = 0..=ceil(theta / delta)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fluid(
        net: &Network,
        fluid: &FluidSolution,
        mode: PlanMode,
        gamma: Option<f64>,
        theta: f64,
        delta: DeltaChoice,
        pieces: Option<usize>,
        segment_starts: Vec<f64>,
    ) -> Result<Self> {
        let q = fluid.q[0].clone();
        let n = norm1(&q);
        if q.len() != net.classes() {
            return Err(Error::Dimension(format!(
                "fluid has {} classes, network has {}",
                q.len(),
                net.classes()
            )));
        }
        if fluid.start() != 0.0 || !(n > 0.0) || !(theta > 0.0) || !(delta.applied > 0.0) {
            return Err(Error::InvalidArgument(
                "plan needs a fluid starting at 0 from a nonzero state, theta > 0 and delta > 0".into(),
            ));
        }
        let step = delta.applied * n;
        let intervals = (theta / delta.applied - 1e-9).ceil().max(1.0) as usize;
        let grid: Vec<f64> = (0..=intervals).map(|m| m as f64 * step).collect();
        let t_end = grid[intervals];
        if t_end > fluid.end() * (1.0 + 1e-12) {
            return Err(Error::PlanMismatch(format!(
                "grid ends at {t_end}, fluid ends at {}",
                fluid.end()
            )));
        }
        let at = |t: f64| t.min(fluid.end());
        let mut grid_q = Vec::with_capacity(grid.len());
        let mut grid_t = Vec::with_capacity(grid.len());
        for &t in &grid {
            grid_q.push(fluid.q_at(at(t))?);
            grid_t.push(fluid.t_at(at(t))?);
        }
        let allocations = (0..intervals)
            .map(|m| (0..q.len()).map(|k| (grid_t[m + 1][k] - grid_t[m][k]).max(0.0)).collect())
            .collect();
        let theta0 = theta * n;
        let plan = AllocationPlan {
            mode,
            n,
            gamma,
            theta,
            theta0,
            delta,
            pieces,
            segment_starts,
            target: norm1(&fluid.q_at(at(theta0))?),
            grid,
            allocations,
            grid_q,
            order: (0..net.stations()).map(|s| net.station_classes(s).to_vec()).collect(),
            q,
        };
        plan.check(net)?;
        Ok(plan)
    }

    pub fn intervals(&self) -> usize {
        self.allocations.len()
    }

    pub fn interval_length(&self) -> f64 {
        self.delta.applied * self.n
    }

    pub fn end(&self) -> f64 {
        *self.grid.last().expect("nonempty grid")
    }

    /// Decomposition piece containing grid time `m` (0-based).
    pub fn segment_of(&self, m: usize) -> usize {
        let t = self.grid[m];
        let last = self.segment_starts.len().saturating_sub(2);
        self.segment_starts.partition_point(|&s| s <= t).saturating_sub(1).min(last)
    }

    /// Checks the grid spacing and that no station is allocated more than the
    /// interval length.
    pub fn check(&self, net: &Network) -> Result<()> {
        let step = self.interval_length();
        for (m, w) in self.grid.windows(2).enumerate() {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0) || self.grid[m] != m as f64 * step {
                return Err(Error::PlanMismatch(format!("grid point {m} is off the delta * n lattice")));
            }
        }
        for (m, alloc) in self.allocations.iter().enumerate() {
            if alloc.len() != net.classes() {
                return Err(Error::Dimension("allocation row width".into()));
            }
            for s in 0..net.stations() {
                let used: f64 = net.station_classes(s).iter().map(|&k| alloc[k]).sum();
                if used > step * (1.0 + FEASIBILITY_TOL) + FEASIBILITY_TOL {
                    return Err(Error::PlanMismatch(format!(
                        "interval {m}: station {s} allocated {used} > {step}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks that `fluid` is the solution this plan was sampled from: same
    /// initial state, queue at every grid time and busy time on every
    /// interval within `tol`.
    pub fn matches(&self, fluid: &FluidSolution, tol: f64) -> Result<()> {
        if fluid.q.is_empty() || fluid.q[0] != self.q {
            return Err(Error::PlanMismatch("initial state differs".into()));
        }
        if fluid.end() < self.end() * (1.0 - 1e-12) {
            return Err(Error::PlanMismatch("fluid shorter than the plan grid".into()));
        }
        let step = self.interval_length();
        let mut prev = fluid.t_at(0.0)?;
        for m in 0..self.grid.len() {
            let t = (m as f64 * step).min(fluid.end());
            if (self.grid[m] - m as f64 * step).abs() > 0.0 {
                return Err(Error::PlanMismatch(format!("grid point {m} disagrees with delta")));
            }
            let fq = fluid.q_at(t)?;
            if fq.iter().zip(&self.grid_q[m]).any(|(a, b)| (a - b).abs() > tol) {
                return Err(Error::PlanMismatch(format!("queue differs at grid point {m}")));
            }
            if m > 0 {
                let ft = fluid.t_at(t)?;
                let bad = (0..ft.len()).any(|k| (ft[k] - prev[k] - self.allocations[m - 1][k]).abs() > tol);
                if bad {
                    return Err(Error::PlanMismatch(format!("allocation differs on interval {}", m - 1)));
                }
                prev = ft;
            }
        }
        Ok(())
    }
}

/// First time at which `||Q||` reaches `level` (the norm is linear on each
/// segment).
fn first_crossing(sol: &FluidSolution, level: f64) -> Option<f64> {
    let norms: Vec<f64> = (0..sol.breakpoints.len()).map(|k| sol.norm_at_breakpoint(k)).collect();
    if norms[0] >= level {
        return Some(sol.start());
    }
    for k in 1..norms.len() {
        if norms[k] >= level {
            let (a, b) = (norms[k - 1], norms[k]);
            let (u0, u1) = (sol.breakpoints[k - 1], sol.breakpoints[k]);
            let w = ((level - a) / (b - a)).clamp(0.0, 1.0);
            return Some((u0 + w * (u1 - u0)).min(u1));
        }
    }
    None
}

/// Builds the plan from state `q`: the divergent solution from `q`, its
/// decomposition (two-station networks), and the grid sampling.
///
/// `delta_override` replaces the computed grid constant.
pub fn build_allocation_plan(
    net: &Network,
    witness: &Witness,
    q: &[f64],
    mode: PlanMode,
    practical_cap: usize,
    delta_override: Option<f64>,
) -> Result<(AllocationPlan, FluidSolution)> {
    let n = norm1(q);
    if !(n >= 1.0) {
        return Err(Error::InvalidArgument(format!("plan needs ||q|| >= 1, got {n}")));
    }
    let two = net.stations() == 2;
    if mode == PlanMode::Strict && !two {
        return Err(Error::NotTwoStations(net.stations()));
    }
    let cert = gamma_of_witness(net, witness);
    let strict_theta = paper_theta(cert.gamma);
    let theta = match mode {
        PlanMode::Strict => strict_theta,
        PlanMode::Practical => {
            // the replayed witness alone reaches 2^k ||Q_w(1)|| by time 2^(k+1)
            let k = (3.0 * n / cert.end_norm).log2().ceil().max(0.0);
            let horizon = 2f64.powf(k + 1.0).min(strict_theta * n).max(1.0);
            let sol = build_divergent(net, witness, q, horizon)?;
            let hit = first_crossing(&sol, 3.0 * n).unwrap_or(horizon);
            (hit / n).min(strict_theta)
        }
    };
    // the piece count needs the decomposition, which needs the grid end;
    // more pieces only shrink delta, so the fluid is built far enough for
    // the single-piece value and delta is fixed afterwards
    let probe = delta_for_theta(net.constants(), 1, cert.gamma, theta, practical_cap);
    if let Some(d) = delta_override {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {d}")));
        }
    }
    let widest = probe.applied.max(delta_override.unwrap_or(0.0));
    let end = ((theta + widest) * n * (1.0 + 1e-9)).max(1.0);
    let sol = build_divergent(net, witness, q, end)?;
    let (fluid, pieces, cuts) = if two {
        let dec = fdp_decompose(net, &sol)?;
        let m = dec.pieces();
        (dec.modified, Some(m), dec.cut_times)
    } else {
        let e = sol.end();
        (sol, None, vec![0.0, e])
    };
    let mut delta = delta_for_theta(net.constants(), pieces.unwrap_or(1), cert.gamma, theta, practical_cap);
    if let Some(d) = delta_override {
        delta.applied = d;
    }
    let plan = AllocationPlan::from_fluid(net, &fluid, mode, Some(cert.gamma), theta, delta, pieces, cuts)?;
    Ok((plan, fluid))
}
