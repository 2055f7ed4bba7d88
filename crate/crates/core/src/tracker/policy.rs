use std::sync::Arc;

use super::AllocationPlan;
use crate::sim::{Decision, Policy, SimView};

/// Budgets below this fraction of an interval count as spent.
const SPENT: f64 = 1e-9;

/// Follows an [`AllocationPlan`] whose time 0 is `offset` on the simulation
/// clock.
///
/// Within interval `m` each station walks its class order once: it serves the
/// current class until the class's allocation for the interval is spent or
/// the class empties, then moves on for good. Time left after the walk goes
/// to the lowest-indexed nonempty class. Budgets reset at every grid time.
/// After the last grid time the policy keeps only the leftover rule.
#[derive(Debug, Clone)]
pub struct TrackerPolicy {
    plan: Arc<AllocationPlan>,
    offset: f64,
    interval: Option<usize>,
    budget: Vec<f64>,
    cursor: Vec<usize>,
    /// Class each station serves under its allocation, if any.
    nominal: Vec<Option<usize>>,
    usage: Vec<Vec<f64>>,
}

impl TrackerPolicy {
    pub fn new(plan: Arc<AllocationPlan>, offset: f64) -> Self {
        let d = plan.q.len();
        let stations = plan.order.len();
        let intervals = plan.intervals();
        TrackerPolicy {
            plan,
            offset,
            interval: None,
            budget: vec![0.0; d],
            cursor: vec![0; stations],
            nominal: vec![None; stations],
            usage: vec![vec![0.0; d]; intervals],
        }
    }

    pub fn plan(&self) -> &AllocationPlan {
        &self.plan
    }

    /// Time each class was served against its allocation, per interval.
    pub fn nominal_usage(&self) -> &[Vec<f64>] {
        &self.usage
    }

    /// Interval containing local time `t`, `None` past the grid.
    fn locate(&self, t: f64) -> Option<usize> {
        let g = &self.plan.grid;
        let m = g.partition_point(|&x| x <= t);
        (m >= 1 && m < g.len()).then(|| m - 1)
    }

    fn leftover(view: &SimView, station: usize) -> Option<usize> {
        view.waiting(station).next()
    }
}

impl Policy for TrackerPolicy {
    fn name(&self) -> String {
        "tracker".into()
    }

    fn decide(&mut self, view: &SimView) -> Decision {
        let local = view.now - self.offset;
        let m = self.locate(local);
        if m != self.interval {
            self.interval = m;
            if let Some(m) = m {
                self.budget.copy_from_slice(&self.plan.allocations[m]);
            }
            self.cursor.iter_mut().for_each(|c| *c = 0);
        }
        let spent = SPENT * self.plan.interval_length();
        let mut serve = Vec::with_capacity(self.plan.order.len());
        let mut wakeup = m.map(|m| self.plan.grid[m + 1] + self.offset);
        for (s, order) in self.plan.order.iter().enumerate() {
            self.nominal[s] = None;
            if m.is_some() {
                while let Some(&k) = order.get(self.cursor[s]) {
                    if self.budget[k] > spent && view.len(k) > 0 {
                        break;
                    }
                    self.cursor[s] += 1;
                }
                if let Some(&k) = order.get(self.cursor[s]) {
                    self.nominal[s] = Some(k);
                    let done = view.now + self.budget[k];
                    wakeup = Some(wakeup.map_or(done, |w: f64| w.min(done)));
                    serve.push(Some(k));
                    continue;
                }
            }
            serve.push(Self::leftover(view, s));
        }
        Decision { serve, wakeup }
    }

    fn advance(&mut self, _now: f64, dt: f64, _serve: &[Option<usize>]) {
        if let Some(m) = self.interval {
            for k in self.nominal.iter().flatten() {
                self.budget[*k] -= dt;
                self.usage[m][*k] += dt;
            }
        }
    }
}

/// A tracker for `plan` starting at simulation time 0.
pub fn tracker_policy(plan: Arc<AllocationPlan>) -> TrackerPolicy {
    TrackerPolicy::new(plan, 0.0)
}
