use std::cell::Cell;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{build_allocation_plan, AllocationPlan, DeltaBound, DeltaChoice, PlanMode, TrackerPolicy};
use crate::divergence::Witness;
use crate::error::{Error, Result};
use crate::fluid::{simulate_priority_fluid, FluidSolution, PriorityOrder};
use crate::network::Network;
use crate::sim::{builtin_policy, PolicyKind, RunStatus, SimConfig, SimState, SimTrace, SimView, Simulator};

/// Where the supervisor gets its fluid plans from.
#[derive(Debug, Clone)]
pub enum PlanSource<'a> {
    /// Divergent solutions built from an instability witness.
    Witness { witness: &'a Witness, mode: PlanMode },
    /// The static-priority fluid from the current state over
    /// `theta * ||q||`; useful on networks without a witness.
    PriorityFluid { order: PriorityOrder, theta: f64 },
}

impl PlanSource<'_> {
    /// Plans from state `q` together with the fluid it was sampled from.
    pub fn plan(
        &self,
        net: &Network,
        q: &[f64],
        practical_cap: usize,
        delta_override: Option<f64>,
    ) -> Result<(AllocationPlan, FluidSolution)> {
        match self {
            PlanSource::Witness { witness, mode } => {
                build_allocation_plan(net, witness, q, *mode, practical_cap, delta_override)
            }
            PlanSource::PriorityFluid { order, theta } => {
                let n: f64 = q.iter().sum();
                let practical = theta / practical_cap.max(1) as f64;
                let applied = delta_override.unwrap_or(practical);
                let horizon = (theta + applied) * n * (1.0 + 1e-9);
                let fluid = simulate_priority_fluid(net, order, q, horizon)?;
                let delta = DeltaChoice {
                    strict_log10: f64::NEG_INFINITY,
                    practical,
                    applied,
                    bound: DeltaBound::PracticalCap,
                };
                let end = fluid.end();
                let plan =
                    AllocationPlan::from_fluid(net, &fluid, PlanMode::Practical, None, *theta, delta, None, vec![0.0, end])?;
                Ok((plan, fluid))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SupervisorConfig {
    /// Mass at which tracking (re)starts.
    pub n0: u64,
    /// Required growth per epoch.
    pub growth_factor: f64,
    pub max_epochs: usize,
    /// Policy used between a failed epoch and the next restart.
    pub fallback: PolicyKind,
    pub practical_cap: usize,
    pub delta_override: Option<f64>,
    pub sim: SimConfig,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        SupervisorConfig {
            n0: 50,
            growth_factor: 2.0,
            max_epochs: 64,
            fallback: PolicyKind::StaticPriority(None),
            practical_cap: super::DEFAULT_PRACTICAL_CAP,
            delta_override: None,
            sim: SimConfig::default(),
        }
    }
}

impl SupervisorConfig {
    fn check(&self) -> Result<()> {
        if self.n0 < 1 || !(self.growth_factor > 1.0) || self.practical_cap == 0 {
            return Err(Error::InvalidArgument(
                "supervisor needs n0 >= 1, growth factor > 1 and a positive interval cap".into(),
            ));
        }
        Ok(())
    }
}

/// One tracking epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Restart count; epochs of one chain follow each other without fallback.
    pub chain: usize,
    /// Position within the chain.
    pub index: usize,
    pub chain_start: f64,
    pub start: f64,
    pub end: f64,
    pub theta: f64,
    pub delta: f64,
    pub intervals: usize,
    pub pieces: Option<usize>,
    /// Planned fluid mass at the epoch end.
    pub target: f64,
    pub start_mass: u64,
    pub end_mass: u64,
    /// Smallest total queue seen during the epoch.
    pub trough: u64,
    /// `(start_mass / 4) min(gamma / C, 1)`.
    pub trough_floor: f64,
    /// The same with `max` in place of `min`, for reporting.
    pub trough_floor_max_form: f64,
    pub doubled: bool,
    pub trough_ok: bool,
    pub success: bool,
    /// False when the horizon cut the epoch short.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epochs: Vec<EpochRecord>,
    /// `[start, end]` of every fallback period.
    pub fallback: Vec<(f64, f64)>,
    pub n0: u64,
    pub growth_factor: f64,
    pub c_big: f64,
    /// Set when `max_epochs` stopped the run.
    pub truncated: bool,
}

/// Outcome of the exact induction check on logged epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InductionReport {
    /// Epochs lying on all-success chain prefixes.
    pub checked: usize,
    pub passed: bool,
    /// Smallest `(mass / elapsed) * Theta` seen, `Theta` being the largest
    /// horizon multiplier used so far on the chain; at least 1 when passed.
    pub worst_margin: f64,
}

impl EpochLog {
    /// Checks `||Q(theta_m)|| / (theta_m - chain start) >= 1 / Theta` on
    /// every all-success chain prefix, comparing `mass * Theta` with the
    /// elapsed time directly.
    pub fn induction_check(&self) -> InductionReport {
        let mut rep = InductionReport {
            checked: 0,
            passed: true,
            worst_margin: f64::INFINITY,
        };
        let mut chain = usize::MAX;
        let mut alive = false;
        let mut big_theta: f64 = 0.0;
        for e in &self.epochs {
            if e.chain != chain {
                chain = e.chain;
                alive = true;
                big_theta = 0.0;
            }
            if !(alive && e.success && e.complete) {
                alive = false;
                continue;
            }
            big_theta = big_theta.max(e.theta);
            let elapsed = e.end - e.chain_start;
            let lhs = e.end_mass as f64 * big_theta;
            rep.checked += 1;
            rep.worst_margin = rep.worst_margin.min(lhs / elapsed);
            if lhs < elapsed {
                rep.passed = false;
            }
        }
        rep
    }

    /// Whether the first epoch of the first chain doubled.
    pub fn first_epoch_success(&self) -> Option<bool> {
        self.epochs.first().filter(|e| e.complete).map(|e| e.success)
    }

    /// Summary table `epoch,chain,start,end,start_mass,end_mass,target,trough,success`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record(["epoch", "chain", "start", "end", "start_mass", "end_mass", "target", "trough", "success"])
            .map_err(csv_err)?;
        for (i, e) in self.epochs.iter().enumerate() {
            w.write_record([
                i.to_string(),
                e.chain.to_string(),
                e.start.to_string(),
                e.end.to_string(),
                e.start_mass.to_string(),
                e.end_mass.to_string(),
                e.target.to_string(),
                e.trough.to_string(),
                e.success.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ascii"))
    }
}

#[derive(Debug, Clone)]
pub struct SupervisorOutcome {
    pub trace: SimTrace,
    pub log: EpochLog,
}

/// Runs chains of tracking epochs: epoch `i` plans from the current state,
/// lasts `theta ||Q(theta_(i-1))||`, and succeeds when the mass grew by the
/// growth factor and never fell below the trough floor. After a failure the
/// fallback policy runs until the mass reaches `n0`, then a new chain starts.
pub fn supervisor_run(
    net: &Network,
    source: &PlanSource,
    state0: &SimState,
    cfg: &SupervisorConfig,
    horizon: f64,
    seed: u64,
) -> Result<SupervisorOutcome> {
    cfg.check()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let mut sim = Simulator::new(net, state0, seed, cfg.sim)?;
    let mut fallback = builtin_policy(net, &cfg.fallback)?;
    let c_big = net.constants().c_big;
    let mut log = EpochLog {
        epochs: Vec::new(),
        fallback: Vec::new(),
        n0: cfg.n0,
        growth_factor: cfg.growth_factor,
        c_big,
        truncated: false,
    };
    let mut chain = 0;
    'run: while sim.now() < horizon {
        if sim.total_queue() < cfg.n0 {
            let start = sim.now();
            let n0 = cfg.n0;
            let reached = |v: &SimView| v.total_len() as u64 >= n0;
            let status = sim.run_until(fallback.as_mut(), horizon, Some(&reached))?;
            log.fallback.push((start, sim.now()));
            sim.record();
            if status == RunStatus::Reached {
                break;
            }
        }
        let chain_start = sim.now();
        for index in 0.. {
            if log.epochs.len() >= cfg.max_epochs {
                log.truncated = true;
                break 'run;
            }
            let q: Vec<f64> = sim.queue().iter().map(|&x| x as f64).collect();
            let start_mass = sim.total_queue();
            let (plan, _) = source.plan(net, &q, cfg.practical_cap, cfg.delta_override)?;
            let plan = Arc::new(plan);
            let start = sim.now();
            let end = start + plan.theta0;
            let mut tracker = TrackerPolicy::new(plan.clone(), start);
            let trough = Cell::new(start_mass);
            let watch = |v: &SimView| {
                trough.set(trough.get().min(v.total_len() as u64));
                false
            };
            sim.run_until(&mut tracker, end.min(horizon), Some(&watch))?;
            sim.record();
            let end_mass = sim.total_queue();
            let ratio = plan.gamma.map_or(0.0, |g| g / c_big);
            let trough_floor = start_mass as f64 / 4.0 * ratio.min(1.0);
            let trough_floor_max_form = start_mass as f64 / 4.0 * ratio.max(1.0);
            let doubled = end_mass as f64 >= cfg.growth_factor * start_mass as f64;
            let trough_ok = trough.get() as f64 >= trough_floor;
            let complete = sim.now() >= end;
            let success = complete && doubled && trough_ok;
            log.epochs.push(EpochRecord {
                chain,
                index,
                chain_start,
                start,
                end: sim.now(),
                theta: plan.theta,
                delta: plan.delta.applied,
                intervals: plan.intervals(),
                pieces: plan.pieces,
                target: plan.target,
                start_mass,
                end_mass,
                trough: trough.get(),
                trough_floor,
                trough_floor_max_form,
                doubled,
                trough_ok,
                success,
                complete,
            });
            if !complete {
                break 'run;
            }
            if !success {
                break;
            }
        }
        chain += 1;
    }
    Ok(SupervisorOutcome {
        trace: sim.into_trace(),
        log,
    })
}
