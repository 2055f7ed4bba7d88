//! The fluid-tracking policy and its restart supervisor.
//!
//! A plan fixes, for every interval of a grid of spacing `delta * n`, how long
//! each station should work on each class. The allocations are read off a
//! divergent fluid solution started from the current queue vector, after its
//! boundary phases have been straightened, so a policy that follows the plan
//! drags the stochastic network along a linearly growing fluid path.

mod plan;
mod policy;
mod supervisor;

pub use plan::{
    build_allocation_plan, delta_default, delta_for_theta, paper_theta, AllocationPlan, DeltaBound,
    DeltaChoice, PlanMode, DEFAULT_PRACTICAL_CAP,
};
pub use policy::{tracker_policy, TrackerPolicy};
pub use supervisor::{
    supervisor_run, EpochLog, EpochRecord, InductionReport, PlanSource, SupervisorConfig,
    SupervisorOutcome,
};

#[cfg(test)]
mod tests;
