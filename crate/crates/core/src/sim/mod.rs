//! Discrete-event simulation of multitype networks under head-of-line,
//! preemptive-resume, non-idling policies.
//!
//! Every primitive sequence (each type's interarrival times, each class's
//! service times) has its own seeded random stream, so two policies run with
//! the same seed see the same arrivals and the same `r`-th service time of
//! every class.

mod io;
pub mod policy;
mod verify;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

pub use policy::{builtin_policy, Decision, Fifo, Gfifo, Job, Lifo, Policy, PolicyKind, SimView, StaticPriority};
pub use verify::{verify_trace, TraceReport, TraceViolation, TraceViolationKind};

/// Default cap on arrivals plus completions per run.
pub const DEFAULT_EVENT_BUDGET: u64 = 100_000_000;

/// Relative tolerance for floating-point bookkeeping identities.
pub const BOOKKEEPING_TOL: f64 = 1e-9;

/// Stream label offset separating service streams from arrival streams.
const SERVICE_STREAM: u64 = 1 << 32;

/// Initial state `(q, z1, z2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: Vec<u64>,
    /// Residual interarrival time per type; `None` draws fresh ones.
    pub z1: Option<Vec<f64>>,
    /// Residual service of the head job per class, for jobs already in
    /// service; `None` means the head job has not started.
    pub z2: Vec<Option<f64>>,
}

impl SimState {
    pub fn empty(net: &Network) -> Self {
        Self::with_queue(vec![0; net.classes()])
    }

    pub fn with_queue(q: Vec<u64>) -> Self {
        let d = q.len();
        SimState {
            q,
            z1: None,
            z2: vec![None; d],
        }
    }

    fn check(&self, net: &Network) -> Result<()> {
        let d = net.classes();
        if self.q.len() != d || self.z2.len() != d {
            return Err(Error::Dimension(format!(
                "state has {} queues and {} residuals for {d} classes",
                self.q.len(),
                self.z2.len()
            )));
        }
        if let Some(z1) = &self.z1 {
            if z1.len() != net.types() {
                return Err(Error::Dimension(format!(
                    "{} interarrival residuals for {} types",
                    z1.len(),
                    net.types()
                )));
            }
            if z1.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
                return Err(Error::InvalidArgument("z1 must be finite and >= 0".into()));
            }
        }
        for (k, z) in self.z2.iter().enumerate() {
            if let Some(z) = z {
                if !(z.is_finite() && *z > 0.0) || self.q[k] == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "class {k}: residual service needs a positive value and a waiting job"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Spacing of trace samples.
    pub sample_dt: f64,
    pub event_budget: u64,
    pub log_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sample_dt: 1.0,
            event_budget: DEFAULT_EVENT_BUDGET,
            log_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EventKind {
    Arrival { ty: usize },
    Completion { class: usize },
    Preemption { class: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Sampled path of a simulation run.
///
/// Row `s` holds the state right after all events at `times[s]`. `qmin`
/// holds, per station, the smallest station queue seen on
/// `[times[s-1], times[s]]` (row 0: the initial level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub seed: u64,
    pub policy: String,
    pub times: Vec<f64>,
    pub q: Vec<Vec<u64>>,
    pub a: Vec<Vec<u64>>,
    pub d: Vec<Vec<u64>>,
    pub t: Vec<Vec<f64>>,
    pub qmin: Vec<Vec<u64>>,
    pub events: Vec<EventRecord>,
    pub event_count: u64,
    /// Largest relative gap between accumulated and sampled service time of
    /// a completed job.
    pub residual_max_err: f64,
    /// Largest relative gap between busy time and the sum of completed
    /// service times at a completion.
    pub counting_max_err: f64,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn total_queue(&self, s: usize) -> u64 {
        self.q[s].iter().sum()
    }

    pub fn final_queue(&self) -> &[u64] {
        self.q.last().map_or(&[], Vec::as_slice)
    }
}

/// Whether a run reached its end time or was stopped by its predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Reached,
    Stopped,
}

/// Resumable simulation engine. Policies can be swapped between calls to
/// [`Simulator::run_until`]; the trace keeps growing.
pub struct Simulator<'a> {
    net: &'a Network,
    cfg: SimConfig,
    arr_rng: Vec<ChaCha8Rng>,
    svc_rng: Vec<ChaCha8Rng>,
    now: f64,
    buffers: Vec<VecDeque<Job>>,
    started: Vec<bool>,
    residual: Vec<f64>,
    /// Sampled service of the head job, NaN when it started before time 0.
    sampled: Vec<f64>,
    acc: Vec<f64>,
    counting_ok: Vec<bool>,
    sum_service: Vec<f64>,
    next_arrival: Vec<f64>,
    cum_a: Vec<u64>,
    cum_d: Vec<u64>,
    cum_t: Vec<f64>,
    serving: Vec<Option<usize>>,
    seq: u64,
    next_sample: u64,
    window_min: Vec<u64>,
    trace: SimTrace,
}

impl<'a> Simulator<'a> {
    pub fn new(net: &'a Network, state0: &SimState, seed: u64, cfg: SimConfig) -> Result<Self> {
        state0.check(net)?;
        if !(cfg.sample_dt > 0.0 && cfg.sample_dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample spacing must be positive, got {}",
                cfg.sample_dt
            )));
        }
        let d = net.classes();
        let stream = |label: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(label);
            r
        };
        let mut arr_rng: Vec<ChaCha8Rng> = (0..net.types()).map(|i| stream(i as u64)).collect();
        let svc_rng = (0..d).map(|k| stream(SERVICE_STREAM + k as u64)).collect();
        let next_arrival = match &state0.z1 {
            Some(z) => z.clone(),
            None => (0..net.types())
                .map(|i| net.arrival_dist(i).sample(&mut arr_rng[i]))
                .collect(),
        };
        let mut seq = 0;
        let mut buffers = vec![VecDeque::new(); d];
        for (k, buf) in buffers.iter_mut().enumerate() {
            for _ in 0..state0.q[k] {
                buf.push_back(Job {
                    entry: 0.0,
                    arrived: 0.0,
                    seq,
                });
                seq += 1;
            }
        }
        let started: Vec<bool> = state0.z2.iter().map(Option::is_some).collect();
        let residual = state0.z2.iter().map(|z| z.unwrap_or(0.0)).collect();
        let window_min = (0..net.stations())
            .map(|s| net.station_classes(s).iter().map(|&k| state0.q[k]).sum())
            .collect::<Vec<u64>>();
        let trace = SimTrace {
            seed,
            policy: String::new(),
            times: vec![0.0],
            q: vec![state0.q.clone()],
            a: vec![vec![0; net.types()]],
            d: vec![vec![0; d]],
            t: vec![vec![0.0; d]],
            qmin: vec![window_min.clone()],
            events: Vec::new(),
            event_count: 0,
            residual_max_err: 0.0,
            counting_max_err: 0.0,
        };
        Ok(Simulator {
            net,
            cfg,
            arr_rng,
            svc_rng,
            now: 0.0,
            buffers,
            counting_ok: started.iter().map(|s| !s).collect(),
            started,
            residual,
            sampled: vec![f64::NAN; d],
            acc: vec![0.0; d],
            sum_service: vec![0.0; d],
            next_arrival,
            cum_a: vec![0; net.types()],
            cum_d: vec![0; d],
            cum_t: vec![0.0; d],
            serving: vec![None; net.stations()],
            seq,
            next_sample: 1,
            window_min,
            trace,
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn queue(&self) -> Vec<u64> {
        self.buffers.iter().map(|b| b.len() as u64).collect()
    }

    pub fn total_queue(&self) -> u64 {
        self.buffers.iter().map(|b| b.len() as u64).sum()
    }

    pub fn trace(&self) -> &SimTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SimTrace {
        self.trace
    }

    fn station_level(&self, s: usize) -> u64 {
        self.net
            .station_classes(s)
            .iter()
            .map(|&k| self.buffers[k].len() as u64)
            .sum()
    }

    /// Appends a sample at the current time (no-op if one already exists).
    pub fn record(&mut self) {
        if self.trace.times.last() == Some(&self.now) {
            return;
        }
        self.trace.times.push(self.now);
        self.trace.q.push(self.queue());
        self.trace.a.push(self.cum_a.clone());
        self.trace.d.push(self.cum_d.clone());
        self.trace.t.push(self.cum_t.clone());
        self.trace.qmin.push(self.window_min.clone());
        for s in 0..self.net.stations() {
            self.window_min[s] = self.station_level(s);
        }
    }

    fn sample_time(&self) -> f64 {
        self.next_sample as f64 * self.cfg.sample_dt
    }

    fn check_decision(&self, dec: &Decision) -> Result<()> {
        if dec.serve.len() != self.net.stations() {
            return Err(Error::Dimension(format!(
                "decision covers {} stations, network has {}",
                dec.serve.len(),
                self.net.stations()
            )));
        }
        for (s, choice) in dec.serve.iter().enumerate() {
            match *choice {
                None => {
                    if self.station_level(s) > 0 {
                        return Err(Error::NonIdling {
                            station: s,
                            time: self.now,
                        });
                    }
                }
                Some(k) => {
                    if k >= self.net.classes()
                        || self.net.class(k).station != s
                        || self.buffers[k].is_empty()
                    {
                        return Err(Error::InvalidClass {
                            station: s,
                            class: k,
                            time: self.now,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn log(&mut self, kind: EventKind) {
        if self.cfg.log_events {
            self.trace.events.push(EventRecord {
                time: self.now,
                kind,
            });
        }
    }

    fn count_event(&mut self) -> Result<()> {
        self.trace.event_count += 1;
        if self.trace.event_count > self.cfg.event_budget {
            return Err(Error::EventBudget(self.cfg.event_budget));
        }
        Ok(())
    }

    fn arrive(&mut self, ty: usize) -> Result<()> {
        let k = self.net.first_class(ty);
        self.buffers[k].push_back(Job {
            entry: self.now,
            arrived: self.now,
            seq: self.seq,
        });
        self.seq += 1;
        self.cum_a[ty] += 1;
        let gap = self.net.arrival_dist(ty).sample(&mut self.arr_rng[ty]);
        self.next_arrival[ty] = self.now + gap;
        self.log(EventKind::Arrival { ty });
        self.count_event()
    }

    fn complete(&mut self, k: usize) -> Result<()> {
        let job = self.buffers[k].pop_front().expect("served class is nonempty");
        let s = self.sampled[k];
        if s.is_nan() {
            // job was in service before time 0; its full service is unknown
            self.counting_ok[k] = false;
        } else {
            let err = (self.acc[k] - s).abs() / s.max(1.0);
            self.trace.residual_max_err = self.trace.residual_max_err.max(err);
            self.sum_service[k] += s;
            if self.counting_ok[k] {
                let err = (self.sum_service[k] - self.cum_t[k]).abs() / self.cum_t[k].max(1.0);
                self.trace.counting_max_err = self.trace.counting_max_err.max(err);
            }
        }
        self.started[k] = false;
        self.residual[k] = 0.0;
        self.cum_d[k] += 1;
        if let Some(next) = self.net.class(k).next {
            self.buffers[next].push_back(Job {
                arrived: self.now,
                ..job
            });
        }
        self.log(EventKind::Completion { class: k });
        self.count_event()
    }

    /// Runs until time `until`, or until `stop` returns true (checked before
    /// every decision).
    pub fn run_until(
        &mut self,
        policy: &mut dyn Policy,
        until: f64,
        stop: Option<&dyn Fn(&SimView) -> bool>,
    ) -> Result<RunStatus> {
        if self.trace.policy.is_empty() {
            self.trace.policy = policy.name();
        } else if !self.trace.policy.ends_with(&policy.name()) {
            self.trace.policy = format!("{}>{}", self.trace.policy, policy.name());
        }
        let stations = self.net.stations();
        loop {
            let view = SimView {
                now: self.now,
                net: self.net,
                buffers: &self.buffers,
                started: &self.started,
            };
            if let Some(f) = stop {
                if f(&view) {
                    return Ok(RunStatus::Stopped);
                }
            }
            if self.now >= until {
                return Ok(RunStatus::Reached);
            }
            let dec = policy.decide(&view);
            self.check_decision(&dec)?;
            for s in 0..stations {
                let new = dec.serve[s];
                if let Some(old) = self.serving[s] {
                    if new != Some(old) && self.started[old] && self.residual[old] > 0.0 {
                        self.log(EventKind::Preemption { class: old });
                    }
                }
                if let Some(k) = new {
                    if !self.started[k] {
                        let x = self.net.service_dist(k).sample(&mut self.svc_rng[k]);
                        self.started[k] = true;
                        self.residual[k] = x;
                        self.sampled[k] = x;
                        self.acc[k] = 0.0;
                    }
                }
                self.serving[s] = new;
            }
            let mut t_next = until.min(self.sample_time());
            if let Some(w) = dec.wakeup {
                if w > self.now {
                    t_next = t_next.min(w);
                }
            }
            for &a in &self.next_arrival {
                t_next = t_next.min(a);
            }
            let finish: Vec<Option<f64>> = dec
                .serve
                .iter()
                .map(|c| c.map(|k| self.now + self.residual[k]))
                .collect();
            for f in finish.iter().flatten() {
                t_next = t_next.min(*f);
            }
            let dt = t_next - self.now;
            for k in dec.serve.iter().flatten() {
                self.residual[*k] = (self.residual[*k] - dt).max(0.0);
                self.acc[*k] += dt;
                self.cum_t[*k] += dt;
            }
            policy.advance(self.now, dt, &dec.serve);
            self.now = t_next;
            for ty in 0..self.net.types() {
                if self.next_arrival[ty] == t_next {
                    self.arrive(ty)?;
                }
            }
            let mut done: Vec<usize> = dec
                .serve
                .iter()
                .zip(&finish)
                .filter_map(|(c, f)| match (c, f) {
                    (Some(k), Some(f)) if *f == t_next => Some(*k),
                    _ => None,
                })
                .collect();
            done.sort_unstable();
            for k in done {
                self.complete(k)?;
            }
            for s in 0..stations {
                self.window_min[s] = self.window_min[s].min(self.station_level(s));
            }
            while self.sample_time() <= self.now {
                if self.sample_time() == self.now {
                    self.record();
                }
                self.next_sample += 1;
            }
        }
    }
}

/// Runs `policy` from `state0` on `[0, horizon]` and returns the trace,
/// sampled every `cfg.sample_dt` and at the horizon.
pub fn simulate(
    net: &Network,
    policy: &mut dyn Policy,
    state0: &SimState,
    horizon: f64,
    seed: u64,
    cfg: SimConfig,
) -> Result<SimTrace> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let mut sim = Simulator::new(net, state0, seed, cfg)?;
    sim.run_until(policy, horizon, None)?;
    sim.record();
    Ok(sim.into_trace())
}
