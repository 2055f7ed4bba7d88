//! Scheduling policies for the simulator.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::fluid::PriorityOrder;
use crate::network::Network;

/// A job waiting in (or being served from) a class buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    /// Time the job entered the network.
    pub entry: f64,
    /// Time the job joined its current class.
    pub arrived: f64,
    /// Global arrival sequence number, for tie-breaking.
    pub seq: u64,
}

/// Read-only view of the simulator handed to policies.
pub struct SimView<'a> {
    pub now: f64,
    pub net: &'a Network,
    pub buffers: &'a [VecDeque<Job>],
    /// True when the head job of the class has started service.
    pub started: &'a [bool],
}

impl SimView<'_> {
    pub fn len(&self, class: usize) -> usize {
        self.buffers[class].len()
    }

    pub fn head(&self, class: usize) -> Option<&Job> {
        self.buffers[class].front()
    }

    pub fn newest(&self, class: usize) -> Option<&Job> {
        self.buffers[class].back()
    }

    /// Nonempty classes at `station`, in class-index order.
    pub fn waiting(&self, station: usize) -> impl Iterator<Item = usize> + '_ {
        self.net
            .station_classes(station)
            .iter()
            .copied()
            .filter(|&k| !self.buffers[k].is_empty())
    }

    pub fn station_len(&self, station: usize) -> usize {
        self.net
            .station_classes(station)
            .iter()
            .map(|&k| self.buffers[k].len())
            .sum()
    }

    pub fn total_len(&self) -> usize {
        self.buffers.iter().map(VecDeque::len).sum()
    }
}

/// What each station does until the next event or wakeup.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Class served at each station, `None` to idle.
    pub serve: Vec<Option<usize>>,
    /// Absolute time at which the policy wants to decide again even if no
    /// arrival or completion happens first.
    pub wakeup: Option<f64>,
}

/// A head-of-line preemptive-resume scheduling rule.
///
/// `decide` is called at the start and after every event or wakeup; the
/// simulator rejects decisions that idle a station holding work or serve an
/// empty or foreign class.
pub trait Policy: Send {
    fn name(&self) -> String;

    fn decide(&mut self, view: &SimView) -> Decision;

    /// Informs the policy that `serve` was in force on `[now, now + dt]`.
    fn advance(&mut self, _now: f64, _dt: f64, _serve: &[Option<usize>]) {}
}

fn pick_min<F: Fn(usize) -> (f64, u64)>(view: &SimView, station: usize, key: F) -> Option<usize> {
    view.waiting(station).min_by(|&a, &b| {
        key(a)
            .partial_cmp(&key(b))
            .expect("finite keys")
            .then(a.cmp(&b))
    })
}

fn per_station<F: FnMut(usize) -> Option<usize>>(view: &SimView, f: F) -> Decision {
    Decision {
        serve: (0..view.net.stations()).map(f).collect(),
        wakeup: None,
    }
}

/// Serves the class whose head job reached the station first.
#[derive(Debug, Clone, Default)]
pub struct Fifo;

impl Policy for Fifo {
    fn name(&self) -> String {
        "fifo".into()
    }

    fn decide(&mut self, view: &SimView) -> Decision {
        per_station(view, |s| {
            pick_min(view, s, |k| {
                let j = view.head(k).expect("nonempty");
                (j.arrived, j.seq)
            })
        })
    }
}

/// Serves the class holding the most recent arrival to the station, head
/// job first (head-of-line within each class).
#[derive(Debug, Clone, Default)]
pub struct Lifo;

impl Policy for Lifo {
    fn name(&self) -> String {
        "lifo".into()
    }

    fn decide(&mut self, view: &SimView) -> Decision {
        per_station(view, |s| {
            pick_min(view, s, |k| {
                let j = view.newest(k).expect("nonempty");
                (-j.arrived, u64::MAX - j.seq)
            })
        })
    }
}

/// Serves the class whose head job entered the network first.
#[derive(Debug, Clone, Default)]
pub struct Gfifo;

impl Policy for Gfifo {
    fn name(&self) -> String {
        "gfifo".into()
    }

    fn decide(&mut self, view: &SimView) -> Decision {
        per_station(view, |s| {
            pick_min(view, s, |k| {
                let j = view.head(k).expect("nonempty");
                (j.entry, j.seq)
            })
        })
    }
}

/// Serves the highest-ranked nonempty class at each station.
#[derive(Debug, Clone)]
pub struct StaticPriority {
    order: PriorityOrder,
}

impl StaticPriority {
    pub fn new(order: PriorityOrder) -> Self {
        StaticPriority { order }
    }
}

impl Policy for StaticPriority {
    fn name(&self) -> String {
        let lists: Vec<String> = self
            .order
            .0
            .iter()
            .map(|l| l.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","))
            .collect();
        format!("priority:{}", lists.join(";"))
    }

    fn decide(&mut self, view: &SimView) -> Decision {
        per_station(view, |s| {
            self.order.0[s]
                .iter()
                .copied()
                .find(|&k| view.len(k) > 0)
        })
    }
}

/// Builtin policy selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyKind {
    Fifo,
    Lifo,
    Gfifo,
    /// `None` ranks classes by index.
    StaticPriority(Option<PriorityOrder>),
}

impl PolicyKind {
    /// Parses `fifo`, `lifo`, `gfifo`, `priority` or `priority:c,c;c,c`.
    pub fn parse(net: &Network, text: &str) -> Result<Self> {
        match text.trim() {
            "fifo" => Ok(PolicyKind::Fifo),
            "lifo" => Ok(PolicyKind::Lifo),
            "gfifo" => Ok(PolicyKind::Gfifo),
            "priority" => Ok(PolicyKind::StaticPriority(None)),
            other => match other.strip_prefix("priority:") {
                Some(spec) => Ok(PolicyKind::StaticPriority(Some(PriorityOrder::parse(net, spec)?))),
                None => Err(Error::Parse(format!("unknown policy `{other}`"))),
            },
        }
    }
}

/// Instantiates a builtin policy; priority orders must cover every class.
pub fn builtin_policy(net: &Network, kind: &PolicyKind) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        PolicyKind::Fifo => Box::new(Fifo),
        PolicyKind::Lifo => Box::new(Lifo),
        PolicyKind::Gfifo => Box::new(Gfifo),
        PolicyKind::StaticPriority(None) => Box::new(StaticPriority::new(PriorityOrder::by_index(net))),
        PolicyKind::StaticPriority(Some(o)) => {
            Box::new(StaticPriority::new(PriorityOrder::new(net, o.0.clone())?))
        }
    })
}
