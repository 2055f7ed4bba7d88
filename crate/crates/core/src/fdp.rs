//! Finite decomposition of positive fluid solutions on two-station networks.
//!
//! On a two-station network a positive fluid trajectory alternates between
//! boundary phases, where one station is empty at both ends, and interior
//! crossings, where it travels from one empty station to the other. Each
//! boundary phase can be replaced by the straight line between its
//! endpoints, which keeps the solution feasible and non-idling and pins it to
//! the boundary. After that, every piece between consecutive cut times has
//! station queues of constant sign, and the number of pieces is bounded by
//! the time a crossing needs to move the mass across.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{certify, linearize_segment, FluidSolution, DEFAULT_TOL};
use crate::network::Network;

/// Station aggregates at or below this level count as empty.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    /// Both stations positive on the open interval.
    Interior,
    /// `station` is empty at both ends and the other station is positive.
    Boundary { empty: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start: f64,
    pub end: f64,
    pub kind: PhaseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Zero,
}

/// Output of [`fdp_decompose`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// The solution with every boundary phase linearized, stored in the
    /// same row-major layout as solution files.
    #[serde(with = "solution_serde")]
    pub modified: FluidSolution,
    /// `0 = t_0 < ... < t_M = end`, relative to the solution's own clock.
    pub cut_times: Vec<f64>,
    /// Per interval, the sign of each station's queue.
    pub phase_labels: Vec<[Sign; 2]>,
    /// Detected phases, including single-point boundary contacts.
    pub phases: Vec<Phase>,
}

impl Decomposition {
    /// Number of pieces `M`.
    pub fn pieces(&self) -> usize {
        self.cut_times.len() - 1
    }

    /// Start times of the boundary phases, i.e. the first contact of each
    /// maximal run of same-station contacts.
    pub fn boundary_starts(&self) -> Vec<f64> {
        self.phases
            .iter()
            .filter(|p| matches!(p.kind, PhaseKind::Boundary { .. }))
            .map(|p| p.start)
            .collect()
    }
}

mod solution_serde {
    use super::FluidSolution;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Raw {
        breakpoints: Vec<f64>,
        q: Vec<Vec<f64>>,
        t: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(s: &FluidSolution, ser: S) -> Result<S::Ok, S::Error> {
        Raw {
            breakpoints: s.breakpoints.clone(),
            q: s.q.clone(),
            t: s.t.clone(),
        }
        .serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<FluidSolution, D::Error> {
        let r = Raw::deserialize(de)?;
        Ok(FluidSolution {
            breakpoints: r.breakpoints,
            q: r.q,
            t: r.t,
        })
    }
}

fn require_two_stations(net: &Network, sol: &FluidSolution) -> Result<()> {
    if net.stations() != 2 {
        return Err(Error::NotTwoStations(net.stations()));
    }
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

/// Which station, if any, is empty at breakpoint `k`.
fn contact(net: &Network, sol: &FluidSolution, k: usize) -> Result<Option<usize>> {
    let s0 = sol.station_level(net, 0, k);
    let s1 = sol.station_level(net, 1, k);
    match (s0 <= ZERO_TOL, s1 <= ZERO_TOL) {
        (true, true) => Err(Error::Degenerate {
            t: sol.breakpoints[k],
            reason: "both stations empty".into(),
        }),
        (true, false) => Ok(Some(0)),
        (false, true) => Ok(Some(1)),
        (false, false) => Ok(None),
    }
}

/// Splits the solution into boundary phases and interior crossings.
///
/// Station aggregates are linear between breakpoints, so a station can only
/// be empty inside a segment if it is empty at both of its ends; contacts are
/// therefore read off at breakpoints. A boundary phase spans a maximal run of
/// contacts with the same empty station, and may leave the boundary in
/// between as long as the other station stays positive.
pub fn detect_phase_sequence(net: &Network, sol: &FluidSolution) -> Result<Vec<Phase>> {
    require_two_stations(net, sol)?;
    let n = sol.breakpoints.len();
    let mut runs: Vec<(usize, usize, usize)> = Vec::new(); // (first k, last k, empty station)
    for k in 0..n {
        if sol.norm_at_breakpoint(k) <= ZERO_TOL {
            return Err(Error::Degenerate {
                t: sol.breakpoints[k],
                reason: "solution is not positive".into(),
            });
        }
        if let Some(s) = contact(net, sol, k)? {
            match runs.last_mut() {
                Some(r) if r.2 == s => r.1 = k,
                _ => runs.push((k, k, s)),
            }
        }
    }
    let u = &sol.breakpoints;
    let mut phases = Vec::new();
    let mut cursor = u[0];
    for &(a, b, s) in &runs {
        if u[a] > cursor {
            phases.push(Phase {
                start: cursor,
                end: u[a],
                kind: PhaseKind::Interior,
            });
        }
        phases.push(Phase {
            start: u[a],
            end: u[b],
            kind: PhaseKind::Boundary { empty: s },
        });
        cursor = u[b];
    }
    if cursor < u[n - 1] {
        phases.push(Phase {
            start: cursor,
            end: u[n - 1],
            kind: PhaseKind::Interior,
        });
    }
    Ok(phases)
}

/// Linearizes every boundary phase of positive length and records the cut
/// times and per-piece station signs.
pub fn fdp_decompose(net: &Network, sol: &FluidSolution) -> Result<Decomposition> {
    let phases = detect_phase_sequence(net, sol)?;
    let mut modified = sol.clone();
    for p in &phases {
        if matches!(p.kind, PhaseKind::Boundary { .. }) && p.end > p.start {
            modified = linearize_segment(&modified, p.start, p.end)?;
        }
    }
    let mut cut_times = vec![sol.start()];
    let mut phase_labels = Vec::new();
    for p in &phases {
        if p.end > p.start {
            cut_times.push(p.end);
            phase_labels.push(match p.kind {
                PhaseKind::Interior => [Sign::Positive, Sign::Positive],
                PhaseKind::Boundary { empty: 0 } => [Sign::Zero, Sign::Positive],
                PhaseKind::Boundary { .. } => [Sign::Positive, Sign::Zero],
            });
        }
    }
    Ok(Decomposition {
        modified,
        cut_times,
        phase_labels,
        phases,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdpReport {
    pub pieces: usize,
    /// `nu * theta * sup 1/||Q|| + B` with `nu = 2C`, `B = 2`.
    pub piece_bound: f64,
    pub inf_original: f64,
    pub inf_modified: f64,
    /// Smallest gap between consecutive boundary-phase starts.
    pub min_spacing: Option<f64>,
    /// `inf ||Q|| / C`.
    pub spacing_required: f64,
    pub violations: Vec<String>,
}

impl FdpReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn level_at(net: &Network, q: &[f64], station: usize) -> f64 {
    net.station_classes(station).iter().map(|&c| q[c]).sum()
}

/// Checks the piece-count bound, the infimum property, agreement at cut
/// times, sign constancy of every piece and the boundary spacing bound.
pub fn fdp_bound_check(net: &Network, sol: &FluidSolution, dec: &Decomposition) -> Result<FdpReport> {
    require_two_stations(net, sol)?;
    let c = net.constants().c_big;
    let m = &dec.modified;
    let mut v = Vec::new();
    let inf_norm = |s: &FluidSolution| {
        (0..s.breakpoints.len())
            .map(|k| s.norm_at_breakpoint(k))
            .fold(f64::INFINITY, f64::min)
    };
    let inf_original = inf_norm(sol);
    let inf_modified = inf_norm(m);
    let theta = sol.duration();
    let piece_bound = 2.0 * c * theta / inf_original + 2.0;
    let pieces = dec.pieces();
    if pieces as f64 > piece_bound {
        v.push(format!("{pieces} pieces exceed the bound {piece_bound}"));
    }
    if inf_modified < inf_original {
        v.push(format!(
            "modified infimum {inf_modified} below original {inf_original}"
        ));
    }
    if dec.phase_labels.len() != pieces {
        v.push(format!("{} labels for {pieces} pieces", dec.phase_labels.len()));
    }
    if (dec.cut_times[0] - sol.start()).abs() > 0.0 || (dec.cut_times[pieces] - sol.end()).abs() > 0.0 {
        v.push("cut times do not span the domain".into());
    }
    for &t in &dec.cut_times {
        match (sol.q_at(t), m.q_at(t), sol.t_at(t), m.t_at(t)) {
            (Ok(a), Ok(b), Ok(x), Ok(y)) if a == b && x == y => {}
            _ => v.push(format!("modified solution differs from the original at cut {t}")),
        }
    }
    for (i, w) in dec.cut_times.windows(2).enumerate() {
        let Some(labels) = dec.phase_labels.get(i) else { break };
        let (a, b) = (w[0], w[1]);
        // breakpoints of the modified solution in [a, b]
        let ks: Vec<usize> = (0..m.breakpoints.len())
            .filter(|&k| m.breakpoints[k] >= a && m.breakpoints[k] <= b)
            .collect();
        for s in 0..2 {
            let ok = match labels[s] {
                Sign::Zero => ks.iter().all(|&k| m.station_level(net, s, k) <= ZERO_TOL),
                Sign::Positive => {
                    let interior = ks
                        .iter()
                        .filter(|&&k| m.breakpoints[k] > a && m.breakpoints[k] < b)
                        .all(|&k| m.station_level(net, s, k) > ZERO_TOL);
                    let mids = ks.windows(2).all(|p| {
                        let mid: Vec<f64> = m.q[p[0]]
                            .iter()
                            .zip(&m.q[p[1]])
                            .map(|(x, y)| 0.5 * (x + y))
                            .collect();
                        level_at(net, &mid, s) > ZERO_TOL
                    });
                    interior && mids
                }
            };
            if !ok {
                v.push(format!(
                    "station {s} is not {:?} throughout piece {i} = [{a}, {b}]",
                    labels[s]
                ));
            }
        }
    }
    let starts = dec.boundary_starts();
    let min_spacing = starts
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.min(x))));
    let spacing_required = inf_original / c;
    if let Some(sp) = min_spacing {
        if sp < spacing_required {
            v.push(format!(
                "boundary phases start {sp} apart, less than {spacing_required}"
            ));
        }
    }
    let rep = certify(net, m, DEFAULT_TOL)?;
    if !rep.is_empty() {
        v.push(format!("modified solution: {}", rep.summary()));
    }
    Ok(FdpReport {
        pieces,
        piece_bound,
        inf_original,
        inf_modified,
        min_spacing,
        spacing_required,
        violations: v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::build_divergent;
    use crate::fixtures;
    use crate::fluid::{simulate_priority_fluid, PriorityOrder};

    fn rs_block() -> (Network, FluidSolution) {
        let net = fixtures::rybko_stolyar();
        let w = fixtures::rs_witness(&net).unwrap();
        let d = build_divergent(&net, &w, &[0.0; 4], 2.0).unwrap();
        let block = d.restrict(1.0, 2.0).unwrap();
        (net, block)
    }

    #[test]
    fn all_interior_is_single_piece() {
        let net = fixtures::rybko_stolyar();
        let sol = FluidSolution {
            breakpoints: vec![0.0, 1.0],
            q: vec![vec![5.0, 5.0, 5.0, 5.0], vec![5.0, 5.0, 5.0, 5.0]],
            t: vec![vec![0.0; 4], vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 2.0 / 3.0]],
        };
        let dec = fdp_decompose(&net, &sol).unwrap();
        assert_eq!(dec.pieces(), 1);
        assert_eq!(dec.modified, sol);
        assert_eq!(dec.phase_labels, vec![[Sign::Positive, Sign::Positive]]);
    }

    #[test]
    fn one_sided_is_single_boundary_phase() {
        let net = fixtures::rybko_stolyar();
        // only class 0 at A holds fluid; B serves its arrivals at balance
        let order = PriorityOrder::by_index(&net);
        let sol = simulate_priority_fluid(&net, &order, &[0.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(detect_phase_sequence(&net, &sol).is_err());
        let sol = FluidSolution {
            breakpoints: vec![0.0, 1.0],
            q: vec![vec![2.0, 0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, 0.0]],
            t: vec![vec![0.0; 4], vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 2.0 / 3.0]],
        };
        let phases = detect_phase_sequence(&net, &sol).unwrap();
        assert_eq!(
            phases,
            vec![Phase {
                start: 0.0,
                end: 1.0,
                kind: PhaseKind::Boundary { empty: 1 }
            }]
        );
    }

    #[test]
    fn rs_block_alternates_per_station_aggregates() {
        let (net, block) = rs_block();
        let phases = detect_phase_sequence(&net, &block).unwrap();
        // oracle: direct scan of station aggregates at breakpoints
        let mut contacts = Vec::new();
        for k in 0..block.breakpoints.len() {
            let a = block.station_level(&net, 0, k);
            let b = block.station_level(&net, 1, k);
            if a <= ZERO_TOL {
                contacts.push(0);
            } else if b <= ZERO_TOL {
                contacts.push(1);
            }
        }
        contacts.dedup();
        let kinds: Vec<usize> = phases
            .iter()
            .filter_map(|p| match p.kind {
                PhaseKind::Boundary { empty } => Some(empty),
                PhaseKind::Interior => None,
            })
            .collect();
        assert_eq!(kinds, contacts);
        for w in kinds.windows(2) {
            assert_ne!(w[0], w[1]);
        }
        assert!(kinds.len() >= 2);
    }

    #[test]
    fn rs_block_decomposition_passes() {
        let (net, block) = rs_block();
        let dec = fdp_decompose(&net, &block).unwrap();
        let rep = fdp_bound_check(&net, &block, &dec).unwrap();
        assert!(rep.passed(), "{:?}", rep.violations);
        assert!((rep.pieces as f64) <= rep.piece_bound);
    }

    #[test]
    fn boundary_dip_is_linearized() {
        use crate::dist::DistSpec;
        use crate::network::{NetworkSpec, StageSpec, TypeSpec};
        let stage = |mu: f64| StageSpec { mu, service: DistSpec::exponential(mu) };
        // type 0 only visits A; type 1 visits A then B
        let net = Network::new(NetworkSpec {
            stations: 2,
            types: vec![
                TypeSpec { route: vec![0], lambda: 0.5, arrival: DistSpec::exponential(0.5), stages: vec![stage(2.0)] },
                TypeSpec { route: vec![0, 1], lambda: 0.5, arrival: DistSpec::exponential(0.5), stages: vec![stage(4.0), stage(2.0)] },
            ],
        })
        .unwrap();
        // A feeds B on [0, 1], then serves the other type while B drains
        let sol = FluidSolution {
            breakpoints: vec![0.0, 1.0, 2.0],
            q: vec![vec![5.0, 5.0, 0.0], vec![5.5, 1.5, 2.0], vec![4.0, 2.0, 0.0]],
            t: vec![vec![0.0; 3], vec![0.0, 1.0, 1.0], vec![1.0, 1.0, 2.0]],
        };
        assert!(certify(&net, &sol, DEFAULT_TOL).unwrap().is_empty());
        let dec = fdp_decompose(&net, &sol).unwrap();
        assert_eq!(dec.modified.breakpoints, vec![0.0, 2.0]);
        assert_eq!(dec.modified.q[0], sol.q[0]);
        assert_eq!(dec.modified.q[1], sol.q[2]);
        assert_eq!(dec.modified.t[1], sol.t[2]);
        assert_eq!(dec.phase_labels, vec![[Sign::Positive, Sign::Zero]]);
        assert!(certify(&net, &dec.modified, DEFAULT_TOL).unwrap().is_empty());
        assert!(fdp_bound_check(&net, &sol, &dec).unwrap().passed());
    }

    #[test]
    fn rejects_three_stations() {
        let mut spec = fixtures::rybko_stolyar_spec();
        spec.stations = 3;
        let net = Network::new(spec).unwrap();
        let sol = FluidSolution::constant(vec![1.0; 4], 0.0, 1.0);
        assert!(matches!(fdp_decompose(&net, &sol), Err(Error::NotTwoStations(3))));
    }

    #[test]
    fn dropped_cut_is_rejected() {
        let (net, block) = rs_block();
        let mut dec = fdp_decompose(&net, &block).unwrap();
        assert!(dec.pieces() >= 2);
        dec.cut_times.remove(1);
        dec.phase_labels.remove(1);
        let rep = fdp_bound_check(&net, &block, &dec).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn idempotent_on_rs_block() {
        let (net, block) = rs_block();
        let dec = fdp_decompose(&net, &block).unwrap();
        let again = fdp_decompose(&net, &dec.modified).unwrap();
        assert_eq!(again.modified, dec.modified);
        assert_eq!(again.cut_times, dec.cut_times);
    }
}
