//! Multitype network topologies, their validation and derived constants.
//!
//! A network has `J` single-server stations and `I` job types. Type `i`
//! arrives externally at rate `lambda_i` and visits the stations on its
//! route in order; the pair (type, stage) is a *class*. Classes are
//! flattened type-major: all stages of type 0, then type 1, and so on.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::DistSpec;
use crate::error::{Error, Result};

const MEAN_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub mu: f64,
    pub service: DistSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSpec {
    pub route: Vec<usize>,
    pub lambda: f64,
    pub arrival: DistSpec,
    pub stages: Vec<StageSpec>,
}

/// Raw network description, exactly as stored in a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub stations: usize,
    pub types: Vec<TypeSpec>,
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_rate(what: &str, r: f64, out: &mut Vec<String>) {
    if !r.is_finite() {
        out.push(format!("{what}: rate must be finite"));
    } else if r <= 0.0 {
        out.push(format!("{what}: rate must be positive"));
    }
}

fn check_mean(what: &str, rate: f64, d: &DistSpec, out: &mut Vec<String>) {
    let problems = d.problems();
    if !problems.is_empty() {
        out.extend(problems.into_iter().map(|p| format!("{what}: {p}")));
        return;
    }
    if !(rate.is_finite() && rate > 0.0) {
        return;
    }
    let want = 1.0 / rate;
    let got = d.mean();
    if (got - want).abs() > MEAN_REL_TOL * want {
        out.push(format!(
            "{what}: distribution mean {got} does not match 1/rate = {want}"
        ));
    }
}

/// Lists every violated invariant of `spec`; an empty violation list means
/// the network is valid.
pub fn validate_network(spec: &NetworkSpec) -> ValidationReport {
    let mut v = Vec::new();
    let mut warnings = Vec::new();
    if spec.stations == 0 {
        v.push("network needs at least one station".to_string());
    }
    if spec.types.is_empty() {
        v.push("network needs at least one job type".to_string());
    }
    for (i, ty) in spec.types.iter().enumerate() {
        check_rate(&format!("type {i} arrival"), ty.lambda, &mut v);
        check_mean(&format!("type {i} arrival"), ty.lambda, &ty.arrival, &mut v);
        if ty.route.is_empty() {
            v.push(format!("type {i}: route must visit at least one station"));
        }
        if ty.route.len() != ty.stages.len() {
            v.push(format!(
                "type {i}: route has {} stations but {} stages are given",
                ty.route.len(),
                ty.stages.len()
            ));
        }
        for (j, &s) in ty.route.iter().enumerate() {
            if s >= spec.stations {
                v.push(format!(
                    "type {i} stage {j}: station index {s} out of range [0, {})",
                    spec.stations
                ));
            }
        }
        for (j, st) in ty.stages.iter().enumerate() {
            check_rate(&format!("type {i} stage {j} service"), st.mu, &mut v);
            check_mean(&format!("type {i} stage {j} service"), st.mu, &st.service, &mut v);
        }
    }
    let all_bounded = spec
        .types
        .iter()
        .flat_map(|t| t.stages.iter())
        .all(|s| s.service.problems().is_empty() && s.service.is_bounded());
    if v.is_empty() && all_bounded {
        warnings.push(
            "every service distribution has bounded support; queue levels may not be \
             reachable under every policy, so restart supervision can stall"
                .to_string(),
        );
    }
    ValidationReport {
        violations: v,
        warnings,
    }
}

/// Per-class lookup data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub ty: usize,
    pub stage: usize,
    pub station: usize,
    pub mu: f64,
    pub prev: Option<usize>,
    pub next: Option<usize>,
}

/// A validated network with its class tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    classes: Vec<ClassInfo>,
    station_classes: Vec<Vec<usize>>,
    first_class: Vec<usize>,
    last_class: Vec<usize>,
    constants: Constants,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let report = validate_network(&spec);
        if !report.is_valid() {
            return Err(Error::InvalidNetwork(report.violations.join("; ")));
        }
        let mut classes = Vec::new();
        let mut station_classes = vec![Vec::new(); spec.stations];
        let mut first_class = Vec::new();
        let mut last_class = Vec::new();
        for (i, ty) in spec.types.iter().enumerate() {
            first_class.push(classes.len());
            for (j, (&station, st)) in ty.route.iter().zip(&ty.stages).enumerate() {
                let k = classes.len();
                station_classes[station].push(k);
                classes.push(ClassInfo {
                    ty: i,
                    stage: j,
                    station,
                    mu: st.mu,
                    prev: (j > 0).then(|| k - 1),
                    next: (j + 1 < ty.route.len()).then_some(k + 1),
                });
            }
            last_class.push(classes.len() - 1);
        }
        let constants = constants_of(&spec);
        Ok(Network {
            spec,
            classes,
            station_classes,
            first_class,
            last_class,
            constants,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(NetworkSpec::load(path)?)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Number of stations `J`.
    pub fn stations(&self) -> usize {
        self.spec.stations
    }

    /// Number of job types `I`.
    pub fn types(&self) -> usize {
        self.spec.types.len()
    }

    /// Number of classes `d`.
    pub fn classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, k: usize) -> &ClassInfo {
        &self.classes[k]
    }

    pub fn class_table(&self) -> &[ClassInfo] {
        &self.classes
    }

    /// Classes served at `station`, in class-index order.
    pub fn station_classes(&self, station: usize) -> &[usize] {
        &self.station_classes[station]
    }

    pub fn first_class(&self, ty: usize) -> usize {
        self.first_class[ty]
    }

    pub fn last_class(&self, ty: usize) -> usize {
        self.last_class[ty]
    }

    pub fn lambda(&self, ty: usize) -> f64 {
        self.spec.types[ty].lambda
    }

    pub fn mu(&self, k: usize) -> f64 {
        self.classes[k].mu
    }

    pub fn arrival_dist(&self, ty: usize) -> &DistSpec {
        &self.spec.types[ty].arrival
    }

    pub fn service_dist(&self, k: usize) -> &DistSpec {
        let c = &self.classes[k];
        &self.spec.types[c.ty].stages[c.stage].service
    }

    /// Index pairs `(type, stage)` in flat class order.
    pub fn class_pairs(&self) -> Vec<(usize, usize)> {
        self.classes.iter().map(|c| (c.ty, c.stage)).collect()
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    /// Offered load `sum lambda_i / mu_ij` at each station.
    pub fn loads(&self) -> Vec<f64> {
        let mut rho = vec![0.0; self.stations()];
        for c in &self.classes {
            rho[c.station] += self.lambda(c.ty) / c.mu;
        }
        rho
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} station(s), {} type(s), {} classes",
            self.stations(),
            self.types(),
            self.classes()
        )
    }
}

/// Network-level constants used by the divergence and tracking constructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// `max_i max(lambda_i, 1/lambda_i)`.
    pub lambda_max: f64,
    /// `max_ij max(mu_ij, 1/mu_ij)`.
    pub mu_max: f64,
    /// Longest route length.
    pub j_max: usize,
    /// `13 (lambda_max + mu_max)^2 I j_max^3 + 1`.
    pub c_big: f64,
    pub class_count: usize,
}

fn constants_of(spec: &NetworkSpec) -> Constants {
    let sym = |r: f64| r.max(1.0 / r);
    let lambda_max = spec.types.iter().map(|t| sym(t.lambda)).fold(0.0, f64::max);
    let mu_max = spec
        .types
        .iter()
        .flat_map(|t| t.stages.iter())
        .map(|s| sym(s.mu))
        .fold(0.0, f64::max);
    let j_max = spec.types.iter().map(|t| t.route.len()).max().unwrap_or(0);
    let i = spec.types.len() as f64;
    let s = lambda_max + mu_max;
    let c_big = 13.0 * s * s * i * (j_max as f64).powi(3) + 1.0;
    Constants {
        lambda_max,
        mu_max,
        j_max,
        c_big,
        class_count: spec.types.iter().map(|t| t.route.len()).sum(),
    }
}

pub fn derived_constants(spec: &NetworkSpec) -> Result<Constants> {
    let report = validate_network(spec);
    if !report.is_valid() {
        return Err(Error::InvalidNetwork(report.violations.join("; ")));
    }
    Ok(constants_of(spec))
}

/// L1 norm.
pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn sq_is_valid() {
        let r = validate_network(&fixtures::single_queue_spec());
        assert!(r.is_valid(), "{:?}", r.violations);
    }

    #[test]
    fn zero_rate_rejected() {
        let mut s = fixtures::single_queue_spec();
        s.types[0].stages[0].mu = 0.0;
        let r = validate_network(&s);
        assert!(r.violations.iter().any(|v| v.contains("rate must be positive")));
    }

    #[test]
    fn rs_is_valid() {
        let r = validate_network(&fixtures::rybko_stolyar_spec());
        assert!(r.is_valid(), "{:?}", r.violations);
    }

    #[test]
    fn route_out_of_range() {
        let mut s = fixtures::rybko_stolyar_spec();
        s.types[1].route[0] = 2;
        let r = validate_network(&s);
        assert!(r.violations.iter().any(|v| v.contains("out of range")));
    }

    #[test]
    fn mean_mismatch_rejected() {
        let mut s = fixtures::single_queue_spec();
        s.types[0].arrival = DistSpec::exponential(1.5);
        let r = validate_network(&s);
        assert!(r.violations.iter().any(|v| v.contains("does not match")));
        // relative 1e-9 slack
        s.types[0].arrival = DistSpec::exponential(1.0 + 1e-12);
        assert!(validate_network(&s).is_valid());
    }

    #[test]
    fn route_stage_count_mismatch() {
        let mut s = fixtures::rybko_stolyar_spec();
        s.types[0].stages.pop();
        assert!(!validate_network(&s).is_valid());
    }

    #[test]
    fn bounded_services_warn() {
        let r = validate_network(&fixtures::deterministic_queue_spec());
        assert!(r.is_valid());
        assert_eq!(r.warnings.len(), 1);
        assert!(validate_network(&fixtures::single_queue_spec()).warnings.is_empty());
    }

    #[test]
    fn reentrant_route_allowed() {
        let mut s = fixtures::single_queue_spec();
        s.types[0].route = vec![0, 0];
        s.types[0].stages.push(StageSpec {
            mu: 4.0,
            service: DistSpec::exponential(4.0),
        });
        let net = Network::new(s).unwrap();
        assert_eq!(net.station_classes(0), &[0, 1]);
        assert_eq!(net.class(0).next, Some(1));
        assert_eq!(net.class(1).prev, Some(0));
    }

    #[test]
    fn constants_sq() {
        let c = derived_constants(&fixtures::single_queue_spec()).unwrap();
        assert_eq!(c.lambda_max, 1.0);
        assert_eq!(c.mu_max, 2.0);
        assert_eq!(c.j_max, 1);
        assert_eq!(c.c_big, 118.0);
    }

    #[test]
    fn constants_rs() {
        let c = derived_constants(&fixtures::rybko_stolyar_spec()).unwrap();
        assert_eq!(c.lambda_max, 1.0);
        assert_eq!(c.mu_max, 6.0);
        assert_eq!(c.j_max, 2);
        assert_eq!(c.c_big, 10193.0);
        assert_eq!(c.class_count, 4);
    }

    #[test]
    fn constants_unit_rates() {
        let mut s = fixtures::single_queue_spec();
        s.types[0].stages[0].mu = 1.0;
        s.types[0].stages[0].service = DistSpec::exponential(1.0);
        assert_eq!(derived_constants(&s).unwrap().c_big, 53.0);
    }

    #[test]
    fn strict_json_rejects_unknown_keys() {
        let ok = r#"{"stations":1,"types":[{"route":[0],"lambda":1,
            "arrival":{"family":"exponential","params":[1]},
            "stages":[{"mu":2,"service":{"family":"exponential","params":[2]}}]}]}"#;
        assert!(NetworkSpec::from_json(ok).is_ok());
        let bad = ok.replace("\"lambda\":1", "\"lambda\":1,\"extra\":3");
        assert!(NetworkSpec::from_json(&bad).is_err());
        let bad_dist = ok.replace("\"params\":[1]", "\"params\":[1],\"scale\":2");
        assert!(NetworkSpec::from_json(&bad_dist).is_err());
    }
}
