//! Primitive interarrival and service time distributions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "exponential")]
    Exponential,
    /// `params = [k, rate]`: sum of `k` exponential phases with rate `rate`.
    #[serde(rename = "erlang")]
    Erlang,
    #[serde(rename = "deterministic")]
    Deterministic,
    /// `params = [lo, hi]`.
    #[serde(rename = "uniform-bounded")]
    UniformBounded,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Erlang => "erlang",
            Family::Deterministic => "deterministic",
            Family::UniformBounded => "uniform-bounded",
        }
    }

    fn arity(self) -> usize {
        match self {
            Family::Exponential | Family::Deterministic => 1,
            Family::Erlang | Family::UniformBounded => 2,
        }
    }
}

/// A distribution family plus its parameters, as it appears in network files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSpec {
    pub family: Family,
    pub params: Vec<f64>,
}

impl DistSpec {
    pub fn exponential(rate: f64) -> Self {
        DistSpec {
            family: Family::Exponential,
            params: vec![rate],
        }
    }

    pub fn erlang(phases: u32, rate: f64) -> Self {
        DistSpec {
            family: Family::Erlang,
            params: vec![phases as f64, rate],
        }
    }

    pub fn deterministic(value: f64) -> Self {
        DistSpec {
            family: Family::Deterministic,
            params: vec![value],
        }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        DistSpec {
            family: Family::UniformBounded,
            params: vec![lo, hi],
        }
    }

    /// Parameter problems, empty when the distribution is well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let name = self.family.name();
        if self.params.len() != self.family.arity() {
            out.push(format!(
                "{name} expects {} parameter(s), got {}",
                self.family.arity(),
                self.params.len()
            ));
            return out;
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            out.push(format!("{name} parameters must be finite"));
            return out;
        }
        let p = &self.params;
        match self.family {
            Family::Exponential => {
                if p[0] <= 0.0 {
                    out.push(format!("{name} rate must be positive"));
                }
            }
            Family::Erlang => {
                if p[0] < 1.0 || p[0].fract() != 0.0 {
                    out.push(format!("{name} phase count must be a positive integer"));
                }
                if p[1] <= 0.0 {
                    out.push(format!("{name} rate must be positive"));
                }
            }
            Family::Deterministic => {
                if p[0] <= 0.0 {
                    out.push(format!("{name} value must be positive"));
                }
            }
            Family::UniformBounded => {
                if p[0] < 0.0 || p[1] <= p[0] {
                    out.push(format!("{name} needs 0 <= lo < hi"));
                }
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.problems().first() {
            None => Ok(()),
            Some(p) => Err(Error::InvalidArgument(p.clone())),
        }
    }

    pub fn mean(&self) -> f64 {
        let p = &self.params;
        match self.family {
            Family::Exponential => 1.0 / p[0],
            Family::Erlang => p[0] / p[1],
            Family::Deterministic => p[0],
            Family::UniformBounded => 0.5 * (p[0] + p[1]),
        }
    }

    /// Essential infimum and supremum of the support.
    pub fn support(&self) -> (f64, f64) {
        let p = &self.params;
        match self.family {
            Family::Exponential | Family::Erlang => (0.0, f64::INFINITY),
            Family::Deterministic => (p[0], p[0]),
            Family::UniformBounded => (p[0], p[1]),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.support().1.is_finite()
    }

    /// `E[exp(theta Z)]`, `+inf` where it diverges. Valid for negative `theta`.
    pub fn mgf(&self, theta: f64) -> f64 {
        let p = &self.params;
        match self.family {
            Family::Exponential => {
                if theta >= p[0] {
                    f64::INFINITY
                } else {
                    p[0] / (p[0] - theta)
                }
            }
            Family::Erlang => {
                if theta >= p[1] {
                    f64::INFINITY
                } else {
                    (p[1] / (p[1] - theta)).powf(p[0])
                }
            }
            Family::Deterministic => (theta * p[0]).exp(),
            Family::UniformBounded => {
                let (a, b) = (p[0], p[1]);
                let x = theta * (b - a);
                if x.abs() < 1e-8 {
                    // series of (e^x - 1)/x
                    (theta * a).exp() * (1.0 + x / 2.0 + x * x / 6.0)
                } else {
                    (theta * a).exp() * x.exp_m1() / x
                }
            }
        }
    }

    /// Natural log of the moment generating function.
    pub fn log_mgf(&self, theta: f64) -> f64 {
        let p = &self.params;
        match self.family {
            Family::Exponential => {
                if theta >= p[0] {
                    f64::INFINITY
                } else {
                    -(1.0 - theta / p[0]).ln()
                }
            }
            Family::Erlang => {
                if theta >= p[1] {
                    f64::INFINITY
                } else {
                    -p[0] * (1.0 - theta / p[1]).ln()
                }
            }
            Family::Deterministic => theta * p[0],
            Family::UniformBounded => {
                let (a, b) = (p[0], p[1]);
                let x = theta * (b - a);
                let rel = if x.abs() < 1e-8 {
                    x / 2.0 + x * x / 24.0
                } else if x > 0.0 {
                    // ln((e^x - 1)/x) = x + ln((1 - e^-x)/x)
                    x + (-(-x).exp_m1() / x).ln()
                } else {
                    (x.exp_m1() / x).ln()
                };
                theta * a + rel
            }
        }
    }

    /// Upper end of the interval of `theta >= 0` on which the moment
    /// generating function is finite; the bool is true if the end is open.
    pub fn mgf_domain(&self) -> (f64, bool) {
        match self.family {
            Family::Exponential => (self.params[0], true),
            Family::Erlang => (self.params[1], true),
            Family::Deterministic | Family::UniformBounded => (f64::INFINITY, true),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p = &self.params;
        match self.family {
            Family::Exponential => Exp::new(p[0]).expect("validated rate").sample(rng),
            Family::Erlang => Gamma::new(p[0], 1.0 / p[1])
                .expect("validated erlang")
                .sample(rng),
            Family::Deterministic => p[0],
            Family::UniformBounded => p[0] + (p[1] - p[0]) * rng.random::<f64>(),
        }
    }

    /// Draw `Z` conditioned on `Z >= z`.
    ///
    /// Exact for exponential (memoryless shift), deterministic and uniform
    /// (truncated inverse CDF). Erlang uses rejection with at most
    /// `max_tries` attempts. Returns `None` when the conditioning event is
    /// empty or rejection gave up; the second value counts attempts.
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        z: f64,
        max_tries: u32,
    ) -> (Option<f64>, u32) {
        let p = &self.params;
        match self.family {
            Family::Exponential => (Some(z + self.sample(rng)), 1),
            Family::Deterministic => {
                if z <= p[0] {
                    (Some(p[0]), 1)
                } else {
                    (None, 1)
                }
            }
            Family::UniformBounded => {
                let lo = p[0].max(z);
                if lo >= p[1] {
                    (None, 1)
                } else {
                    (Some(lo + (p[1] - lo) * rng.random::<f64>()), 1)
                }
            }
            Family::Erlang => {
                for attempt in 1..=max_tries {
                    let x = self.sample(rng);
                    if x >= z {
                        return (Some(x), attempt);
                    }
                }
                (None, max_tries)
            }
        }
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.family.name())?;
        for (k, p) in self.params.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// Parses `family:p1,p2`, e.g. `exponential:1` or `erlang:2,4`.
impl FromStr for DistSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected family:params, got `{s}`")))?;
        let family = match name.trim() {
            "exponential" | "exp" => Family::Exponential,
            "erlang" => Family::Erlang,
            "deterministic" | "det" => Family::Deterministic,
            "uniform-bounded" | "uniform" => Family::UniformBounded,
            other => return Err(Error::Parse(format!("unknown family `{other}`"))),
        };
        let params = rest
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad parameter `{p}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = DistSpec { family, params };
        d.check()?;
        Ok(d)
    }
}
