//! Large-deviation toolkit for the primitive sequences.
//!
//! [`check_exptail`] certifies the uniform overshoot bound
//! `sup_z E[exp(theta (Z - z)) | Z >= z] <= F(theta)`, [`chernoff_rate`]
//! computes the Chernoff exponent of a sum of i.i.d. copies, and the two
//! `empirical_*` functions estimate the conditional tail probabilities that
//! the exponents bound.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{DistSpec, Family};
use crate::error::{Error, Result};
use crate::network::Network;

/// Tolerance of the golden-section search on `theta`.
pub const SEARCH_TOL: f64 = 1e-10;
/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;
/// Rejection attempts per conditional Erlang draw.
pub const ERLANG_MAX_TRIES: u32 = 1_000_000;
/// Trials per parallel block; block `b` draws from stream `b` of the seed.
const BLOCK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Sums above their mean.
    Upper,
    /// Sums below their mean.
    Lower,
}

/// Exponent of a one-sided Chernoff bound `P(...) <= V exp(-L n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffRate {
    pub direction: Direction,
    pub epsilon: f64,
    /// `+inf` when the deviation lies beyond the support.
    pub l: f64,
    /// Maximiser of the Legendre objective; `+inf` when unreachable.
    pub theta_star: f64,
    /// Prefactor: `F(theta*)` above the mean, `exp(L + theta*(alpha - eps))` below.
    pub v: f64,
    pub unreachable: bool,
}

/// Certificate that a distribution has uniformly bounded conditional
/// overshoot moments, which yields LD bounds for its i.i.d. sums and for
/// the associated counting process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdCertificate {
    pub dist: DistSpec,
    pub family: Family,
    /// `F` is finite on `[0, theta0)`; `+inf` for bounded support.
    pub theta0: f64,
    /// Closed form of `F`.
    pub f_bound: String,
}

impl LdCertificate {
    /// `F(theta)`, `+inf` outside the finiteness interval.
    pub fn f(&self, theta: f64) -> f64 {
        let p = &self.dist.params;
        if theta >= self.theta0 {
            return f64::INFINITY;
        }
        match self.family {
            Family::Exponential => p[0] / (p[0] - theta),
            Family::Erlang => (p[1] / (p[1] - theta)).powf(p[0]),
            Family::Deterministic => (theta * p[0]).exp(),
            Family::UniformBounded => (theta * p[1]).exp(),
        }
    }

    /// Two-sided `(L, V)` for `epsilon`: the smaller exponent and the sum
    /// of the one-sided prefactors. Unreachable sides drop out.
    pub fn rate_fn(&self, epsilon: f64) -> Result<(f64, f64)> {
        let up = chernoff_rate(&self.dist, epsilon, Direction::Upper)?;
        let mut l = up.l;
        let mut v = if up.unreachable { 0.0 } else { up.v };
        if epsilon < self.dist.mean() {
            let lo = chernoff_rate(&self.dist, epsilon, Direction::Lower)?;
            if !lo.unreachable {
                l = l.min(lo.l);
                v += lo.v;
            }
        }
        Ok((l, v))
    }

    /// Two-sided tail bound `V exp(-L n)`, clamped to 1.
    pub fn time_bound(&self, epsilon: f64, n: f64) -> Result<f64> {
        let (l, v) = self.rate_fn(epsilon)?;
        if l.is_infinite() {
            return Ok(0.0);
        }
        Ok((v * (-l * n).exp()).min(1.0))
    }
}

/// Certifies the overshoot condition for a supported family.
///
/// Exponential overshoot is exactly the same exponential (memoryless);
/// Erlang overshoot is a mixture of its residual phase counts, dominated by
/// the full `k` phases; bounded families overshoot by at most the support
/// maximum.
pub fn check_exptail(dist: &DistSpec) -> Result<LdCertificate> {
    dist.check()?;
    let p = &dist.params;
    let (theta0, f_bound) = match dist.family {
        Family::Exponential => (p[0], format!("{0}/({0} - theta)", p[0])),
        Family::Erlang => (p[1], format!("({1}/({1} - theta))^{0}", p[0], p[1])),
        Family::Deterministic => (f64::INFINITY, format!("exp({} theta)", p[0])),
        Family::UniformBounded => (f64::INFINITY, format!("exp({} theta)", p[1])),
    };
    Ok(LdCertificate {
        dist: dist.clone(),
        family: dist.family,
        theta0,
        f_bound,
    })
}

/// `E[exp(theta (Z - z)) | Z >= z]` by numerical integration of the
/// conditional density; exact for the deterministic family.
///
/// Serves as an independent check on the certificates' `F`.
pub fn conditional_overshoot_mgf(dist: &DistSpec, theta: f64, z: f64) -> Result<f64> {
    dist.check()?;
    if !(z >= 0.0 && z.is_finite()) {
        return Err(Error::InvalidArgument(format!("threshold must be finite and >= 0, got {z}")));
    }
    let p = &dist.params;
    let (lo, hi) = dist.support();
    if z > hi {
        return Err(Error::InvalidArgument(format!("P(Z >= {z}) = 0 for {dist}")));
    }
    let out = match dist.family {
        Family::Deterministic => (theta * (p[0] - z)).exp(),
        Family::UniformBounded => {
            let a = lo.max(z);
            let w = hi - a;
            let g = |x: f64| (theta * (x - z)).exp() / w;
            quadrature::integrate(g, a, hi, 1e-14).integral
        }
        Family::Exponential | Family::Erlang => {
            let (k, rate) = if dist.family == Family::Exponential {
                (1.0, p[0])
            } else {
                (p[0], p[1])
            };
            if theta >= rate {
                return Ok(f64::INFINITY);
            }
            let log_surv = log_erlang_survival(k, rate, z);
            let log_norm = k * rate.ln() - ln_gamma_int(k);
            let g = |u: f64| {
                let x = z + u;
                let log_pdf = log_norm + (k - 1.0) * x.ln() - rate * x;
                (theta * u + log_pdf - log_surv).exp()
            };
            // beyond `span` the integrand is below exp(-80) times a polynomial
            let span = (80.0 + 10.0 * k) / (rate - theta) + k / rate;
            let pieces = 16;
            (0..pieces)
                .map(|i| {
                    let a = span * i as f64 / pieces as f64;
                    let b = span * (i + 1) as f64 / pieces as f64;
                    quadrature::integrate(g, a, b, 1e-15).integral
                })
                .sum()
        }
    };
    Ok(out)
}

fn ln_gamma_int(k: f64) -> f64 {
    (1..k as u64).map(|j| (j as f64).ln()).sum()
}

/// `ln P(Erlang(k, rate) >= x)`.
fn log_erlang_survival(k: f64, rate: f64, x: f64) -> f64 {
    let y = rate * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k as u64 {
        term *= y / j as f64;
        sum += term;
    }
    -y + sum.ln()
}

/// Maximises a concave function on `[0, hi]` by golden-section search.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Chernoff exponent `L(eps) = sup_theta [theta (alpha + eps) - ln E e^(theta Z)]`
/// above the mean, or `sup_theta [-theta (alpha - eps) - ln E e^(-theta Z)]`
/// below it, found by golden-section search to [`SEARCH_TOL`].
///
/// When the moment generating function is finite only below some end, the
/// search runs up to just inside that end, where the objective is `-inf`.
/// Otherwise the bracket starts at 1 and doubles until the objective turns
/// down. Deviations outside the support give `L = +inf`.
pub fn chernoff_rate(dist: &DistSpec, epsilon: f64, direction: Direction) -> Result<ChernoffRate> {
    dist.check()?;
    let alpha = dist.mean();
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if direction == Direction::Lower && epsilon >= alpha {
        return Err(Error::InvalidArgument(format!(
            "lower deviation needs epsilon < mean {alpha}, got {epsilon}"
        )));
    }
    let (lo, hi) = dist.support();
    let unreachable = match direction {
        Direction::Upper => alpha + epsilon >= hi,
        Direction::Lower => alpha - epsilon <= lo,
    };
    if unreachable {
        return Ok(ChernoffRate {
            direction,
            epsilon,
            l: f64::INFINITY,
            theta_star: f64::INFINITY,
            v: 0.0,
            unreachable: true,
        });
    }
    let objective = |theta: f64| match direction {
        Direction::Upper => theta * (alpha + epsilon) - dist.log_mgf(theta),
        Direction::Lower => -theta * (alpha - epsilon) - dist.log_mgf(-theta),
    };
    let end = match direction {
        Direction::Upper => dist.mgf_domain().0,
        Direction::Lower => f64::INFINITY,
    };
    let b = if end.is_finite() {
        // just inside the open end, where the objective has dropped to -inf
        end * (1.0 - 1e-12)
    } else {
        let mut b: f64 = 1.0;
        while objective(b) > objective(b / 2.0) {
            b *= 2.0;
        }
        b
    };
    let theta_star = golden_max(objective, 0.0, b, SEARCH_TOL);
    let l = objective(theta_star);
    let v = match direction {
        Direction::Upper => check_exptail(dist)?.f(theta_star),
        Direction::Lower => (l + theta_star * (alpha - epsilon)).exp(),
    };
    Ok(ChernoffRate {
        direction,
        epsilon,
        l,
        theta_star,
        v,
        unreachable: false,
    })
}

/// Monte-Carlo frequency of a conditional tail event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdFrequency {
    pub hits: u64,
    /// Trials whose conditioning draw succeeded.
    pub trials: u64,
    /// `hits / trials`; 0 when the conditioning event is empty.
    pub frequency: f64,
    /// Accepted conditional draws over attempts; below 1 only for Erlang.
    pub acceptance_rate: f64,
}

impl LdFrequency {
    /// Binomial standard deviation of the frequency under success
    /// probability `p`.
    pub fn sigma(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        (p * (1.0 - p) / self.trials.max(1) as f64).sqrt()
    }

    /// True when the frequency is at most `bound` plus `k` binomial sigmas.
    pub fn within(&self, bound: f64, k: f64) -> bool {
        self.frequency <= bound.min(1.0) + k * self.sigma(bound)
    }
}

/// Runs `trials` independent trials in parallel blocks; `trial` returns
/// `None` when the conditioning draw failed and otherwise whether the event
/// occurred. Also returns the number of conditional draw attempts.
fn run_trials<F>(trials: u64, seed: u64, trial: F) -> LdFrequency
where
    F: Fn(&mut ChaCha8Rng) -> (Option<bool>, u32) + Sync,
{
    let blocks = trials.div_ceil(BLOCK);
    let (hits, ok, attempts) = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let count = BLOCK.min(trials - b * BLOCK);
            let mut acc = (0u64, 0u64, 0u64);
            for _ in 0..count {
                let (out, tries) = trial(&mut rng);
                acc.2 += tries as u64;
                if let Some(hit) = out {
                    acc.1 += 1;
                    acc.0 += hit as u64;
                }
            }
            acc
        })
        .reduce(|| (0, 0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2));
    LdFrequency {
        hits,
        trials: ok,
        frequency: if ok == 0 { 0.0 } else { hits as f64 / ok as f64 },
        acceptance_rate: if attempts == 0 { 0.0 } else { ok as f64 / attempts as f64 },
    }
}

/// Frequency of `|Z_1 + ... + Z_n - z - alpha n| >= eps n` given `Z_1 >= z`.
pub fn empirical_ld_time(
    dist: &DistSpec,
    epsilon: f64,
    n: u64,
    z: f64,
    trials: u64,
    seed: u64,
) -> Result<LdFrequency> {
    check_mc(dist, epsilon, z, trials)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let alpha = dist.mean();
    let nf = n as f64;
    Ok(run_trials(trials, seed, |rng| {
        let (first, tries) = dist.sample_conditional(rng, z, ERLANG_MAX_TRIES);
        let Some(first) = first else { return (None, tries) };
        let rest: f64 = (1..n).map(|_| dist.sample(rng)).sum();
        let dev = first + rest - z - alpha * nf;
        (Some(dev.abs() >= epsilon * nf), tries)
    }))
}

/// Frequency of `|N(t + z) - t / alpha| >= eps t` given `Z_1 >= z`, where
/// `N(s) = max { k : Z_1 + ... + Z_k <= s }`.
///
/// `N` is read off the partial sums through `N(s) >= k <=> S_k <= s`.
pub fn empirical_ld_rate(
    dist: &DistSpec,
    epsilon: f64,
    t: f64,
    z: f64,
    trials: u64,
    seed: u64,
) -> Result<LdFrequency> {
    check_mc(dist, epsilon, z, trials)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("t must be finite and >= 0, got {t}")));
    }
    let alpha = dist.mean();
    let s = t + z;
    Ok(run_trials(trials, seed, |rng| {
        let (first, tries) = dist.sample_conditional(rng, z, ERLANG_MAX_TRIES);
        let Some(mut sum) = first else { return (None, tries) };
        let mut count = 0u64;
        while sum <= s {
            count += 1;
            sum += dist.sample(rng);
        }
        (Some((count as f64 - t / alpha).abs() >= epsilon * t), tries)
    }))
}

fn check_mc(dist: &DistSpec, epsilon: f64, z: f64, trials: u64) -> Result<()> {
    dist.check()?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(z >= 0.0 && z.is_finite()) {
        return Err(Error::InvalidArgument(format!("threshold must be finite and >= 0, got {z}")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    Ok(())
}

/// Pooled two-proportion z statistic.
pub fn two_proportion_z(a: &LdFrequency, b: &LdFrequency) -> f64 {
    let (n1, n2) = (a.trials as f64, b.trials as f64);
    let pooled = (a.hits + b.hits) as f64 / (n1 + n2);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
    if se == 0.0 {
        return 0.0;
    }
    (a.frequency - b.frequency) / se
}

/// Per-sequence constants of a network and their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLd {
    pub epsilon: f64,
    /// `(label, L, V)` per arrival and service sequence.
    pub per_sequence: Vec<(String, f64, f64)>,
    /// Smallest exponent over the sequences.
    pub l: f64,
    /// Largest prefactor over the sequences.
    pub v: f64,
    /// How the common pair was formed.
    pub aggregation: String,
}

/// Computes `(L, V)` for every primitive sequence and combines them into a
/// common pair with `min L` and `max V`.
pub fn network_ld_constants(net: &Network, epsilon: f64) -> Result<NetworkLd> {
    let mut per_sequence = Vec::new();
    for ty in 0..net.types() {
        let (l, v) = check_exptail(net.arrival_dist(ty))?.rate_fn(epsilon)?;
        per_sequence.push((format!("arrival[{ty}]"), l, v));
    }
    for k in 0..net.classes() {
        let (l, v) = check_exptail(net.service_dist(k))?.rate_fn(epsilon)?;
        per_sequence.push((format!("service[{k}]"), l, v));
    }
    let l = per_sequence.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let v = per_sequence.iter().map(|s| s.2).fold(0.0, f64::max);
    Ok(NetworkLd {
        epsilon,
        per_sequence,
        l,
        v,
        aggregation: "min L, max V over per-sequence constants".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_closed_form(eps: f64) -> f64 {
        eps - (1.0 + eps).ln()
    }

    #[test]
    fn exponential_rate_matches_legendre_transform() {
        let d = DistSpec::exponential(1.0);
        for eps in [0.1, 0.5, 1.0] {
            let r = chernoff_rate(&d, eps, Direction::Upper).unwrap();
            assert!((r.l - exp_closed_form(eps)).abs() < 1e-8, "{eps}: {}", r.l);
            assert!((r.theta_star - eps / (1.0 + eps)).abs() < 1e-6);
            assert!((r.v - (1.0 + eps)).abs() < 1e-5);
        }
        // rate 2: alpha = 1/2, L = 2(alpha + eps) - 1 - ln(2(alpha + eps))
        let d = DistSpec::exponential(2.0);
        let r = chernoff_rate(&d, 0.25, Direction::Upper).unwrap();
        let x: f64 = 2.0 * 0.75;
        assert!((r.l - (x - 1.0 - x.ln())).abs() < 1e-8);
    }

    #[test]
    fn exponential_lower_rate() {
        // below the mean: L = -eps - ln(1 - eps) for rate 1
        let d = DistSpec::exponential(1.0);
        for eps in [0.1, 0.5, 0.9] {
            let r = chernoff_rate(&d, eps, Direction::Lower).unwrap();
            let want = -eps - (1.0 - eps).ln();
            assert!((r.l - want).abs() < 1e-8, "{eps}: {} vs {want}", r.l);
        }
        assert!(chernoff_rate(&d, 1.0, Direction::Lower).is_err());
    }

    #[test]
    fn bounded_families_report_unreachable() {
        let r = chernoff_rate(&DistSpec::deterministic(1.0), 0.3, Direction::Upper).unwrap();
        assert!(r.unreachable && r.l.is_infinite());
        let u = DistSpec::uniform(0.0, 2.0);
        assert!(chernoff_rate(&u, 1.5, Direction::Upper).unwrap().unreachable);
        let r = chernoff_rate(&u, 0.5, Direction::Upper).unwrap();
        assert!(!r.unreachable && r.l > 0.0 && r.l.is_finite());
    }

    #[test]
    fn rate_vanishes_monotonically() {
        for d in [DistSpec::exponential(1.0), DistSpec::erlang(3, 2.0), DistSpec::uniform(0.5, 1.5)] {
            let mut prev = f64::INFINITY;
            for eps in [0.4, 0.2, 0.1, 0.05, 0.01, 0.001] {
                let l = chernoff_rate(&d, eps, Direction::Upper).unwrap().l;
                assert!(l > 0.0 && l < prev, "{d} at {eps}: {l}");
                prev = l;
            }
            assert!(prev < 1e-4);
        }
    }

    #[test]
    fn certificates_match_integrated_overshoot() {
        let c = check_exptail(&DistSpec::exponential(1.0)).unwrap();
        assert_eq!(c.f(0.5), 2.0);
        for z in [0.0, 1.0, 10.0] {
            let m = conditional_overshoot_mgf(&DistSpec::exponential(1.0), 0.5, z).unwrap();
            assert!((m - 2.0).abs() < 1e-8, "z = {z}: {m}");
        }
        // erlang overshoot never exceeds the full-phase bound
        let e = DistSpec::erlang(3, 2.0);
        let c = check_exptail(&e).unwrap();
        for z in [0.0, 0.5, 3.0, 20.0] {
            let m = conditional_overshoot_mgf(&e, 1.0, z).unwrap();
            assert!(m <= c.f(1.0) + 1e-9, "z = {z}: {m} > {}", c.f(1.0));
        }
        let u = DistSpec::uniform(0.5, 1.5);
        let c = check_exptail(&u).unwrap();
        for z in [0.0, 1.0, 1.4] {
            assert!(conditional_overshoot_mgf(&u, 2.0, z).unwrap() <= c.f(2.0));
        }
    }

    #[test]
    fn zero_theta_gives_one() {
        for d in [
            DistSpec::exponential(3.0),
            DistSpec::erlang(2, 1.0),
            DistSpec::deterministic(2.0),
            DistSpec::uniform(0.0, 1.0),
        ] {
            assert_eq!(check_exptail(&d).unwrap().f(0.0), 1.0);
        }
        let c = check_exptail(&DistSpec::deterministic(1.0)).unwrap();
        assert!((c.f(0.7) - 0.7f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn deterministic_counting_never_deviates() {
        let f = empirical_ld_rate(&DistSpec::deterministic(1.0), 0.5, 10.0, 0.0, 1000, 1).unwrap();
        assert_eq!(f.hits, 0);
        let f = empirical_ld_time(&DistSpec::exponential(1.0), 1e6, 1, 0.0, 1000, 1).unwrap();
        assert_eq!(f.frequency, 0.0);
    }

    #[test]
    fn empty_conditioning_event() {
        let f = empirical_ld_time(&DistSpec::deterministic(1.0), 0.1, 5, 2.0, 100, 0).unwrap();
        assert_eq!((f.trials, f.frequency), (0, 0.0));
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let d = DistSpec::erlang(2, 2.0);
        let a = empirical_ld_time(&d, 0.3, 20, 1.0, 10_000, 5).unwrap();
        let b = empirical_ld_time(&d, 0.3, 20, 1.0, 10_000, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.acceptance_rate < 1.0 && a.acceptance_rate > 0.0);
    }

    #[test]
    fn network_constants_aggregate() {
        let net = crate::fixtures::rybko_stolyar();
        let c = network_ld_constants(&net, 0.1).unwrap();
        assert_eq!(c.per_sequence.len(), 6);
        assert!(c.per_sequence.iter().all(|s| s.1 >= c.l && s.2 <= c.v));
    }
}
