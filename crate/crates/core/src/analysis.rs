//! Estimators over simulated traces: rate stability, the finite-horizon
//! divergence rate, and closeness of tracked runs to their fluid plan.
//!
//! Every estimator is a pure function of its input traces, so reports
//! computed from serialized traces reproduce bit-for-bit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::FluidSolution;
use crate::network::Network;
use crate::sim::SimTrace;
use crate::tracker::AllocationPlan;

/// Share of seeds that must match every throughput for the ensemble
/// verdict "rate-stable evidence".
pub const STABLE_SHARE: f64 = 0.9;
/// Default trailing window of [`divergence_estimate`].
pub const DEFAULT_WINDOW: f64 = 0.5;
/// Default half-width, relative to `n`, of the band in [`closeness_report`].
pub const DEFAULT_BAND: f64 = 0.1;

/// Runs `f` once per seed in parallel; results come back in seed order.
pub fn run_ensemble<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    seeds.par_iter().map(|&s| f(s)).collect()
}

/// Linear-interpolation quantile (R type 7) of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty data");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// 5%, 50% and 95% quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        Quantiles {
            q05: quantile(values, 0.05),
            q50: quantile(values, 0.5),
            q95: quantile(values, 0.95),
        }
    }
}

/// `min ||Q(t)|| / t` over the sample times in the last `window_fraction`
/// of the horizon, a finite-horizon proxy for `liminf ||Q(t)|| / t`.
pub fn divergence_estimate(trace: &SimTrace, window_fraction: f64) -> Result<f64> {
    if !(window_fraction > 0.0 && window_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "window fraction must lie in (0, 1), got {window_fraction}"
        )));
    }
    let h = trace.horizon();
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("trace has zero horizon".into()));
    }
    let from = h * (1.0 - window_fraction);
    let est = trace
        .times
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t >= from && t > 0.0)
        .map(|(i, &t)| trace.total_queue(i) as f64 / t)
        .fold(f64::INFINITY, f64::min);
    if est.is_infinite() {
        return Err(Error::InvalidArgument("no samples in the trailing window".into()));
    }
    Ok(est)
}

/// Per-seed part of a [`StabilityReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStability {
    pub seed: u64,
    /// `D_(i, last)(T) / T` per type.
    pub throughput: Vec<f64>,
    /// `Q_k(T) / T` per class.
    pub growth: Vec<f64>,
    pub throughput_ok: bool,
    /// `||Q(T)|| / T` below the smallest tolerance.
    pub sublinear: bool,
    pub divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub horizon: f64,
    pub lambda: Vec<f64>,
    /// Throughput tolerance per type.
    pub tol: Vec<f64>,
    pub seeds: Vec<SeedStability>,
    /// Share of seeds matching every throughput.
    pub stable_share: f64,
    /// Share of seeds with sublinear growth.
    pub sublinear_share: f64,
    /// At least [`STABLE_SHARE`] of the seeds match every throughput.
    pub rate_stable_evidence: bool,
    pub divergence: Quantiles,
}

/// Throughput and growth report over an ensemble sharing network and
/// horizon. `tol` defaults to `3 / sqrt(lambda_i T)` per type.
pub fn rate_stability_estimate(traces: &[SimTrace], net: &Network, tol: Option<f64>) -> Result<StabilityReport> {
    let first = traces.first().ok_or(Error::EmptyEnsemble)?;
    let horizon = first.horizon();
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("ensemble has zero horizon".into()));
    }
    for tr in traces {
        if tr.q.last().map(Vec::len) != Some(net.classes()) || tr.d.last().map(Vec::len) != Some(net.classes()) {
            return Err(Error::Dimension("trace does not match the network".into()));
        }
        if (tr.horizon() - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "traces end at different horizons: {} vs {horizon}",
                tr.horizon()
            )));
        }
    }
    let lambda: Vec<f64> = (0..net.types()).map(|i| net.lambda(i)).collect();
    let tols: Vec<f64> = lambda
        .iter()
        .map(|&l| tol.unwrap_or(3.0 / (l * horizon).sqrt()))
        .collect();
    let min_tol = tols.iter().copied().fold(f64::INFINITY, f64::min);
    let seeds: Vec<SeedStability> = traces
        .iter()
        .map(|tr| {
            let last = tr.len() - 1;
            let throughput: Vec<f64> = (0..net.types())
                .map(|i| tr.d[last][net.last_class(i)] as f64 / horizon)
                .collect();
            let growth: Vec<f64> = tr.q[last].iter().map(|&x| x as f64 / horizon).collect();
            let throughput_ok = throughput
                .iter()
                .zip(&lambda)
                .zip(&tols)
                .all(|((d, l), t)| (d - l).abs() < *t);
            let sublinear = growth.iter().sum::<f64>() < min_tol;
            Ok(SeedStability {
                seed: tr.seed,
                throughput,
                growth,
                throughput_ok,
                sublinear,
                divergence: divergence_estimate(tr, DEFAULT_WINDOW)?,
            })
        })
        .collect::<Result<_>>()?;
    let k = seeds.len() as f64;
    let stable_share = seeds.iter().filter(|s| s.throughput_ok).count() as f64 / k;
    let sublinear_share = seeds.iter().filter(|s| s.sublinear).count() as f64 / k;
    let div: Vec<f64> = seeds.iter().map(|s| s.divergence).collect();
    Ok(StabilityReport {
        horizon,
        lambda,
        tol: tols,
        stable_share,
        sublinear_share,
        rate_stable_evidence: stable_share >= STABLE_SHARE,
        divergence: Quantiles::of(&div),
        seeds,
    })
}

/// One grid time of a [`ClosenessReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessRow {
    pub m: usize,
    pub time: f64,
    /// Decomposition piece containing the grid time.
    pub segment: usize,
    /// `log10` of `delta_strict C^(r+3) n`.
    pub strict_bound_log10: f64,
    /// `delta_applied C^(r+3) n`.
    pub applied_bound: f64,
    /// Seed shares within each bound at this grid time, all classes at once.
    pub within_strict: f64,
    pub within_applied: f64,
    pub within_band: f64,
}

/// Seed shares staying within the closeness bound at every grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    pub n: f64,
    pub seeds: usize,
    pub band: f64,
    pub rows: Vec<ClosenessRow>,
    /// Bound built from the grid constant the plan applies.
    pub fraction_applied: f64,
    /// Bound built from the strict grid constant.
    pub fraction_strict: f64,
    /// `|Q_k - Qbar_k| <= band n`.
    pub fraction_band: f64,
    /// Mean over grid times of `within_band`.
    pub mean_within_band: f64,
}

impl ClosenessReport {
    /// CSV with one row per grid time.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Parse(e.to_string());
        w.write_record([
            "m",
            "time",
            "segment",
            "strict_bound_log10",
            "applied_bound",
            "within_strict",
            "within_applied",
            "within_band",
        ])
        .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.m.to_string(),
                r.time.to_string(),
                r.segment.to_string(),
                r.strict_bound_log10.to_string(),
                r.applied_bound.to_string(),
                r.within_strict.to_string(),
                r.within_applied.to_string(),
                r.within_band.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ascii"))
    }
}

/// Compares tracked runs with the planned fluid at every grid time.
///
/// A seed is within a bound when `|Q_k(t_m) - Qbar_k(t_m)|` stays below it
/// for all classes and all grid times. Traces must be sampled at every grid
/// time (sample step equal to the interval length) and start in the plan's
/// state.
pub fn closeness_report(
    traces: &[SimTrace],
    net: &Network,
    plan: &AllocationPlan,
    fluid: &FluidSolution,
    band: f64,
) -> Result<ClosenessReport> {
    if traces.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    plan.matches(fluid, 1e-9 * plan.n.max(1.0))?;
    let n = plan.n;
    let grid = &plan.grid;
    // sample index of every grid time, per trace
    let index: Vec<Vec<usize>> = traces
        .iter()
        .map(|tr| {
            if tr.q[0].iter().zip(&plan.q).any(|(&a, &b)| a as f64 != b) {
                return Err(Error::PlanMismatch("trace starts away from the plan state".into()));
            }
            grid.iter()
                .map(|&t| {
                    let i = tr.times.partition_point(|&x| x < t - 1e-9 * t.max(1.0));
                    match tr.times.get(i) {
                        Some(&x) if (x - t).abs() <= 1e-9 * t.max(1.0) => Ok(i),
                        _ => Err(Error::InvalidArgument(format!("trace has no sample at grid time {t}"))),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let lc = net.constants().c_big.log10();
    let mut ok_strict = vec![true; traces.len()];
    let mut ok_applied = vec![true; traces.len()];
    let mut ok_band = vec![true; traces.len()];
    let mut rows = Vec::with_capacity(grid.len());
    for (m, &t) in grid.iter().enumerate() {
        let r = plan.segment_of(m);
        let strict_bound_log10 = plan.delta.strict_log10 + (r as f64 + 3.0) * lc + n.log10();
        let applied_bound = plan.delta.applied * 10f64.powf((r as f64 + 3.0) * lc) * n;
        let target = &plan.grid_q[m];
        let mut counts = [0usize; 3];
        for (s, tr) in traces.iter().enumerate() {
            let dev = tr.q[index[s][m]]
                .iter()
                .zip(target)
                .map(|(&a, &b)| (a as f64 - b).abs())
                .fold(0.0, f64::max);
            let hits = [
                dev == 0.0 || dev.log10() <= strict_bound_log10,
                dev <= applied_bound,
                dev <= band * n,
            ];
            for (j, h) in hits.iter().enumerate() {
                counts[j] += *h as usize;
            }
            ok_strict[s] &= hits[0];
            ok_applied[s] &= hits[1];
            ok_band[s] &= hits[2];
        }
        let k = traces.len() as f64;
        rows.push(ClosenessRow {
            m,
            time: t,
            segment: r,
            strict_bound_log10,
            applied_bound,
            within_strict: counts[0] as f64 / k,
            within_applied: counts[1] as f64 / k,
            within_band: counts[2] as f64 / k,
        });
    }
    let share = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
    let mean_within_band = rows.iter().map(|r| r.within_band).sum::<f64>() / rows.len() as f64;
    Ok(ClosenessReport {
        n,
        seeds: traces.len(),
        band,
        fraction_applied: share(&ok_applied),
        fraction_strict: share(&ok_strict),
        fraction_band: share(&ok_band),
        mean_within_band,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_trace(times: &[f64], slope: f64) -> SimTrace {
        let q: Vec<Vec<u64>> = times.iter().map(|&t| vec![(slope * t).round() as u64]).collect();
        SimTrace {
            seed: 0,
            policy: "synthetic".into(),
            times: times.to_vec(),
            a: vec![vec![0]; times.len()],
            d: vec![vec![0]; times.len()],
            t: vec![vec![0.0]; times.len()],
            qmin: vec![vec![0]; times.len()],
            q,
            events: Vec::new(),
            event_count: 0,
            residual_max_err: 0.0,
            counting_max_err: 0.0,
        }
    }

    #[test]
    fn divergence_of_simple_traces() {
        let times: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(divergence_estimate(&linear_trace(&times, 0.0), 0.5).unwrap(), 0.0);
        assert_eq!(divergence_estimate(&linear_trace(&times, 1.0), 0.5).unwrap(), 1.0);
        assert!(divergence_estimate(&linear_trace(&times, 1.0), 1.0).is_err());
        assert!(divergence_estimate(&linear_trace(&[0.0], 1.0), 0.5).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert!((quantile(&v, 0.05) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        let net = crate::fixtures::single_queue();
        assert!(matches!(rate_stability_estimate(&[], &net, None), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn ensemble_keeps_seed_order() {
        let out = run_ensemble(&[5, 3, 9], |s| Ok(s * 2)).unwrap();
        assert_eq!(out, vec![10, 6, 18]);
    }
}
