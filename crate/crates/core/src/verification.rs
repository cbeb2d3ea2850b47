//! Independent oracles: finite differences, conjugate posteriors,
//! surrogate-monotonicity audits and Taylor-remainder scaling.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::models::{ConditionalDenoiser, Embedding, State};
use crate::rewards::RewardSpec;
use crate::samplers::TrajectoryRecord;
use crate::steering::{embedopt_step, taylor_predicted_step, EmbedNormMode};

pub const DEFAULT_MONOTONE_TOL: f64 = 1e-9;
pub const DEFAULT_HISTOGRAM_BINS: usize = 60;
/// Gaps below this at both step sizes mark an affine (exact) probe.
pub const EXACT_GAP: f64 = 1e-14;

/// Central-difference gradient of `f` at `point`.
pub fn fd_gradient<F>(f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(invalid(format!("step must be positive, got {h}")));
    }
    let mut p = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        p[i] = point[i] + h;
        let fp = f(&p);
        p[i] = point[i] - h;
        let fm = f(&p);
        p[i] = point[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::OracleFailure(format!("non-finite value around coordinate {i}")));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Posterior of `N(prior_mean, prior_var)` under the reweighted likelihood
/// `N(y | x, tau2)^w`. Returns `(mean, variance)`.
pub fn conjugate_posterior(prior_mean: f64, prior_var: f64, y: f64, tau2: f64, w: f64) -> Result<(f64, f64)> {
    if !(prior_var > 0.0) || !(tau2 > 0.0) || !(w >= 0.0) {
        return Err(invalid("need prior_var > 0, tau2 > 0 and w >= 0"));
    }
    let var = 1.0 / (1.0 / prior_var + w / tau2);
    Ok((var * (prior_mean / prior_var + w * y / tau2), var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub total_steps: usize,
    pub violations: usize,
    pub max_violation_magnitude: f64,
    pub tol: f64,
}

impl MonotonicityReport {
    pub fn violation_rate(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.violations as f64 / self.total_steps as f64
        }
    }
}

/// Counts consecutive steps where `F_{t-1} < F_t − tol`.
pub fn check_monotone_surrogate(trajectory: &TrajectoryRecord, tol: f64) -> Result<MonotonicityReport> {
    let values = trajectory
        .entries
        .iter()
        .map(|e| {
            e.surrogate_reward
                .ok_or_else(|| Error::InvalidTrajectory(format!("step {} has no surrogate reward", e.step)))
        })
        .collect::<Result<Vec<_>>>()?;
    monotone_report(&values, tol)
}

/// Same audit over a bare sequence ordered from `t = T` downwards.
pub fn monotone_report(values: &[f64], tol: f64) -> Result<MonotonicityReport> {
    if !(tol >= 0.0) {
        return Err(invalid("tolerance must be >= 0"));
    }
    let mut violations = 0;
    let mut worst = 0.0f64;
    for w in values.windows(2) {
        let drop = w[0] - w[1];
        if drop > tol {
            violations += 1;
            worst = worst.max(drop);
        }
    }
    Ok(MonotonicityReport {
        total_steps: values.len().saturating_sub(1),
        violations,
        max_violation_magnitude: worst,
        tol,
    })
}

/// One point at which to compare a real EmbedOpt step with its first-order
/// prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorProbe {
    pub x: State,
    pub c: Embedding,
    pub sigma: f64,
    pub sigma_prev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorProbeResult {
    pub gap_full: f64,
    pub gap_half: f64,
    /// `gap(α)/gap(α/2)`; `None` for exact probes
    pub ratio: Option<f64>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorGapReport {
    pub alpha: f64,
    pub probes: Vec<TaylorProbeResult>,
    pub median_ratio: Option<f64>,
    pub exact_count: usize,
}

/// `‖embedopt_step.x_prev − taylor_predicted_step‖` at one probe.
pub fn taylor_gap<M: ConditionalDenoiser>(
    model: &M,
    reward: &RewardSpec,
    probe: &TaylorProbe,
    alpha: f64,
    norm_mode: EmbedNormMode,
) -> Result<f64> {
    let args = (&probe.x, &probe.c, probe.sigma, probe.sigma_prev);
    let real = embedopt_step(model, reward, args.0, args.1, args.2, args.3, alpha, norm_mode)?;
    let pred = taylor_predicted_step(model, reward, args.0, args.1, args.2, args.3, alpha, norm_mode)?;
    let gap = linalg::norm(&linalg::sub(&real.x_prev.coords, &pred.coords));
    if !gap.is_finite() {
        return Err(Error::OracleFailure("non-finite Taylor gap".into()));
    }
    Ok(gap)
}

/// Gaps at `α` and `α/2` for every probe. A second-order remainder gives a
/// ratio near 4.
pub fn taylor_gap_scaling<M: ConditionalDenoiser>(
    model: &M,
    reward: &RewardSpec,
    probes: &[TaylorProbe],
    alpha: f64,
    norm_mode: EmbedNormMode,
) -> Result<TaylorGapReport> {
    let mut results = Vec::with_capacity(probes.len());
    for p in probes {
        let gap_full = taylor_gap(model, reward, p, alpha, norm_mode)?;
        let gap_half = taylor_gap(model, reward, p, alpha / 2.0, norm_mode)?;
        let exact = gap_full < EXACT_GAP && gap_half < EXACT_GAP;
        results.push(TaylorProbeResult {
            gap_full,
            gap_half,
            ratio: (!exact).then(|| gap_full / gap_half),
            exact,
        });
    }
    let mut ratios: Vec<f64> = results.iter().filter_map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let median_ratio = match ratios.len() {
        0 => None,
        n if n % 2 == 1 => Some(ratios[n / 2]),
        n => Some(0.5 * (ratios[n / 2 - 1] + ratios[n / 2])),
    };
    Ok(TaylorGapReport {
        alpha,
        exact_count: results.iter().filter(|r| r.exact).count(),
        probes: results,
        median_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Fixed-width bins over `[min, max]`; the last bin is closed.
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("histogram needs at least one bin"));
        }
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("histogram needs finite values"));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let idx = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_left", "bin_right", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub count: usize,
    pub mean: Vec<f64>,
    /// sample standard deviation (n − 1)
    pub std: Vec<f64>,
    /// histogram of the first coordinate
    pub histogram: Histogram,
}

pub fn summarize_samples(samples: &[State]) -> Result<SampleSummary> {
    summarize_samples_with_bins(samples, DEFAULT_HISTOGRAM_BINS)
}

pub fn summarize_samples_with_bins(samples: &[State], bins: usize) -> Result<SampleSummary> {
    if samples.len() < 2 {
        return Err(invalid(format!("need at least 2 samples, got {}", samples.len())));
    }
    let dim = samples[0].dim();
    if dim == 0 || samples.iter().any(|s| s.dim() != dim) {
        return Err(invalid("samples must share a non-zero dimension"));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        linalg::axpy(1.0, &s.coords, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for s in samples {
        for (v, (x, m)) in var.iter_mut().zip(s.coords.iter().zip(&mean)) {
            *v += (x - m) * (x - m);
        }
    }
    let std = var.into_iter().map(|v| (v / (n - 1.0)).sqrt()).collect();
    let first: Vec<f64> = samples.iter().map(|s| s.coords[0]).collect();
    Ok(SampleSummary {
        count: samples.len(),
        mean,
        std,
        histogram: Histogram::new(&first, bins)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{seeded_rng, standard_normal_vec};
    use crate::rewards::GaussianMeasurementReward;

    #[test]
    fn fd_examples() {
        let g = fd_gradient(|p| p[0] * p[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-7);
        assert_eq!(fd_gradient(|_| 2.5, &[1.0, -4.0], 1e-5).unwrap(), vec![0.0, 0.0]);
        let r: RewardSpec = GaussianMeasurementReward::new(vec![20.0], 1.0, 1.0).unwrap().into();
        let g = fd_gradient(|p| r.value(&State::new(p.to_vec())).unwrap(), &[8.0], 1e-5).unwrap();
        let (_, analytic) = r.value_and_grad(&State::scalar(8.0)).unwrap();
        assert!((g[0] - analytic[0]).abs() < 1e-6);
        assert!((g[0] - 12.0).abs() < 1e-6);
        assert!(matches!(
            fd_gradient(|p| (p[0] - 1.0).ln(), &[1.0], 1e-3),
            Err(Error::OracleFailure(_))
        ));
    }

    #[test]
    fn posterior_examples() {
        let (m, v) = conjugate_posterior(5.0, 0.25, 20.0, 1.0, 1.0).unwrap();
        assert!((m - 8.0).abs() < 1e-12 && (v - 0.2).abs() < 1e-12);
        let (m, v) = conjugate_posterior(5.0, 0.25, 20.0, 1.0, 100.0).unwrap();
        assert!((m - 2020.0 / 104.0).abs() < 1e-12 && (v - 1.0 / 104.0).abs() < 1e-12);
        assert_eq!(conjugate_posterior(5.0, 0.25, 20.0, 1.0, 0.0).unwrap(), (5.0, 0.25));
        assert!(conjugate_posterior(5.0, 0.0, 20.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn monotone_examples() {
        let r = monotone_report(&[-72.0, -60.0, -50.0], 1e-9).unwrap();
        assert_eq!((r.total_steps, r.violations), (2, 0));
        let r = monotone_report(&[-50.0, -51.0], 1e-9).unwrap();
        assert_eq!(r.violations, 1);
        assert!((r.max_violation_magnitude - 1.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_needs_rewards() {
        let rec = TrajectoryRecord {
            entries: vec![crate::samplers::TrajectoryEntry {
                step: 1,
                sigma: 1.0,
                surrogate_reward: None,
                grad_norm: 0.0,
                embed_drift: 0.0,
                skipped: false,
                snapshot: None,
            }],
        };
        assert!(matches!(
            check_monotone_surrogate(&rec, 1e-9),
            Err(Error::InvalidTrajectory(_))
        ));
    }

    #[test]
    fn summary_examples() {
        let s = summarize_samples(&[State::scalar(0.0), State::scalar(2.0)]).unwrap();
        assert!((s.mean[0] - 1.0).abs() < 1e-15);
        assert!((s.std[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.histogram.counts.len(), 60);

        let same = summarize_samples(&vec![State::scalar(3.0); 5]).unwrap();
        assert_eq!(same.std[0], 0.0);
        assert_eq!(same.histogram.counts.iter().filter(|c| **c > 0).count(), 1);

        assert!(summarize_samples(&[State::scalar(1.0)]).is_err());
    }

    #[test]
    fn summary_of_standard_normal() {
        let mut rng = seeded_rng(11);
        let samples: Vec<State> = standard_normal_vec(&mut rng, 100_000)
            .into_iter()
            .map(State::scalar)
            .collect();
        let s = summarize_samples(&samples).unwrap();
        assert!(s.mean[0].abs() < 0.02);
        assert!((s.std[0] - 1.0).abs() < 0.02);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 100_000);
    }

    #[test]
    fn histogram_csv_layout() {
        let h = Histogram::new(&[0.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.to_csv_string().unwrap(), "bin_left,bin_right,count\n0,1,1\n1,2,2\n");
    }
}
