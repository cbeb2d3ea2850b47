//! Experiment harnesses: conjugate 1-D histograms, learning-rate sweeps,
//! step-scaling tables and single runs.

use std::collections::BTreeMap;
use std::time::Instant;

use embedsteer::linalg::seeded_rng;
use embedsteer::models::DenoiserModel;
use embedsteer::rewards::{GaussianMeasurementReward, RewardSpec};
use embedsteer::samplers::InitMode;
use embedsteer::steering::{run_method, DpsNormMode, SteeringConfig, SteeringMethod};
use embedsteer::verification::{
    check_monotone_surrogate, conjugate_posterior, summarize_samples_with_bins, DEFAULT_MONOTONE_TOL,
};
use embedsteer::{NoiseSchedule, State, TrajectoryRecord};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind, Problem};
use crate::error::BenchError;
use crate::output::Artifacts;
use crate::task::task_metric;

/// One independent trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub method: SteeringMethod,
    pub alpha: f64,
    pub seed: u64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: RunSpec,
    pub x0: State,
    pub final_reward: f64,
    pub metric: f64,
    pub violations: usize,
    pub skips: usize,
    pub nan_count: usize,
    pub runtime_s: f64,
    pub record: TrajectoryRecord,
}

pub fn method_name(m: SteeringMethod) -> &'static str {
    match m {
        SteeringMethod::None => "none",
        SteeringMethod::Embedopt => "embedopt",
        SteeringMethod::Dps => "dps",
    }
}

/// Runs one trajectory with the spec's method and α on top of `base`.
pub fn execute(
    problem: &Problem,
    reward: &RewardSpec,
    schedule: &NoiseSchedule,
    base: &SteeringConfig,
    spec: RunSpec,
) -> Result<RunResult, BenchError> {
    let start = Instant::now();
    let cfg = SteeringConfig {
        method: spec.method,
        alpha: spec.alpha,
        seed: spec.seed,
        ..*base
    };
    let out = run_method(&problem.model, reward, &problem.embedding, schedule, &cfg, &mut seeded_rng(spec.seed))?;
    let nan_count = out
        .record
        .entries
        .iter()
        .filter(|e| e.surrogate_reward.is_some_and(|f| !f.is_finite()))
        .count()
        + out.x0.coords.iter().filter(|v| !v.is_finite()).count();
    let (final_reward, metric) = if out.x0.is_finite() {
        (reward.value(&out.x0)?, task_metric(reward, &out.x0)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(RunResult {
        spec,
        final_reward,
        metric,
        violations: check_monotone_surrogate(&out.record, DEFAULT_MONOTONE_TOL)?.violations,
        skips: out.record.skip_count(),
        nan_count,
        runtime_s: start.elapsed().as_secs_f64(),
        x0: out.x0,
        record: out.record,
    })
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, BenchError> {
    let n = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| BenchError::Validation(format!("cannot build worker pool: {e}")))
}

/// Fans the specs out to a bounded pool; results come back in spec order.
pub fn execute_all(
    problem: &Problem,
    reward: &RewardSpec,
    schedules: &BTreeMap<usize, NoiseSchedule>,
    base: &SteeringConfig,
    specs: &[RunSpec],
    jobs: Option<usize>,
) -> Result<Vec<RunResult>, BenchError> {
    pool(jobs)?.install(|| {
        specs
            .par_iter()
            .map(|s| execute(problem, reward, &schedules[&s.steps], base, *s))
            .collect()
    })
}

fn single_schedule(cfg: &ExperimentConfig) -> Result<(usize, BTreeMap<usize, NoiseSchedule>), BenchError> {
    let spec = cfg.schedule_spec()?;
    let sched = spec.build().map_err(|e| BenchError::Validation(e.to_string()))?;
    Ok((spec.steps(), BTreeMap::from([(spec.steps(), sched)])))
}

/// Output of an experiment before it is written.
pub struct ExperimentOutput {
    pub artifacts: Artifacts,
    pub summary: serde_json::Value,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, BenchError> {
    match cfg.kind {
        ExperimentKind::SyntheticFig1 => run_synthetic_fig1(cfg),
        ExperimentKind::LrSweep => run_lr_sweep(cfg),
        ExperimentKind::StepScaling => run_step_scaling(cfg),
        ExperimentKind::SingleRun => run_single(cfg),
        ExperimentKind::Verify => crate::verify::run_verify_experiment(),
    }
}

fn require_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<(), BenchError> {
    if cfg.kind != kind {
        return Err(BenchError::Validation(format!(
            "config kind is {}, expected {}",
            cfg.kind.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

/// Closed-form inputs of the 1-D conjugate setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig1Oracle {
    pub prior_mean: f64,
    pub prior_std: f64,
    pub y: f64,
    pub tau2: f64,
}

pub fn fig1_oracle_inputs(cfg: &ExperimentConfig) -> Result<Fig1Oracle, BenchError> {
    let problem = cfg.problem()?;
    let bad = || BenchError::Validation("synthetic_fig1 needs a 1-D Gaussian prior and a 1-D Gaussian measurement reward".into());
    let (DenoiserModel::Gaussian(model), RewardSpec::Gaussian(reward)) = (&problem.model, &problem.reward) else {
        return Err(bad());
    };
    let mean = model.prior_mean(&problem.embedding)?;
    if mean.len() != 1 || reward.y.len() != 1 {
        return Err(bad());
    }
    Ok(Fig1Oracle {
        prior_mean: mean[0],
        prior_std: model.prior_std(),
        y: reward.y[0],
        tau2: reward.tau2,
    })
}

#[derive(Debug, Serialize)]
struct HistRow {
    bin_left: f64,
    bin_right: f64,
    count: usize,
}

/// Prior, DPS and EmbedOpt sample histograms in the conjugate 1-D setting.
pub fn run_synthetic_fig1(cfg: &ExperimentConfig) -> Result<ExperimentOutput, BenchError> {
    require_kind(cfg, ExperimentKind::SyntheticFig1)?;
    let oracle = fig1_oracle_inputs(cfg)?;
    let problem = cfg.problem()?;
    let (steps, schedules) = single_schedule(cfg)?;
    let seeds = cfg.seed_list();
    let base = SteeringConfig {
        dps_norm_mode: DpsNormMode::Sigma2w,
        ..cfg.base_steering()
    };

    struct Panel {
        label: String,
        method: SteeringMethod,
        alpha: f64,
        weight: f64,
        oracle_mean: f64,
        oracle_std: f64,
    }
    let mut panels = vec![Panel {
        label: "prior".into(),
        method: SteeringMethod::None,
        alpha: 0.0,
        weight: 0.0,
        oracle_mean: oracle.prior_mean,
        oracle_std: oracle.prior_std,
    }];
    for &w in &cfg.fig1.dps_weights {
        let (m, v) = conjugate_posterior(oracle.prior_mean, oracle.prior_std.powi(2), oracle.y, oracle.tau2, w)?;
        panels.push(Panel {
            label: format!("dps_w{w}"),
            method: SteeringMethod::Dps,
            alpha: 1.0,
            weight: w,
            oracle_mean: m,
            oracle_std: v.sqrt(),
        });
    }
    for &a in &cfg.fig1.embedopt_alphas {
        // EmbedOpt has no posterior; the reference is the measurement itself
        panels.push(Panel {
            label: format!("embedopt_alpha{a}"),
            method: SteeringMethod::Embedopt,
            alpha: a,
            weight: 1.0,
            oracle_mean: oracle.y,
            oracle_std: 0.0,
        });
    }

    let mut artifacts = Artifacts::default();
    let mut panel_summaries = Vec::new();
    for (i, p) in panels.iter().enumerate() {
        let reward: RewardSpec = GaussianMeasurementReward::new(vec![oracle.y], oracle.tau2, p.weight.max(0.0))?.into();
        let specs: Vec<RunSpec> = seeds
            .iter()
            .map(|&seed| RunSpec { method: p.method, alpha: p.alpha, seed, steps })
            .collect();
        let results = execute_all(&problem, &reward, &schedules, &base, &specs, cfg.jobs)?;
        let samples: Vec<State> = results.into_iter().map(|r| r.x0).collect();
        let summary = summarize_samples_with_bins(&samples, cfg.bins)?;
        let letter = (b'a' + i as u8) as char;
        let name = format!("fig1_{letter}_{}.csv", p.label);
        let rows: Vec<HistRow> = summary
            .histogram
            .counts
            .iter()
            .enumerate()
            .map(|(k, &count)| HistRow {
                bin_left: summary.histogram.edges[k],
                bin_right: summary.histogram.edges[k + 1],
                count,
            })
            .collect();
        artifacts.add_csv(&name, &rows)?;
        panel_summaries.push(json!({
            "panel": letter.to_string(),
            "label": p.label,
            "method": method_name(p.method),
            "alpha": p.alpha,
            "weight": p.weight,
            "samples": summary.count,
            "mean": summary.mean[0],
            "std": summary.std[0],
            "oracle_mean": p.oracle_mean,
            "oracle_std": p.oracle_std,
            "file": name,
        }));
    }
    Ok(ExperimentOutput {
        artifacts,
        summary: json!({
            "init": match base.sampler.init { InitMode::Standard => "standard", InitMode::PriorMarginal => "prior_marginal" },
            "steps": steps,
            "panels": panel_summaries,
        }),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub method: &'static str,
    pub alpha: f64,
    pub seed: u64,
    pub steps: usize,
    pub final_reward: f64,
    pub metric: f64,
    pub violations: usize,
    pub skips: usize,
    pub nan_count: usize,
}

impl From<&RunResult> for SweepRow {
    fn from(r: &RunResult) -> Self {
        Self {
            method: method_name(r.spec.method),
            alpha: r.spec.alpha,
            seed: r.spec.seed,
            steps: r.spec.steps,
            final_reward: r.final_reward,
            metric: r.metric,
            violations: r.violations,
            skips: r.skips,
            nan_count: r.nan_count,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BestRow {
    pub method: &'static str,
    pub seed: u64,
    pub best_metric: f64,
    pub best_alpha: f64,
    pub baseline_metric: f64,
}

fn timing(results: &[RunResult]) -> Vec<serde_json::Value> {
    results
        .iter()
        .map(|r| {
            json!({
                "method": method_name(r.spec.method),
                "alpha": r.spec.alpha,
                "seed": r.spec.seed,
                "steps": r.spec.steps,
                "runtime_s": r.runtime_s,
            })
        })
        .collect()
}

/// Maximum metric over α per (method, seed); ties go to the smaller α.
pub fn best_achieved(rows: &[SweepRow], baseline: &[SweepRow]) -> Vec<BestRow> {
    let mut best: BTreeMap<(&'static str, u64), (f64, f64)> = BTreeMap::new();
    for r in rows {
        let entry = best.entry((r.method, r.seed)).or_insert((f64::NEG_INFINITY, r.alpha));
        if r.metric > entry.0 || (r.metric == entry.0 && r.alpha < entry.1) {
            *entry = (r.metric, r.alpha);
        }
    }
    best.into_iter()
        .map(|((method, seed), (best_metric, best_alpha))| BestRow {
            method,
            seed,
            best_metric,
            best_alpha,
            baseline_metric: baseline.iter().find(|b| b.seed == seed).map_or(f64::NAN, |b| b.metric),
        })
        .collect()
}

/// Method × α × seed table plus unguided baselines and best-achieved summary.
pub fn run_lr_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput, BenchError> {
    require_kind(cfg, ExperimentKind::LrSweep)?;
    if cfg.sweep.alphas.is_empty() {
        return Err(BenchError::Validation("sweep.alphas must not be empty".into()));
    }
    let problem = cfg.problem()?;
    let (steps, schedules) = single_schedule(cfg)?;
    let seeds = cfg.seed_list();
    let base = cfg.base_steering();
    let mut specs = Vec::new();
    for &method in &cfg.sweep.methods {
        for &alpha in &cfg.sweep.alphas {
            for &seed in &seeds {
                specs.push(RunSpec { method, alpha, seed, steps });
            }
        }
    }
    let baseline_specs: Vec<RunSpec> = seeds
        .iter()
        .map(|&seed| RunSpec { method: SteeringMethod::None, alpha: 0.0, seed, steps })
        .collect();
    let results = execute_all(&problem, &problem.reward, &schedules, &base, &specs, cfg.jobs)?;
    let baseline = execute_all(&problem, &problem.reward, &schedules, &base, &baseline_specs, cfg.jobs)?;
    let rows: Vec<SweepRow> = results.iter().map(SweepRow::from).collect();
    let base_rows: Vec<SweepRow> = baseline.iter().map(SweepRow::from).collect();
    let best = best_achieved(&rows, &base_rows);

    let mut artifacts = Artifacts::default();
    artifacts.add_csv("sweep.csv", &rows)?;
    artifacts.add_csv("baseline.csv", &base_rows)?;
    artifacts.add_csv("best_achieved.csv", &best)?;
    let overall: BTreeMap<&str, f64> = cfg
        .sweep
        .methods
        .iter()
        .map(|&m| {
            let name = method_name(m);
            let v = best
                .iter()
                .filter(|b| b.method == name)
                .map(|b| b.best_metric)
                .fold(f64::NEG_INFINITY, f64::max);
            (name, v)
        })
        .collect();
    Ok(ExperimentOutput {
        artifacts,
        summary: json!({
            "rows": rows.len(),
            "best_achieved_overall": overall,
            "runs": timing(&results),
        }),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub method: &'static str,
    pub steps: usize,
    pub alpha: f64,
    pub alpha_times_steps: f64,
    pub seed: u64,
    pub final_reward: f64,
    pub metric: f64,
    pub nan_count: usize,
}

/// Runs at several step counts with `α = const / T`.
pub fn run_step_scaling(cfg: &ExperimentConfig) -> Result<ExperimentOutput, BenchError> {
    require_kind(cfg, ExperimentKind::StepScaling)?;
    let sc = &cfg.scaling;
    if sc.steps.is_empty() || sc.steps.iter().any(|t| *t < 2) {
        return Err(BenchError::Validation("scaling.steps must be non-empty with every T >= 2".into()));
    }
    let problem = cfg.problem()?;
    let sched_spec = cfg.schedule_spec()?;
    let schedules = sc
        .steps
        .iter()
        .map(|&t| Ok((t, sched_spec.with_steps(t).build()?)))
        .collect::<Result<BTreeMap<_, _>, embedsteer::Error>>()?;
    let seeds = cfg.seed_list();
    let mut specs = Vec::new();
    for &method in &sc.methods {
        for &t in &sc.steps {
            for &seed in &seeds {
                specs.push(RunSpec { method, alpha: sc.alpha_times_steps / t as f64, seed, steps: t });
            }
        }
    }
    let results = execute_all(&problem, &problem.reward, &schedules, &cfg.base_steering(), &specs, cfg.jobs)?;
    let rows: Vec<ScalingRow> = results
        .iter()
        .map(|r| ScalingRow {
            method: method_name(r.spec.method),
            steps: r.spec.steps,
            alpha: r.spec.alpha,
            alpha_times_steps: r.spec.alpha * r.spec.steps as f64,
            seed: r.spec.seed,
            final_reward: r.final_reward,
            metric: r.metric,
            nan_count: r.nan_count,
        })
        .collect();

    // mean metric per (method, T), compared against the longest schedule
    let reference_steps = *sc.steps.iter().max().expect("non-empty");
    let mut per_t = Vec::new();
    for &method in &sc.methods {
        let name = method_name(method);
        let mean_at = |t: usize| {
            let v: Vec<f64> = rows.iter().filter(|r| r.method == name && r.steps == t).map(|r| r.metric).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let reference = mean_at(reference_steps);
        for &t in &sc.steps {
            let m = mean_at(t);
            per_t.push(json!({
                "method": name,
                "steps": t,
                "alpha": sc.alpha_times_steps / t as f64,
                "mean_metric": m,
                "reference_steps": reference_steps,
                "reference_mean_metric": reference,
                "margin": sc.margin,
                "within_margin": m >= reference - sc.margin,
            }));
        }
    }
    let mut artifacts = Artifacts::default();
    artifacts.add_csv("scaling.csv", &rows)?;
    Ok(ExperimentOutput {
        artifacts,
        summary: json!({
            "alpha_times_steps": sc.alpha_times_steps,
            "per_steps": per_t,
            "runs": timing(&results),
        }),
    })
}

#[derive(Debug, Clone, Serialize)]
struct SingleRow {
    config: usize,
    method: &'static str,
    alpha: f64,
    seed: u64,
    final_reward: f64,
    metric: f64,
    violations: usize,
    skips: usize,
    nan_count: usize,
}

/// Every `[[steering]]` entry at every seed, with full trajectory logs.
pub fn run_single(cfg: &ExperimentConfig) -> Result<ExperimentOutput, BenchError> {
    require_kind(cfg, ExperimentKind::SingleRun)?;
    let problem = cfg.problem()?;
    let (steps, schedules) = single_schedule(cfg)?;
    let mut artifacts = Artifacts::default();
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for (i, sc) in cfg.steering.iter().enumerate() {
        let specs: Vec<RunSpec> = cfg
            .seed_list()
            .iter()
            .map(|&seed| RunSpec { method: sc.method, alpha: sc.alpha, seed, steps })
            .collect();
        let results = execute_all(&problem, &problem.reward, &schedules, sc, &specs, cfg.jobs)?;
        for r in &results {
            artifacts.add(format!("trajectory_{i}_seed{}.csv", r.spec.seed), r.record.to_csv_string()?.into_bytes());
            rows.push(SingleRow {
                config: i,
                method: method_name(r.spec.method),
                alpha: r.spec.alpha,
                seed: r.spec.seed,
                final_reward: r.final_reward,
                metric: r.metric,
                violations: r.violations,
                skips: r.skips,
                nan_count: r.nan_count,
            });
        }
        all.extend(results);
    }
    artifacts.add_csv("runs.csv", &rows)?;
    Ok(ExperimentOutput {
        artifacts,
        summary: json!({ "runs": timing(&all) }),
    })
}
