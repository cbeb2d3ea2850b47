//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria listed in `KNOWN_FAILURES` are printed but do not fail the
//! target; any other failure does, and so does a known failure that passes.

use std::path::Path;
use std::time::Instant;

use embedsteer::linalg::seeded_rng;
use embedsteer::models::GaussianPriorModel;
use embedsteer::rewards::{GaussianMeasurementReward, RewardSpec};
use embedsteer::samplers::{sample_unguided, Af3SamplerParams, SamplerSettings};
use embedsteer::steering::{run_method, SteeringConfig, SteeringMethod};
use embedsteer::verification::{check_monotone_surrogate, DEFAULT_MONOTONE_TOL};
use embedsteer::{NoiseSchedule, SamplerMode, State};
use embedsteer_bench::task::{build_toy_task, ToyKind, ToyTaskSpec};
use embedsteer_bench::{experiments, verify, ExperimentConfig, SeedSpec};

const KNOWN_FAILURES: &[&str] = &["1b", "1c", "1d alpha=0.05", "1d alpha=0.1", "3"];

struct Outcome {
    id: String,
    passed: bool,
    detail: String,
}

#[derive(Default)]
struct Report {
    outcomes: Vec<Outcome>,
}

impl Report {
    fn record(&mut self, id: &str, passed: bool, detail: String) {
        println!("{}  {id:<14} {detail}", if passed { "PASS" } else { "FAIL" });
        self.outcomes.push(Outcome { id: id.into(), passed, detail });
    }
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

fn rows(bytes: &[u8]) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(bytes).records().map(|r| r.unwrap()).collect()
}

fn max_abs_diff(a: &State, b: &State) -> f64 {
    a.coords.iter().zip(&b.coords).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1(report: &mut Report) {
    let cfg = config("fig1.toml");
    let clock = Instant::now();
    let out = experiments::run_experiment(&cfg).unwrap();
    let elapsed = clock.elapsed().as_secs_f64();
    let panels = out.summary["panels"].as_array().unwrap().clone();
    let panel = |label: &str| panels.iter().find(|p| p["label"] == label).unwrap().clone();
    let stat = |p: &serde_json::Value, k: &str| p[k].as_f64().unwrap();

    let prior = panel("prior");
    let (m, s) = (stat(&prior, "mean"), stat(&prior, "std"));
    report.record(
        "1a",
        (m - 5.0).abs() <= 0.05 && (s - 0.5).abs() <= 0.05,
        format!("unguided mean {m:.4} std {s:.4} over {} seeds (target 5 / 0.5 +- 0.05)", prior["samples"]),
    );
    for (id, label, target) in [("1b", "dps_w1", 8.0), ("1c", "dps_w100", 2020.0 / 104.0)] {
        let p = panel(label);
        let m = stat(&p, "mean");
        assert!((stat(&p, "oracle_mean") - target).abs() < 1e-12);
        report.record(id, (m - target).abs() <= 0.1, format!("{label} mean {m:.4} (oracle {target:.4} +- 0.1)"));
    }
    for alpha in [0.05, 0.1, 0.5, 5.0] {
        let p = panel(&format!("embedopt_alpha{alpha}"));
        let m = stat(&p, "mean");
        report.record(
            &format!("1d alpha={alpha}"),
            (m - 20.0).abs() <= 0.5,
            format!("EmbedOpt mean {m:.4} (target 20 +- 0.5)"),
        );
    }
    report.record("1 runtime", elapsed < 120.0, format!("{elapsed:.1} s (limit 120 s)"));
}

fn verify_rows(report: &mut Report, id: &str, rows: &[verify::CheckRow], pick: impl Fn(&str) -> bool) {
    let picked: Vec<_> = rows.iter().filter(|r| pick(&r.check)).collect();
    assert!(!picked.is_empty());
    let failed: Vec<_> = picked.iter().filter(|r| !r.passed).map(|r| r.check.as_str()).collect();
    report.record(
        id,
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks within threshold", picked.len())
        } else {
            format!("failed: {}", failed.join("; "))
        },
    );
}

fn criterion_3(report: &mut Report) {
    let model = GaussianPriorModel::scalar_location(0.5).unwrap();
    let reward: RewardSpec = GaussianMeasurementReward::new(vec![20.0], 1.0, 1.0).unwrap().into();
    let c = embedsteer::Embedding::single("loc", vec![5.0]).unwrap();
    let sched = NoiseSchedule::linear(1000, 1.0).unwrap();
    let cfg = SteeringConfig { method: SteeringMethod::Embedopt, alpha: 0.1, ..Default::default() };
    let (mut steps, mut violations) = (0, 0);
    for seed in 0..20 {
        let out = run_method(&model, &reward, &c, &sched, &cfg, &mut seeded_rng(seed)).unwrap();
        let r = check_monotone_surrogate(&out.record, DEFAULT_MONOTONE_TOL).unwrap();
        steps += r.total_steps;
        violations += r.violations;
    }
    let rate = violations as f64 / steps as f64;
    report.record("3", rate <= 0.01, format!("{violations} of {steps} steps decrease F ({:.2}%, limit 1%)", 100.0 * rate));
}

fn criterion_5(report: &mut Report) {
    let task = build_toy_task(&ToyTaskSpec::default()).unwrap();
    let sched = NoiseSchedule::power(200, 0.02, 40.0, 7.0).unwrap();
    let zero_w: RewardSpec = match &task.reward {
        RewardSpec::Distance(_) => GaussianMeasurementReward::new(task.target.coords.clone(), 1.0, 0.0).unwrap().into(),
        _ => unreachable!(),
    };
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let (xu, _) = sample_unguided(&task.model, &task.embedding, &sched, &SamplerSettings::default(), &mut seeded_rng(seed)).unwrap();
        let eo = SteeringConfig { method: SteeringMethod::Embedopt, alpha: 0.0, ..Default::default() };
        let a = run_method(&task.model, &task.reward, &task.embedding, &sched, &eo, &mut seeded_rng(seed)).unwrap();
        let dps = SteeringConfig { method: SteeringMethod::Dps, alpha: 1.0, ..Default::default() };
        let b = run_method(&task.model, &zero_w, &task.embedding, &sched, &dps, &mut seeded_rng(seed)).unwrap();
        worst = worst.max(max_abs_diff(&a.x0, &xu)).max(max_abs_diff(&b.x0, &xu));
        let sa: Vec<_> = a.record.entries.iter().map(|e| e.sigma).collect();
        let sb: Vec<_> = b.record.entries.iter().map(|e| e.sigma).collect();
        assert_eq!(sa, sb);
    }
    report.record("5 reductions", worst <= 1e-12, format!("alpha=0 EmbedOpt / w=0 DPS vs unguided, max |dx| {worst:.2e}"));

    let af3 = SamplerSettings {
        mode: SamplerMode::Af3,
        af3: Af3SamplerParams { gamma: 0.0, eta_scale: 1.0, ..Default::default() },
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let (xd, _) = sample_unguided(&task.model, &task.embedding, &sched, &SamplerSettings::default(), &mut seeded_rng(seed)).unwrap();
        let (xa, _) = sample_unguided(&task.model, &task.embedding, &sched, &af3, &mut seeded_rng(seed)).unwrap();
        worst = worst.max(max_abs_diff(&xa, &xd));
    }
    report.record("5 af3", worst <= 1e-12, format!("af3 gamma=0 eta_scale=1 vs deterministic, max |dx| {worst:.2e}"));

    let mut cfg = config("lr_sweep.toml").with_overrides(None, Some(SeedSpec::Range { start: 0, count: 3 }), Some(1));
    let first = experiments::run_experiment(&cfg).unwrap().artifacts;
    cfg.jobs = None;
    let second = experiments::run_experiment(&cfg).unwrap().artifacts;
    let same = first.names() == second.names() && first.files.iter().all(|(n, b)| second.get(n) == Some(b.as_slice()));
    report.record("5 csv bytes", same, format!("{} CSV files compared across reruns", first.files.len()));
}

fn criterion_6(report: &mut Report, checks: &[verify::CheckRow]) {
    verify_rows(report, "6 identity", checks, |c| c.starts_with("map reward equals"));
    let task = build_toy_task(&ToyTaskSpec { kind: ToyKind::Map, ..Default::default() }).unwrap();
    let RewardSpec::Map(map) = &task.reward else { unreachable!() };
    let cc = map.correlation(&task.target).unwrap();
    let r = task.reward.value(&task.target).unwrap();
    report.record("6 self", (cc - 1.0).abs() < 1e-10 && r.abs() < 1e-10, format!("self-rendered cc {cc:.12} R {r:.2e}"));
}

fn criterion_7(report: &mut Report) {
    let cfg = config("lr_sweep.toml").with_overrides(None, Some(SeedSpec::Range { start: 0, count: 10 }), None);
    let clock = Instant::now();
    let out = experiments::run_experiment(&cfg).unwrap();
    let elapsed = clock.elapsed().as_secs_f64();
    let best = rows(out.artifacts.get("best_achieved.csv").unwrap());
    let (mut ok, mut all_five, mut seeds) = (0, 0, 0);
    let mut dps = Vec::new();
    for r in &best {
        let best_metric: f64 = r[2].parse().unwrap();
        let baseline: f64 = r[4].parse().unwrap();
        match &r[0] {
            "embedopt" => {
                seeds += 1;
                ok += usize::from(best_metric >= baseline);
                all_five += usize::from(best_metric == 5.0);
            }
            _ => dps.push(best_metric),
        }
    }
    report.record(
        "7",
        seeds == 10 && ok == seeds && all_five == seeds,
        format!("EmbedOpt best >= baseline on {ok}/{seeds} seeds, all 5 satisfied on {all_five}/{seeds}; {elapsed:.1} s"),
    );
    println!(
        "      (reported) DPS best-achieved mean {:.2} over {} seeds",
        dps.iter().sum::<f64>() / dps.len() as f64,
        dps.len()
    );
}

fn criterion_8(report: &mut Report) {
    let out = experiments::run_experiment(&config("step_scaling.toml")).unwrap();
    let rows = rows(out.artifacts.get("scaling.csv").unwrap());
    let mut exact = true;
    let mut steps_seen = std::collections::BTreeSet::new();
    let (mut t50, mut t50_ok) = (0, true);
    for r in &rows {
        let t: usize = r[1].parse().unwrap();
        let alpha: f64 = r[2].parse().unwrap();
        exact &= alpha * t as f64 == 20.0 && r[3].parse::<f64>().unwrap() == 20.0;
        steps_seen.insert(t);
        if t == 50 && &r[0] == "embedopt" {
            t50 += 1;
            t50_ok &= r[5].parse::<f64>().unwrap().is_finite() && &r[7] == "0";
        }
    }
    let expected: std::collections::BTreeSet<usize> = [200, 100, 50, 20].into();
    report.record(
        "8",
        exact && steps_seen == expected && t50 > 0 && t50_ok,
        format!("{} rows with alpha*T = 20; T=50 EmbedOpt runs finite without NaN: {t50_ok} ({t50} runs)", rows.len()),
    );
}

fn main() {
    let mut report = Report::default();
    criterion_1(&mut report);
    let checks = verify::run_checks().unwrap();
    verify_rows(&mut report, "2", &checks, |c| c.contains("finite differences") || c.contains("adjoint"));
    criterion_3(&mut report);
    verify_rows(&mut report, "4", &checks, |c| c.contains("Taylor"));
    criterion_5(&mut report);
    criterion_6(&mut report, &checks);
    criterion_7(&mut report);
    criterion_8(&mut report);

    let unexpected: Vec<&Outcome> = report
        .outcomes
        .iter()
        .filter(|o| o.passed == KNOWN_FAILURES.contains(&o.id.as_str()))
        .collect();
    let known = report.outcomes.iter().filter(|o| !o.passed).count() - unexpected.iter().filter(|o| !o.passed).count();
    println!(
        "{} criteria, {} passed, {known} known failures",
        report.outcomes.len(),
        report.outcomes.iter().filter(|o| o.passed).count()
    );
    for o in &unexpected {
        let what = if o.passed { "now passes; remove it from KNOWN_FAILURES" } else { "failed" };
        eprintln!("unexpected: {} {what}: {}", o.id, o.detail);
    }
    assert!(unexpected.is_empty(), "{} unexpected acceptance outcome(s)", unexpected.len());
}
