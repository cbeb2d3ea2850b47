use embedsteer::linalg::{seeded_rng, standard_normal_vec};
use embedsteer::rewards::RewardSpec;
use embedsteer::steering::SteeringMethod;
use embedsteer::State;
use embedsteer_bench::config::{ScheduleSpec, SweepSection};
use embedsteer_bench::task::{build_toy_task, task_metric, ToyKind, ToyTaskSpec};
use embedsteer_bench::{experiments, ExperimentConfig, SeedSpec};
use rand::Rng;

fn toy_config(kind: &str, steps: usize) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
kind = "{kind}"
out_dir = "unused"
seeds = [0, 1, 2]

[problem]
type = "toy"

[schedule]
kind = "power"
steps = {steps}
sigma_min = 0.02
sigma_max = 40.0
"#
    ))
    .unwrap()
}

fn read_rows(bytes: &[u8]) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(bytes).records().map(|r| r.unwrap()).collect()
}

#[test]
fn zero_rate_sweep_rows_match_unguided_baseline() {
    let mut cfg = toy_config("lr_sweep", 60);
    cfg.sweep = SweepSection { methods: vec![SteeringMethod::Embedopt, SteeringMethod::Dps], alphas: vec![0.0] };
    let out = experiments::run_experiment(&cfg).unwrap();
    let sweep = read_rows(out.artifacts.get("sweep.csv").unwrap());
    let base = read_rows(out.artifacts.get("baseline.csv").unwrap());
    assert_eq!(sweep.len(), 6);
    for row in &sweep {
        let b = base.iter().find(|b| b[2] == row[2]).unwrap();
        // final_reward and metric columns
        assert_eq!(&row[4], &b[4]);
        assert_eq!(&row[5], &b[5]);
    }
}

#[test]
fn step_scaling_rows_keep_alpha_times_steps_fixed() {
    let mut cfg = toy_config("step_scaling", 200);
    cfg.seeds = SeedSpec::List(vec![0, 1]);
    let out = experiments::run_experiment(&cfg).unwrap();
    let rows = read_rows(out.artifacts.get("scaling.csv").unwrap());
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let steps: f64 = r[1].parse().unwrap();
        let alpha: f64 = r[2].parse().unwrap();
        assert_eq!(alpha * steps, 20.0);
        assert_eq!(r[3].parse::<f64>().unwrap(), 20.0);
        assert!(r[5].parse::<f64>().unwrap().is_finite());
        assert_eq!(&r[7], "0");
    }
    let ts: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
    assert_eq!(ts, ["200", "200", "100", "100", "50", "50", "20", "20"]);
}

#[test]
fn schedule_rebuilds_with_each_step_count() {
    let spec = ScheduleSpec::Power { steps: 200, sigma_min: 0.02, sigma_max: 40.0, rho: 7.0 };
    for t in [200, 100, 50, 20] {
        let s = spec.with_steps(t).build().unwrap();
        assert_eq!(s.num_steps(), t);
    }
}

#[test]
fn map_task_target_renders_to_perfect_correlation() {
    let spec = ToyTaskSpec { kind: ToyKind::Map, ..Default::default() };
    let task = build_toy_task(&spec).unwrap();
    let RewardSpec::Map(map) = &task.reward else { panic!("map task") };
    assert!((map.correlation(&task.target).unwrap() - 1.0).abs() < 1e-12);
    assert!(task.reward.value(&task.target).unwrap().abs() < 1e-10);
}

#[test]
fn toy_task_is_reproducible_from_its_seed() {
    let a = build_toy_task(&ToyTaskSpec::default()).unwrap();
    let b = build_toy_task(&ToyTaskSpec::default()).unwrap();
    let c = build_toy_task(&ToyTaskSpec { seed: 1, ..Default::default() }).unwrap();
    assert_eq!(a.target, b.target);
    assert_eq!(a.reward, b.reward);
    assert_ne!(a.target, c.target);
}

#[test]
fn ancestral_prior_draws_mostly_violate_the_minority_constraints() {
    for seed in 0..3 {
        let task = build_toy_task(&ToyTaskSpec { seed, ..Default::default() }).unwrap();
        let k = ToyTaskSpec::default().constraints as f64;
        let base = task.embedding.flat();
        let mut rng = seeded_rng(100 + seed);
        let draws = 2000;
        let mut violating = 0;
        for _ in 0..draws {
            let u: f64 = rng.gen();
            let mode = if u < task.model.modes()[0].weight { 0 } else { 1 };
            let m = &task.model.modes()[mode];
            let coords: Vec<f64> = m
                .mean_map
                .apply(&base)
                .iter()
                .zip(standard_normal_vec(&mut rng, task.target.dim()))
                .map(|(mu, e)| mu + m.std * e)
                .collect();
            if task_metric(&task.reward, &State::new(coords)).unwrap() < k {
                violating += 1;
            }
        }
        let rate = violating as f64 / draws as f64;
        assert!(rate >= 0.8, "task seed {seed}: violation rate {rate}");
    }
}

#[test]
fn unguided_sampler_runs_mostly_violate() {
    let mut cfg = toy_config("lr_sweep", 200);
    cfg.seeds = SeedSpec::Range { start: 0, count: 20 };
    cfg.sweep = SweepSection { methods: vec![SteeringMethod::Embedopt], alphas: vec![0.1] };
    let out = experiments::run_experiment(&cfg).unwrap();
    let base = read_rows(out.artifacts.get("baseline.csv").unwrap());
    let violating = base.iter().filter(|r| r[5].parse::<f64>().unwrap() < 5.0).count();
    assert!(violating >= 16, "{violating} of 20");
}

#[test]
fn fig1_panels_cover_prior_dps_and_embedopt() {
    let cfg = ExperimentConfig::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/fig1.toml"))
        .unwrap()
        .with_overrides(None, Some(SeedSpec::Range { start: 0, count: 50 }), None);
    let out = experiments::run_experiment(&cfg).unwrap();
    let names = out.artifacts.names();
    assert_eq!(names[0], "fig1_a_prior.csv");
    assert_eq!(names.len(), 1 + cfg.fig1.dps_weights.len() + cfg.fig1.embedopt_alphas.len());
    let panels = out.summary["panels"].as_array().unwrap();
    let dps100 = panels.iter().find(|p| p["label"] == "dps_w100").unwrap();
    assert!((dps100["oracle_mean"].as_f64().unwrap() - 2020.0 / 104.0).abs() < 1e-12);
    for name in names {
        let rows = read_rows(out.artifacts.get(name).unwrap());
        let total: usize = rows.iter().map(|r| r[2].parse::<usize>().unwrap()).sum();
        assert_eq!(total, 50);
    }
}
