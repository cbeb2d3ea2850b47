//! The `verify` suite: oracle checks with a pass/fail table.

use embedsteer::linalg::{dot, norm, seeded_rng, standard_normal_vec, SeededRng};
use embedsteer::models::{ComponentSpec, ConditionalDenoiser, DenoiserModel, GaussianPriorModel, MeanMapSpec, ModelSpec};
use embedsteer::rewards::{
    select_top_k_constraints, DistanceConstraintReward, GaussianMeasurementReward, MapMSEReward, RewardSpec,
    VoxelGrid,
};
use embedsteer::steering::{run_embedopt, EmbedNormMode, SteeringConfig, SteeringMethod};
use embedsteer::verification::{
    check_monotone_surrogate, conjugate_posterior, fd_gradient, taylor_gap_scaling, TaylorProbe,
    DEFAULT_MONOTONE_TOL,
};
use embedsteer::{Embedding, EmbeddingComponent, NoiseSchedule, State};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::BenchError;
use crate::experiments::ExperimentOutput;
use crate::output::Artifacts;

const PROBES: usize = 20;
const H: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

fn at_most(check: &str, value: f64, threshold: f64) -> CheckRow {
    CheckRow { check: check.into(), value, threshold, passed: value <= threshold }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(1e-12)
}

fn components() -> Vec<ComponentSpec> {
    vec![
        ComponentSpec { name: "single".into(), dim: 3 },
        ComponentSpec { name: "pair".into(), dim: 4 },
    ]
}

fn zero_embedding() -> Embedding {
    Embedding::new(
        components()
            .into_iter()
            .map(|c| EmbeddingComponent { name: c.name, values: vec![0.0; c.dim] })
            .collect(),
    )
    .expect("fixed components are valid")
}

fn models() -> embedsteer::Result<Vec<(&'static str, DenoiserModel)>> {
    let mean_map = MeanMapSpec::Random { seed: 5, w_scale: 0.7, b_scale: 1.0 };
    Ok(vec![
        (
            "gaussian",
            ModelSpec::Gaussian { dim: 5, components: components(), prior_std: 0.8, mean_map: mean_map.clone() }
                .build()?,
        ),
        (
            "mixture",
            ModelSpec::Mixture {
                dim: 5,
                components: components(),
                weights: vec![0.5, 0.3, 0.2],
                stds: vec![0.6, 1.1, 0.9],
                mean_map,
            }
            .build()?,
        ),
    ])
}

fn random_point(model: &DenoiserModel, rng: &mut SeededRng) -> embedsteer::Result<(State, Embedding, f64)> {
    let c = zero_embedding().with_flat(&standard_normal_vec(rng, model.embedding_dim()))?;
    let x = State::new(standard_normal_vec(rng, model.dim()));
    Ok((x, c, rng.gen_range(0.3..2.5)))
}

fn model_checks(rows: &mut Vec<CheckRow>) -> embedsteer::Result<()> {
    for (name, model) in models()? {
        let mut rng = seeded_rng(1);
        let (mut ex, mut ec, mut ej, mut adj) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..PROBES {
            let (x, c, s) = random_point(&model, &mut rng)?;
            let v = standard_normal_vec(&mut rng, model.dim());
            let u = zero_embedding().with_flat(&standard_normal_vec(&mut rng, model.embedding_dim()))?;
            let fx = fd_gradient(|p| dot(&v, &model.denoise(&State::new(p.to_vec()), &c, s).unwrap().coords), &x.coords, H)?;
            ex = ex.max(rel_err(&model.vjp_x(&x, &c, s, &v)?, &fx));
            let fc = fd_gradient(
                |p| dot(&v, &model.denoise(&x, &c.with_flat(p).unwrap(), s).unwrap().coords),
                &c.flat(),
                H,
            )?;
            let vjp_c = model.vjp_c(&x, &c, s, &v)?;
            ec = ec.max(rel_err(&vjp_c.flat(), &fc));
            let plus = model.denoise(&x, &c.add_scaled(H, &u)?, s)?;
            let minus = model.denoise(&x, &c.add_scaled(-H, &u)?, s)?;
            let fj: Vec<f64> = plus.coords.iter().zip(&minus.coords).map(|(a, b)| (a - b) / (2.0 * H)).collect();
            let jvp = model.jvp_c(&x, &c, s, &u)?;
            ej = ej.max(rel_err(&jvp, &fj));
            adj = adj.max((dot(&v, &jvp) - vjp_c.dot(&u)?).abs());
        }
        rows.push(at_most(&format!("{name} vjp_x vs finite differences (rel)"), ex, 1e-5));
        rows.push(at_most(&format!("{name} vjp_c vs finite differences (rel)"), ec, 1e-5));
        rows.push(at_most(&format!("{name} jvp_c vs finite differences (rel)"), ej, 1e-5));
        rows.push(at_most(&format!("{name} adjoint identity (abs)"), adj, 1e-10));
    }
    Ok(())
}

fn reward_checks(rows: &mut Vec<CheckRow>) -> embedsteer::Result<()> {
    let mut rng = seeded_rng(2);
    let beads = |rng: &mut SeededRng| State::new(standard_normal_vec(rng, 15).into_iter().map(|v| 2.0 * v).collect());
    let a = beads(&mut rng);
    let b = beads(&mut rng);
    let grid = VoxelGrid::centered([10, 10, 10], [0.0; 3], 1.2)?;
    let map = MapMSEReward::from_structure(grid, &a, 1.5)?;
    let rewards: Vec<(&str, RewardSpec)> = vec![
        ("gaussian", GaussianMeasurementReward::new(standard_normal_vec(&mut rng, 15), 0.8, 2.0)?.into()),
        ("distance", DistanceConstraintReward::new(select_top_k_constraints(&a, &b, 5)?, 1e6)?.into()),
        ("map", map.clone().into()),
    ];
    for (name, reward) in rewards {
        let mut worst = 0.0f64;
        for _ in 0..PROBES {
            let x = beads(&mut rng);
            let (_, g) = reward.value_and_grad(&x)?;
            let fd = fd_gradient(|p| reward.value(&State::new(p.to_vec())).unwrap(), &x.coords, H)?;
            worst = worst.max(rel_err(&g, &fd));
        }
        rows.push(at_most(&format!("{name} reward gradient vs finite differences (rel)"), worst, 1e-6));
    }
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let x = beads(&mut rng);
        worst = worst.max((map.value_and_grad(&x)?.0 - 2.0 * (map.correlation(&x)? - 1.0)).abs());
    }
    rows.push(at_most("map reward equals 2(cc - 1)", worst, 1e-10));
    Ok(())
}

fn taylor_checks(rows: &mut Vec<CheckRow>) -> embedsteer::Result<()> {
    let reward: RewardSpec = GaussianMeasurementReward::new(vec![1.0, -1.0, 0.5, 2.0, 0.0], 1.0, 1.0)?.into();
    for (name, model) in models()? {
        let mut rng = seeded_rng(3);
        let mut probes = Vec::new();
        for _ in 0..50 {
            let (_, c, s) = random_point(&model, &mut rng)?;
            let x = model.sample_noisy_prior(&c, s, &mut rng)?;
            probes.push(TaylorProbe { x, c, sigma: s, sigma_prev: 0.8 * s });
        }
        let report = taylor_gap_scaling(&model, &reward, &probes, 1e-2, EmbedNormMode::RmsPerComponent)?;
        if name == "gaussian" {
            let worst = report.probes.iter().map(|p| p.gap_full).fold(0.0, f64::max);
            rows.push(at_most("gaussian Taylor gap", worst, 1e-10));
        } else {
            let m = report.median_ratio.unwrap_or(f64::NAN);
            rows.push(CheckRow {
                check: "mixture Taylor gap ratio gap(a)/gap(a/2), median".into(),
                value: m,
                threshold: 4.0,
                passed: (3.5..=4.5).contains(&m),
            });
        }
    }
    Ok(())
}

fn posterior_checks(rows: &mut Vec<CheckRow>) -> embedsteer::Result<()> {
    let (m1, v1) = conjugate_posterior(5.0, 0.25, 20.0, 1.0, 1.0)?;
    rows.push(at_most("conjugate posterior w=1 mean/var", (m1 - 8.0).abs() + (v1 - 0.2).abs(), 1e-12));
    let (m2, _) = conjugate_posterior(5.0, 0.25, 20.0, 1.0, 100.0)?;
    rows.push(at_most("conjugate posterior w=100 mean", (m2 - 2020.0 / 104.0).abs(), 1e-12));
    Ok(())
}

fn monotonicity_check(rows: &mut Vec<CheckRow>) -> embedsteer::Result<()> {
    let model = GaussianPriorModel::scalar_location(0.5)?;
    let reward: RewardSpec = GaussianMeasurementReward::new(vec![20.0], 1.0, 1.0)?.into();
    let c = Embedding::single("loc", vec![5.0])?;
    let sched = NoiseSchedule::linear(1000, 1.0)?;
    let cfg = SteeringConfig { method: SteeringMethod::Embedopt, alpha: 0.1, ..Default::default() };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let out = run_embedopt(&model, &reward, &c, &sched, &cfg, &mut seeded_rng(seed))?;
        worst = worst.max(check_monotone_surrogate(&out.record, DEFAULT_MONOTONE_TOL)?.violation_rate());
    }
    rows.push(at_most("EmbedOpt surrogate decrease rate, 1-D task, alpha 0.1 (worst seed)", worst, 0.01));
    Ok(())
}

pub fn run_checks() -> Result<Vec<CheckRow>, BenchError> {
    let mut rows = Vec::new();
    model_checks(&mut rows)?;
    reward_checks(&mut rows)?;
    taylor_checks(&mut rows)?;
    posterior_checks(&mut rows)?;
    monotonicity_check(&mut rows)?;
    Ok(rows)
}

pub fn format_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.check.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{:<4}  {:<width$}  {:>12.4e}  (threshold {:.1e})\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.check,
            r.value,
            r.threshold,
        ));
    }
    out
}

pub fn run_verify_experiment() -> Result<ExperimentOutput, BenchError> {
    let rows = run_checks()?;
    let mut artifacts = Artifacts::default();
    artifacts.add_csv("verify.csv", &rows)?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    Ok(ExperimentOutput {
        artifacts,
        summary: json!({ "checks": rows.len(), "failed": failed, "table": rows }),
    })
}
