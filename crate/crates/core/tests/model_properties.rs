use embedsteer::linalg::{norm, seeded_rng, standard_normal_vec};
use embedsteer::models::{
    score_from_denoiser, ComponentSpec, ConditionalDenoiser, DenoiserModel, GaussianPriorModel, MeanMapSpec,
    ModelSpec,
};
use embedsteer::verification::conjugate_posterior;
use embedsteer::{Embedding, EmbeddingComponent, State};
use rand::Rng;

fn components() -> Vec<ComponentSpec> {
    vec![
        ComponentSpec { name: "single".into(), dim: 2 },
        ComponentSpec { name: "pair".into(), dim: 2 },
    ]
}

fn zero_embedding() -> Embedding {
    Embedding::new(
        components()
            .into_iter()
            .map(|s| EmbeddingComponent { name: s.name, values: vec![0.0; s.dim] })
            .collect(),
    )
    .unwrap()
}

fn mixture() -> DenoiserModel {
    ModelSpec::Mixture {
        dim: 3,
        components: components(),
        weights: vec![0.7, 0.3],
        stds: vec![0.5, 0.9],
        mean_map: MeanMapSpec::Random { seed: 21, w_scale: 1.0, b_scale: 1.5 },
    }
    .build()
    .unwrap()
}

/// Self-normalized importance sampling of `E[x_0 | x_σ]` with prior draws as
/// proposals; returns the estimate and its per-coordinate standard error.
fn posterior_mean_mc(
    model: &DenoiserModel,
    x: &State,
    c: &Embedding,
    sigma: f64,
    draws: usize,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    let d = x.dim();
    let mut samples = Vec::with_capacity(draws);
    let mut logw = Vec::with_capacity(draws);
    for _ in 0..draws {
        let x0 = model.sample_prior(c, rng).unwrap();
        let r2: f64 = x0.coords.iter().zip(&x.coords).map(|(a, b)| (a - b).powi(2)).sum();
        logw.push(-r2 / (2.0 * sigma * sigma));
        samples.push(x0);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut mean = vec![0.0; d];
    for (s, wi) in samples.iter().zip(&w) {
        for (m, v) in mean.iter_mut().zip(&s.coords) {
            *m += wi * v / total;
        }
    }
    let mut var = vec![0.0; d];
    for (s, wi) in samples.iter().zip(&w) {
        for ((acc, v), m) in var.iter_mut().zip(&s.coords).zip(&mean) {
            *acc += (wi / total).powi(2) * (v - m).powi(2);
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

#[test]
fn mixture_denoiser_is_the_posterior_mean() {
    let model = mixture();
    let mut rng = seeded_rng(31);
    for probe in 0..10 {
        let c = zero_embedding().with_flat(&standard_normal_vec(&mut rng, 4)).unwrap();
        let sigma = rng.gen_range(0.5..1.5);
        let x = model.sample_noisy_prior(&c, sigma, &mut rng).unwrap();
        let (mc, se) = posterior_mean_mc(&model, &x, &c, sigma, 1_000_000, &mut rng);
        let exact = model.denoise(&x, &c, sigma).unwrap();
        for i in 0..3 {
            let err = (mc[i] - exact.coords[i]).abs();
            assert!(err < 3.0 * se[i] + 1e-12, "probe {probe} coord {i}: |{} - {}| = {err}, se {}", mc[i], exact.coords[i], se[i]);
        }
    }
}

#[test]
fn tweedie_consistency_at_random_probes() {
    let model = match (ModelSpec::Gaussian {
        dim: 3,
        components: components(),
        prior_std: 0.6,
        mean_map: MeanMapSpec::Random { seed: 4, w_scale: 1.0, b_scale: 1.0 },
    })
    .build()
    .unwrap()
    {
        DenoiserModel::Gaussian(m) => m,
        DenoiserModel::Mixture(_) => unreachable!(),
    };
    let mut rng = seeded_rng(8);
    for _ in 0..20 {
        let c = zero_embedding().with_flat(&standard_normal_vec(&mut rng, 4)).unwrap();
        let x = State::new(standard_normal_vec(&mut rng, 3));
        let sigma = rng.gen_range(0.05..5.0);
        let from_denoiser = score_from_denoiser(&model.denoise(&x, &c, sigma).unwrap(), &x, sigma).unwrap();
        let analytic = model.marginal_score(&x, &c, sigma).unwrap();
        for (a, b) in from_denoiser.iter().zip(&analytic) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }
}

#[test]
fn gaussian_jvp_is_independent_of_base_embedding() {
    let model: GaussianPriorModel = match (ModelSpec::Gaussian {
        dim: 3,
        components: components(),
        prior_std: 0.6,
        mean_map: MeanMapSpec::Random { seed: 5, w_scale: 1.0, b_scale: 0.0 },
    })
    .build()
    .unwrap()
    {
        DenoiserModel::Gaussian(m) => m,
        DenoiserModel::Mixture(_) => unreachable!(),
    };
    let mut rng = seeded_rng(6);
    let x = State::new(standard_normal_vec(&mut rng, 3));
    let u = zero_embedding().with_flat(&standard_normal_vec(&mut rng, 4)).unwrap();
    let c1 = zero_embedding().with_flat(&standard_normal_vec(&mut rng, 4)).unwrap();
    let c2 = zero_embedding().with_flat(&standard_normal_vec(&mut rng, 4)).unwrap();
    let a = model.jvp_c(&x, &c1, 0.7, &u).unwrap();
    let b = model.jvp_c(&x, &c2, 0.7, &u).unwrap();
    assert_eq!(a, b);
    assert!(norm(&a) > 0.0);
}

#[test]
fn conjugate_oracle_matches_importance_weighted_prior_draws() {
    let mut rng = seeded_rng(12);
    for w in [1.0, 100.0] {
        let (m, v) = conjugate_posterior(5.0, 0.25, 20.0, 1.0, w).unwrap();
        let log_unnorm = |x: f64| -(x - 5.0).powi(2) / (2.0 * 0.25) - w * (x - 20.0).powi(2) / 2.0;
        // proposal centred on the posterior, wide enough to cover it
        let prop_std = 2.0 * v.sqrt();
        let n = 400_000;
        let mut sw = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut sww = 0.0;
        for _ in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let x = m + prop_std * z;
            let log_target = log_unnorm(x) - log_unnorm(m);
            let wi = (log_target + z * z / 2.0).exp();
            sw += wi;
            s1 += wi * x;
            s2 += wi * x * x;
            sww += wi * wi;
        }
        let mean = s1 / sw;
        let var = s2 / sw - mean * mean;
        let ess = sw * sw / sww;
        let se = (var / ess).sqrt();
        assert!((mean - m).abs() < 4.0 * se, "w={w}: {mean} vs {m}");
        assert!((var / v - 1.0).abs() < 4.0 * (2.0 / ess).sqrt(), "w={w}: var {var} vs {v}");
    }
}
