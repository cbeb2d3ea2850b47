//! EmbedOpt and DPS steering.
//!
//! EmbedOpt ascends the surrogate reward `F(x_t, c, σ_t) = R(x̂(x_t, c, σ_t))`
//! in the embedding at every step, then advances the coordinates with the
//! updated embedding. DPS keeps the embedding fixed and adds the chain-ruled
//! reward gradient `∇_{x_t} R(x̂)` to the coordinate update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{self, axpy};
use crate::models::{ConditionalDenoiser, Embedding, State};
use crate::rewards::RewardSpec;
use crate::samplers::{
    drive, euler_update, CoordEvalSigma, SamplerMode, SamplerSettings, StepContext, StepOutcome, StepRule,
    TrajectoryRecord,
};
use crate::schedules::{step_fraction, DenominatorMode, NoiseSchedule};

/// Gradients with norm (or per-component RMS) below this are not normalized.
pub const SKIP_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringMethod {
    #[default]
    None,
    Embedopt,
    Dps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpsNormMode {
    /// `α_t = α·σ_t²`; with a reward weight `w` this is the likelihood
    /// reweighting `σ_t²·w`.
    #[default]
    Sigma2w,
    /// Guidance rescaled to `‖x̂_0 − x_t‖` and multiplied by `α`.
    L2Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedNormMode {
    #[default]
    RmsPerComponent,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConfig {
    pub method: SteeringMethod,
    pub alpha: f64,
    pub dps_norm_mode: DpsNormMode,
    pub embed_norm_mode: EmbedNormMode,
    /// Reuse the first prediction for the EmbedOpt coordinate step instead of
    /// re-evaluating the denoiser at the updated embedding.
    pub reuse_prediction: bool,
    pub sampler: SamplerSettings,
    pub seed: u64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            method: SteeringMethod::None,
            alpha: 0.0,
            dps_norm_mode: DpsNormMode::Sigma2w,
            embed_norm_mode: EmbedNormMode::RmsPerComponent,
            reuse_prediction: false,
            sampler: SamplerSettings::default(),
            seed: 0,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.sampler.mode == SamplerMode::Af3 {
            self.sampler.af3.validate()?;
        }
        Ok(())
    }
}

/// Per-component normalized gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGradient {
    pub direction: Embedding,
    /// RMS of each raw component
    pub rms: Vec<f64>,
    /// components whose RMS fell below [`SKIP_THRESHOLD`]; their direction is zero
    pub skipped: Vec<bool>,
}

impl NormalizedGradient {
    pub fn any_skipped(&self) -> bool {
        self.skipped.iter().any(|s| *s)
    }
}

/// Divides each component by `sqrt(mean(g_i²))` independently.
pub fn rms_normalize(grad: &Embedding) -> Result<NormalizedGradient> {
    if !grad.is_finite() {
        return Err(invalid("cannot normalize a non-finite gradient"));
    }
    let mut direction = grad.clone();
    let mut rms = Vec::with_capacity(grad.components().len());
    let mut skipped = Vec::with_capacity(grad.components().len());
    for comp in direction.components_mut() {
        let r = (comp.values.iter().map(|v| v * v).sum::<f64>() / comp.values.len() as f64).sqrt();
        rms.push(r);
        if r < SKIP_THRESHOLD {
            comp.values.iter_mut().for_each(|v| *v = 0.0);
            skipped.push(true);
        } else {
            comp.values.iter_mut().for_each(|v| *v /= r);
            skipped.push(false);
        }
    }
    Ok(NormalizedGradient {
        direction,
        rms,
        skipped,
    })
}

/// Diagnostics of one EmbedOpt step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOptStepInfo {
    pub surrogate_reward: f64,
    pub x_hat: State,
    pub grad_norm: f64,
    pub skipped: bool,
    /// embedding increment `c_{t-1} − c_t`
    pub update: Embedding,
    /// applied per-component rates `α / RMS(g)` (0 when skipped)
    pub effective_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOptStep {
    pub x_prev: State,
    pub c_prev: Embedding,
    pub info: EmbedOptStepInfo,
}

/// Embedding increment `α·normalize(g)` and the per-component rates it implies.
fn embedding_update(grad: &Embedding, alpha: f64, norm_mode: EmbedNormMode) -> Result<(Embedding, Vec<f64>, bool)> {
    match norm_mode {
        EmbedNormMode::RmsPerComponent => {
            let n = rms_normalize(grad)?;
            let rates = n
                .rms
                .iter()
                .zip(&n.skipped)
                .map(|(r, s)| if *s { 0.0 } else { alpha / r })
                .collect();
            let skipped = n.any_skipped();
            Ok((n.direction.zeros_like().add_scaled(alpha, &n.direction)?, rates, skipped))
        }
        EmbedNormMode::None => {
            let skipped = grad.norm() < SKIP_THRESHOLD;
            let rates = vec![alpha; grad.components().len()];
            Ok((grad.zeros_like().add_scaled(alpha, grad)?, rates, skipped))
        }
    }
}

/// One EmbedOpt update with explicit noise levels.
///
/// The prediction and gradient use `sigma_pred`; the coordinate step
/// re-evaluates the denoiser at the updated embedding and `sigma_coord`
/// (or reuses the first prediction when `reuse_prediction` is set).
#[allow(clippy::too_many_arguments)]
pub fn embedopt_update<M: ConditionalDenoiser>(
    model: &M,
    reward: &RewardSpec,
    x_t: &State,
    c_t: &Embedding,
    sigma_pred: f64,
    sigma_coord: f64,
    eta: f64,
    alpha: f64,
    norm_mode: EmbedNormMode,
    reuse_prediction: bool,
) -> Result<EmbedOptStep> {
    let x_hat = model.denoise(x_t, c_t, sigma_pred)?;
    let (value, dr) = reward.value_and_grad(&x_hat)?;
    let grad = model.vjp_c(x_t, c_t, sigma_pred, &dr)?;
    let grad_norm = grad.norm();
    let (update, effective_rates, skipped) = embedding_update(&grad, alpha, norm_mode)?;
    let c_prev = if alpha == 0.0 {
        c_t.clone()
    } else {
        c_t.add_scaled(1.0, &update)?
    };
    let x_coord = if reuse_prediction {
        x_hat.clone()
    } else {
        model.denoise(x_t, &c_prev, sigma_coord)?
    };
    Ok(EmbedOptStep {
        x_prev: euler_update(x_t, &x_coord, eta),
        c_prev,
        info: EmbedOptStepInfo {
            surrogate_reward: value,
            x_hat,
            grad_norm,
            skipped,
            update,
            effective_rates,
        },
    })
}

/// EmbedOpt step on the deterministic integrator with `η_t = (σ_t − σ_{t-1})/σ_t`.
#[allow(clippy::too_many_arguments)]
pub fn embedopt_step<M: ConditionalDenoiser>(
    model: &M,
    reward: &RewardSpec,
    x_t: &State,
    c_t: &Embedding,
    sigma_t: f64,
    sigma_prev: f64,
    alpha: f64,
    norm_mode: EmbedNormMode,
) -> Result<EmbedOptStep> {
    let eta = step_fraction(sigma_t, sigma_prev, DenominatorMode::Current)?;
    embedopt_update(model, reward, x_t, c_t, sigma_t, sigma_t, eta, alpha, norm_mode, false)
}

/// First-order prediction of the EmbedOpt coordinate step:
/// `x_t + η_t·[x̂_0 − x_t + J_c·Δc]` where `Δc = diag(α_t)·J_cᵀ∇R(x̂_0)` is the
/// increment the real step applies.
#[allow(clippy::too_many_arguments)]
pub fn taylor_predicted_step<M: ConditionalDenoiser>(
    model: &M,
    reward: &RewardSpec,
    x_t: &State,
    c_t: &Embedding,
    sigma_t: f64,
    sigma_prev: f64,
    alpha: f64,
    norm_mode: EmbedNormMode,
) -> Result<State> {
    let eta = step_fraction(sigma_t, sigma_prev, DenominatorMode::Current)?;
    let x_hat = model.denoise(x_t, c_t, sigma_t)?;
    let (_, dr) = reward.value_and_grad(&x_hat)?;
    let grad = model.vjp_c(x_t, c_t, sigma_t, &dr)?;
    let (update, _, _) = embedding_update(&grad, alpha, norm_mode)?;
    let mut shifted = x_hat;
    if alpha != 0.0 {
        axpy(1.0, &model.jvp_c(x_t, c_t, sigma_t, &update)?, &mut shifted.coords);
    }
    Ok(euler_update(x_t, &shifted, eta))
}

/// Diagnostics of one DPS step.
#[derive(Debug, Clone, PartialEq)]
pub struct DpsStepInfo {
    pub surrogate_reward: f64,
    pub grad_norm: f64,
    pub skipped: bool,
    /// guidance vector added inside the bracket, `α_t·ḡ`
    pub guidance: Vec<f64>,
}

/// `x_t + η·(x̂_0 − x_t + α_t·ḡ)` at prediction level `sigma`.
#[allow(clippy::too_many_arguments)]
pub fn dps_update<M: ConditionalDenoiser>(
    model: &M,
    reward: &RewardSpec,
    x_t: &State,
    c: &Embedding,
    sigma: f64,
    eta: f64,
    alpha: f64,
    norm_mode: DpsNormMode,
) -> Result<(State, DpsStepInfo)> {
    let x_hat = model.denoise(x_t, c, sigma)?;
    let (value, dr) = reward.value_and_grad(&x_hat)?;
    let g = model.vjp_x(x_t, c, sigma, &dr)?;
    let grad_norm = linalg::norm(&g);
    let (guidance, skipped) = match norm_mode {
        DpsNormMode::Sigma2w => (linalg::scale(alpha * sigma * sigma, &g), false),
        DpsNormMode::L2Matched => {
            if grad_norm < SKIP_THRESHOLD {
                (vec![0.0; g.len()], true)
            } else {
                let resid = linalg::norm(&linalg::sub(&x_hat.coords, &x_t.coords));
                (linalg::scale(alpha * resid / grad_norm, &g), false)
            }
        }
    };
    let x_prev = State::new(
        x_t.coords
            .iter()
            .zip(&x_hat.coords)
            .zip(&guidance)
            .map(|((x, h), g)| x + eta * (h - x + g))
            .collect(),
    );
    Ok((
        x_prev,
        DpsStepInfo {
            surrogate_reward: value,
            grad_norm,
            skipped,
            guidance,
        },
    ))
}

/// DPS step on the deterministic integrator.
#[allow(clippy::too_many_arguments)]
pub fn dps_step<M: ConditionalDenoiser>(
    model: &M,
    reward: &RewardSpec,
    x_t: &State,
    c: &Embedding,
    sigma_t: f64,
    sigma_prev: f64,
    alpha: f64,
    norm_mode: DpsNormMode,
) -> Result<(State, DpsStepInfo)> {
    let eta = step_fraction(sigma_t, sigma_prev, DenominatorMode::Current)?;
    dps_update(model, reward, x_t, c, sigma_t, eta, alpha, norm_mode)
}

struct EmbedOptRule<'a, M> {
    model: &'a M,
    reward: &'a RewardSpec,
    c_init: Embedding,
    c: Embedding,
    alpha: f64,
    norm_mode: EmbedNormMode,
    reuse_prediction: bool,
}

impl<M: ConditionalDenoiser> StepRule for EmbedOptRule<'_, M> {
    fn step(&mut self, ctx: &StepContext, x: &State) -> Result<StepOutcome> {
        let sigma_coord = match (ctx.mode, ctx.af3.coord_eval) {
            (SamplerMode::Af3, CoordEvalSigma::Previous) => ctx.sigma_prev,
            _ => ctx.sigma,
        };
        let step = embedopt_update(
            self.model,
            self.reward,
            x,
            &self.c,
            ctx.sigma,
            sigma_coord,
            ctx.eta,
            self.alpha,
            self.norm_mode,
            self.reuse_prediction,
        )?;
        self.c = step.c_prev;
        Ok(StepOutcome {
            x_prev: step.x_prev,
            surrogate_reward: Some(step.info.surrogate_reward),
            grad_norm: step.info.grad_norm,
            skipped: step.info.skipped,
        })
    }

    fn embed_drift(&self) -> f64 {
        linalg::norm(&linalg::sub(&self.c.flat(), &self.c_init.flat()))
    }

    fn terminal_reward(&self, x0: &State) -> Result<Option<f64>> {
        Ok(Some(self.reward.value(&self.model.denoise(x0, &self.c, 0.0)?)?))
    }
}

struct DpsRule<'a, M> {
    model: &'a M,
    reward: &'a RewardSpec,
    c: &'a Embedding,
    alpha: f64,
    norm_mode: DpsNormMode,
}

impl<M: ConditionalDenoiser> StepRule for DpsRule<'_, M> {
    fn step(&mut self, ctx: &StepContext, x: &State) -> Result<StepOutcome> {
        let (x_prev, info) = dps_update(
            self.model,
            self.reward,
            x,
            self.c,
            ctx.sigma,
            ctx.eta,
            self.alpha,
            self.norm_mode,
        )?;
        Ok(StepOutcome {
            x_prev,
            surrogate_reward: Some(info.surrogate_reward),
            grad_norm: info.grad_norm,
            skipped: info.skipped,
        })
    }

    fn terminal_reward(&self, x0: &State) -> Result<Option<f64>> {
        Ok(Some(self.reward.value(&self.model.denoise(x0, self.c, 0.0)?)?))
    }
}

/// Output of a full steered run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub x0: State,
    pub c_final: Embedding,
    pub record: TrajectoryRecord,
}

/// Full EmbedOpt trajectory starting from `c_T = c_init`.
pub fn run_embedopt<M: ConditionalDenoiser, R: Rng + ?Sized>(
    model: &M,
    reward: &RewardSpec,
    c_init: &Embedding,
    schedule: &NoiseSchedule,
    config: &SteeringConfig,
    rng: &mut R,
) -> Result<RunOutput> {
    config.validate()?;
    let mut rule = EmbedOptRule {
        model,
        reward,
        c_init: c_init.clone(),
        c: c_init.clone(),
        alpha: config.alpha,
        norm_mode: config.embed_norm_mode,
        reuse_prediction: config.reuse_prediction,
    };
    let (x0, record) = drive(model, c_init, schedule, &config.sampler, rng, &mut rule)?;
    Ok(RunOutput {
        x0,
        c_final: rule.c,
        record,
    })
}

/// Full DPS trajectory; the embedding never changes.
pub fn run_dps<M: ConditionalDenoiser, R: Rng + ?Sized>(
    model: &M,
    reward: &RewardSpec,
    c: &Embedding,
    schedule: &NoiseSchedule,
    config: &SteeringConfig,
    rng: &mut R,
) -> Result<RunOutput> {
    config.validate()?;
    let mut rule = DpsRule {
        model,
        reward,
        c,
        alpha: config.alpha,
        norm_mode: config.dps_norm_mode,
    };
    let (x0, record) = drive(model, c, schedule, &config.sampler, rng, &mut rule)?;
    Ok(RunOutput {
        x0,
        c_final: c.clone(),
        record,
    })
}

/// Unguided trajectory that still logs the surrogate reward.
pub fn run_unguided<M: ConditionalDenoiser, R: Rng + ?Sized>(
    model: &M,
    reward: &RewardSpec,
    c: &Embedding,
    schedule: &NoiseSchedule,
    config: &SteeringConfig,
    rng: &mut R,
) -> Result<RunOutput> {
    config.validate()?;
    let mut rule = crate::samplers::UnguidedRule {
        model,
        c,
        reward: Some(reward),
    };
    let (x0, record) = drive(model, c, schedule, &config.sampler, rng, &mut rule)?;
    Ok(RunOutput {
        x0,
        c_final: c.clone(),
        record,
    })
}

/// Dispatches on `config.method`.
pub fn run_method<M: ConditionalDenoiser, R: Rng + ?Sized>(
    model: &M,
    reward: &RewardSpec,
    c: &Embedding,
    schedule: &NoiseSchedule,
    config: &SteeringConfig,
    rng: &mut R,
) -> Result<RunOutput> {
    match config.method {
        SteeringMethod::None => run_unguided(model, reward, c, schedule, config, rng),
        SteeringMethod::Embedopt => run_embedopt(model, reward, c, schedule, config, rng),
        SteeringMethod::Dps => run_dps(model, reward, c, schedule, config, rng),
    }
}
