//! Probability-flow Euler integration and the AF3-style stochastic sampler.
//!
//! [`drive`] walks a [`NoiseSchedule`] from `t = T` down to `t = 1`, handling
//! initialization, optional noise inflation, the step fraction and trajectory
//! logging. What happens inside a step (plain denoising, embedding ascent,
//! coordinate guidance) is supplied by a [`StepRule`].

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::linalg::{self, axpy};
use crate::models::{ConditionalDenoiser, Embedding, State};
use crate::rewards::RewardSpec;
use crate::schedules::{step_fraction, DenominatorMode, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Deterministic,
    Af3,
}

/// Distribution of the starting point `x_T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `N(0, σ_T²·I)`
    #[default]
    Standard,
    /// Exact noisy marginal `p(x_{σ_T} | c)` of the model prior.
    PriorMarginal,
}

/// Noise level at which the AF3 embedding-ascent variant evaluates the
/// denoiser for its coordinate update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordEvalSigma {
    /// `σ_{t-1}`
    #[default]
    Previous,
    /// The (possibly inflated) `σ_t` used for the prediction.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Af3SamplerParams {
    /// noise amplification factor γ
    pub gamma: f64,
    /// inflation happens only while `σ_{t-1} > gamma_min`
    pub gamma_min: f64,
    /// noise scale ρ
    pub rho_noise: f64,
    /// multiplier on the step fraction
    pub eta_scale: f64,
    pub coord_eval: CoordEvalSigma,
}

impl Default for Af3SamplerParams {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            gamma_min: 1.0,
            rho_noise: 1.003,
            eta_scale: 1.5,
            coord_eval: CoordEvalSigma::Previous,
        }
    }
}

impl Af3SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.rho_noise > 0.0) || !(self.eta_scale > 0.0) {
            return Err(crate::error::invalid(
                "af3 parameters need gamma >= 0, rho_noise > 0, eta_scale > 0",
            ));
        }
        Ok(())
    }
}

/// Sampler options shared by every method.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSettings {
    pub mode: SamplerMode,
    pub af3: Af3SamplerParams,
    pub denominator: DenominatorMode,
    pub init: InitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub step: usize,
    /// noise level at which the prediction was made (inflated in AF3 mode)
    pub sigma: f64,
    /// surrogate reward `F_t = R(x̂_0)`
    pub surrogate_reward: Option<f64>,
    pub grad_norm: f64,
    /// `‖c_t − c_T‖`
    pub embed_drift: f64,
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<State>,
}

/// Per-step log, ordered by decreasing `t`; the last entry is the terminal
/// state at `t = 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub entries: Vec<TrajectoryEntry>,
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: usize,
    sigma: f64,
    #[serde(rename = "F")]
    f: Option<f64>,
    grad_norm: f64,
    embed_drift: f64,
}

impl TrajectoryRecord {
    pub fn surrogate_rewards(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e.surrogate_reward).collect()
    }

    pub fn skip_count(&self) -> usize {
        self.entries.iter().filter(|e| e.skipped).count()
    }

    pub fn final_reward(&self) -> Option<f64> {
        self.entries.last().and_then(|e| e.surrogate_reward)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(TrajectoryRow {
                step: e.step,
                sigma: e.sigma,
                f: e.surrogate_reward,
                grad_norm: e.grad_norm,
                embed_drift: e.embed_drift,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }
}

/// Where the driver is within a step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub t: usize,
    /// noise level for the prediction: `σ_t`, or `(γ+1)·σ_t` after inflation
    pub sigma: f64,
    pub sigma_prev: f64,
    /// step fraction, including the AF3 step scale
    pub eta: f64,
    pub mode: SamplerMode,
    pub af3: Af3SamplerParams,
}

/// Result of one step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub x_prev: State,
    pub surrogate_reward: Option<f64>,
    pub grad_norm: f64,
    pub skipped: bool,
}

/// Per-step update plugged into [`drive`].
pub trait StepRule {
    fn step(&mut self, ctx: &StepContext, x: &State) -> Result<StepOutcome>;

    /// Current embedding drift `‖c_t − c_T‖`.
    fn embed_drift(&self) -> f64 {
        0.0
    }

    /// Surrogate reward of the terminal sample, if a reward is attached.
    fn terminal_reward(&self, x0: &State) -> Result<Option<f64>>;
}

/// `x_t + η_t·(x̂ − x_t)`
pub fn euler_step(
    x_t: &State,
    x_hat: &State,
    sigma_t: f64,
    sigma_prev: f64,
    mode: DenominatorMode,
) -> Result<State> {
    check_len(x_t.dim(), x_hat.dim(), "denoised state")?;
    let eta = step_fraction(sigma_t, sigma_prev, mode)?;
    Ok(euler_update(x_t, x_hat, eta))
}

pub(crate) fn euler_update(x_t: &State, x_hat: &State, eta: f64) -> State {
    if eta == 1.0 {
        return x_hat.clone();
    }
    State::new(
        x_t.coords
            .iter()
            .zip(&x_hat.coords)
            .map(|(x, h)| x + eta * (h - x))
            .collect(),
    )
}

/// Adds `ρ·sqrt((γ+1)² − 1)·σ_t·ε` and returns the amplified level `(γ+1)·σ_t`.
pub fn af3_noise_inflate<R: Rng + ?Sized>(
    x_t: &State,
    sigma_t: f64,
    params: &Af3SamplerParams,
    rng: &mut R,
) -> (State, f64) {
    let amp = params.gamma + 1.0;
    let noise_std = params.rho_noise * (amp * amp - 1.0).sqrt() * sigma_t;
    let eps = linalg::standard_normal_vec(rng, x_t.dim());
    let mut x = x_t.clone();
    if noise_std != 0.0 {
        axpy(noise_std, &eps, &mut x.coords);
    }
    (x, amp * sigma_t)
}

/// Draws `x_T` according to `init`.
pub fn initial_state<M: ConditionalDenoiser, R: Rng + ?Sized>(
    model: &M,
    c: &Embedding,
    sigma_max: f64,
    init: InitMode,
    rng: &mut R,
) -> Result<State> {
    match init {
        InitMode::Standard => Ok(State::new(linalg::scale(
            sigma_max,
            &linalg::standard_normal_vec(rng, model.dim()),
        ))),
        InitMode::PriorMarginal => model.sample_noisy_prior(c, sigma_max, rng),
    }
}

/// Snapshot stride `max(1, T/100)`.
pub fn snapshot_stride(num_steps: usize) -> usize {
    (num_steps / 100).max(1)
}

/// Runs the reverse-time loop from a given `x_T`.
pub fn drive_from<S: StepRule, R: Rng + ?Sized>(
    x_init: State,
    schedule: &NoiseSchedule,
    settings: &SamplerSettings,
    rng: &mut R,
    rule: &mut S,
) -> Result<(State, TrajectoryRecord)> {
    if settings.mode == SamplerMode::Af3 {
        settings.af3.validate()?;
    }
    let num_steps = schedule.num_steps();
    let stride = snapshot_stride(num_steps);
    let mut record = TrajectoryRecord {
        entries: Vec::with_capacity(num_steps + 1),
    };
    let mut x = x_init;
    for t in (1..=num_steps).rev() {
        let mut sigma = schedule.sigma(t);
        let sigma_prev = schedule.sigma(t - 1);
        let mut eta_scale = 1.0;
        if settings.mode == SamplerMode::Af3 {
            if sigma_prev > settings.af3.gamma_min {
                let (inflated, s) = af3_noise_inflate(&x, sigma, &settings.af3, rng);
                x = inflated;
                sigma = s;
            }
            eta_scale = settings.af3.eta_scale;
        }
        let eta = step_fraction(sigma, sigma_prev, settings.denominator)? * eta_scale;
        let ctx = StepContext {
            t,
            sigma,
            sigma_prev,
            eta,
            mode: settings.mode,
            af3: settings.af3,
        };
        let drift = rule.embed_drift();
        let snapshot = (num_steps - t).is_multiple_of(stride).then(|| x.clone());
        let out = rule.step(&ctx, &x)?;
        record.entries.push(TrajectoryEntry {
            step: t,
            sigma,
            surrogate_reward: out.surrogate_reward,
            grad_norm: out.grad_norm,
            embed_drift: drift,
            skipped: out.skipped,
            snapshot,
        });
        x = out.x_prev;
    }
    record.entries.push(TrajectoryEntry {
        step: 0,
        sigma: schedule.sigma(0),
        surrogate_reward: rule.terminal_reward(&x)?,
        grad_norm: 0.0,
        embed_drift: rule.embed_drift(),
        skipped: false,
        snapshot: Some(x.clone()),
    });
    Ok((x, record))
}

/// Draws `x_T` from `rng`, then runs [`drive_from`] on the same stream.
pub fn drive<M: ConditionalDenoiser, S: StepRule, R: Rng + ?Sized>(
    model: &M,
    c_init: &Embedding,
    schedule: &NoiseSchedule,
    settings: &SamplerSettings,
    rng: &mut R,
    rule: &mut S,
) -> Result<(State, TrajectoryRecord)> {
    let x_init = initial_state(model, c_init, schedule.sigma_max(), settings.init, rng)?;
    drive_from(x_init, schedule, settings, rng, rule)
}

/// Plain denoising step; logs the surrogate reward when one is attached.
pub struct UnguidedRule<'a, M> {
    pub model: &'a M,
    pub c: &'a Embedding,
    pub reward: Option<&'a RewardSpec>,
}

impl<M: ConditionalDenoiser> StepRule for UnguidedRule<'_, M> {
    fn step(&mut self, ctx: &StepContext, x: &State) -> Result<StepOutcome> {
        let x_hat = self.model.denoise(x, self.c, ctx.sigma)?;
        let surrogate_reward = self.reward.map(|r| r.value(&x_hat)).transpose()?;
        Ok(StepOutcome {
            x_prev: euler_update(x, &x_hat, ctx.eta),
            surrogate_reward,
            grad_norm: 0.0,
            skipped: false,
        })
    }

    fn terminal_reward(&self, x0: &State) -> Result<Option<f64>> {
        self.reward
            .map(|r| r.value(&self.model.denoise(x0, self.c, 0.0)?))
            .transpose()
    }
}

/// Unguided sampling with fixed embedding `c`.
pub fn sample_unguided<M: ConditionalDenoiser, R: Rng + ?Sized>(
    model: &M,
    c: &Embedding,
    schedule: &NoiseSchedule,
    settings: &SamplerSettings,
    rng: &mut R,
) -> Result<(State, TrajectoryRecord)> {
    let mut rule = UnguidedRule {
        model,
        c,
        reward: None,
    };
    drive(model, c, schedule, settings, rng, &mut rule)
}
