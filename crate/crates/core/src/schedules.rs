//! Discrete noise-level grids `σ_0 < σ_1 < … < σ_T` and the Euler step
//! fraction `η_t` derived from consecutive levels.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default exponent of the power (Karras-style) grid.
pub const DEFAULT_POWER_EXPONENT: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Power,
}

/// Which noise level divides `σ_t − σ_{t-1}` in the step fraction.
///
/// `Current` divides by `σ_t` and is well defined on the terminal step into
/// `σ_0 = 0`. `Previous` divides by `σ_{t-1}` and therefore fails on that step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    #[default]
    Current,
    Previous,
}

/// Strictly increasing noise grid with `T + 1` entries, indexed by `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    sigma_values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    kind: ScheduleKind,
    #[serde(rename = "T")]
    num_steps: usize,
    sigma_values: Vec<f64>,
}

impl TryFrom<RawSchedule> for NoiseSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        if raw.sigma_values.len() != raw.num_steps + 1 {
            return Err(invalid(format!(
                "schedule has {} sigma values but T = {}",
                raw.sigma_values.len(),
                raw.num_steps
            )));
        }
        NoiseSchedule::from_values(raw.kind, raw.sigma_values)
    }
}

impl From<NoiseSchedule> for RawSchedule {
    fn from(s: NoiseSchedule) -> Self {
        RawSchedule {
            kind: s.kind,
            num_steps: s.num_steps(),
            sigma_values: s.sigma_values,
        }
    }
}

impl NoiseSchedule {
    /// Validates an explicit grid.
    pub fn from_values(kind: ScheduleKind, sigma_values: Vec<f64>) -> Result<Self> {
        if sigma_values.len() < 2 {
            return Err(invalid("a schedule needs at least two noise levels"));
        }
        if sigma_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(invalid("noise levels must be finite and non-negative"));
        }
        if sigma_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("noise levels must be strictly increasing in t"));
        }
        if kind == ScheduleKind::Linear && sigma_values[0] != 0.0 {
            return Err(invalid("a linear schedule starts at sigma_0 = 0"));
        }
        Ok(Self { kind, sigma_values })
    }

    /// `σ_t = sigma_max · t / T`.
    pub fn linear(num_steps: usize, sigma_max: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(invalid("T must be at least 1"));
        }
        if !(sigma_max > 0.0) || !sigma_max.is_finite() {
            return Err(invalid(format!("sigma_max must be positive, got {sigma_max}")));
        }
        let t_max = num_steps as f64;
        let mut sigma_values: Vec<f64> = (0..=num_steps)
            .map(|t| sigma_max * t as f64 / t_max)
            .collect();
        sigma_values[num_steps] = sigma_max;
        Ok(Self {
            kind: ScheduleKind::Linear,
            sigma_values,
        })
    }

    /// Power grid: `σ_t = (a + (t−1)/(T−1)·(b − a))^ρ` for `t ≥ 1` with
    /// `a = sigma_min^{1/ρ}`, `b = sigma_max^{1/ρ}`, and `σ_0 = 0`.
    /// With `T = 1` the single level is `sigma_max`.
    pub fn power(num_steps: usize, sigma_min: f64, sigma_max: f64, rho_exp: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(invalid("T must be at least 1"));
        }
        if !(sigma_min > 0.0) || !sigma_max.is_finite() {
            return Err(invalid("sigma_min must be positive and sigma_max finite"));
        }
        if sigma_min >= sigma_max {
            return Err(invalid(format!(
                "sigma_min ({sigma_min}) must be below sigma_max ({sigma_max})"
            )));
        }
        if !(rho_exp > 0.0) {
            return Err(invalid("power exponent must be positive"));
        }
        let lo = sigma_min.powf(1.0 / rho_exp);
        let hi = sigma_max.powf(1.0 / rho_exp);
        let mut sigma_values = Vec::with_capacity(num_steps + 1);
        sigma_values.push(0.0);
        if num_steps == 1 {
            sigma_values.push(sigma_max);
        } else {
            let denom = (num_steps - 1) as f64;
            for t in 1..=num_steps {
                let frac = (t - 1) as f64 / denom;
                sigma_values.push((lo + frac * (hi - lo)).powf(rho_exp));
            }
            // pin endpoints against powf round-off
            sigma_values[1] = sigma_min;
            sigma_values[num_steps] = sigma_max;
        }
        Self::from_values(ScheduleKind::Power, sigma_values)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of steps `T`.
    pub fn num_steps(&self) -> usize {
        self.sigma_values.len() - 1
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma_values[t]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_values[self.num_steps()]
    }

    pub fn sigma_values(&self) -> &[f64] {
        &self.sigma_values
    }

    /// `η_t` for the step `t → t−1`; `t` must be in `1..=T`.
    pub fn step_fraction(&self, t: usize, mode: DenominatorMode) -> Result<f64> {
        if t == 0 || t > self.num_steps() {
            return Err(invalid(format!("step index {t} outside 1..={}", self.num_steps())));
        }
        step_fraction(self.sigma_values[t], self.sigma_values[t - 1], mode)
    }
}

/// `(σ_t − σ_{t-1}) / σ_t` or `(σ_t − σ_{t-1}) / σ_{t-1}` depending on `mode`.
pub fn step_fraction(sigma_t: f64, sigma_prev: f64, mode: DenominatorMode) -> Result<f64> {
    if !(sigma_prev >= 0.0) || !sigma_t.is_finite() {
        return Err(invalid("noise levels must be finite and non-negative"));
    }
    if sigma_prev >= sigma_t {
        return Err(invalid(format!(
            "sigma_prev ({sigma_prev}) must be below sigma_t ({sigma_t})"
        )));
    }
    let delta = sigma_t - sigma_prev;
    match mode {
        DenominatorMode::Current => Ok(delta / sigma_t),
        DenominatorMode::Previous => {
            if sigma_prev == 0.0 {
                Err(Error::DivisionByZero(
                    "step fraction with previous-level denominator at sigma_prev = 0".into(),
                ))
            } else {
                Ok(delta / sigma_prev)
            }
        }
    }
}
