//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use embedsteer::models::{DenoiserModel, ModelSpec};
use embedsteer::rewards::RewardSpec;
use embedsteer::steering::{SteeringConfig, SteeringMethod};
use embedsteer::{Embedding, NoiseSchedule};
use serde::{Deserialize, Serialize};

use crate::error::BenchError;
use crate::task::{build_toy_task, ToyTaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SyntheticFig1,
    LrSweep,
    StepScaling,
    SingleRun,
    Verify,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::SyntheticFig1 => "synthetic_fig1",
            ExperimentKind::LrSweep => "lr_sweep",
            ExperimentKind::StepScaling => "step_scaling",
            ExperimentKind::SingleRun => "single_run",
            ExperimentKind::Verify => "verify",
        }
    }
}

/// Either an explicit list or a contiguous range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (*start..start + count).collect(),
        }
    }

    /// `"1,2,5"` or `"0..2000"` (half-open).
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let bad = || BenchError::Parse(format!("cannot parse seed list {text:?}"));
        if let Some((a, b)) = text.split_once("..") {
            let start: u64 = a.trim().parse().map_err(|_| bad())?;
            let end: u64 = b.trim().parse().map_err(|_| bad())?;
            if end < start {
                return Err(bad());
            }
            return Ok(SeedSpec::Range { start, count: end - start });
        }
        text.split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()
            .map(SeedSpec::List)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Linear {
        steps: usize,
        sigma_max: f64,
    },
    Power {
        steps: usize,
        sigma_min: f64,
        sigma_max: f64,
        #[serde(default = "default_rho")]
        rho: f64,
    },
}

fn default_rho() -> f64 {
    embedsteer::schedules::DEFAULT_POWER_EXPONENT
}

impl ScheduleSpec {
    pub fn steps(&self) -> usize {
        match self {
            ScheduleSpec::Linear { steps, .. } | ScheduleSpec::Power { steps, .. } => *steps,
        }
    }

    pub fn with_steps(&self, t: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            ScheduleSpec::Linear { steps, .. } | ScheduleSpec::Power { steps, .. } => *steps = t,
        }
        out
    }

    pub fn build(&self) -> embedsteer::Result<NoiseSchedule> {
        match *self {
            ScheduleSpec::Linear { steps, sigma_max } => NoiseSchedule::linear(steps, sigma_max),
            ScheduleSpec::Power {
                steps,
                sigma_min,
                sigma_max,
                rho,
            } => NoiseSchedule::power(steps, sigma_min, sigma_max, rho),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Toy(ToyTaskSpec),
    Explicit {
        model: ModelSpec,
        reward: RewardSpec,
        embedding: Embedding,
    },
}

/// A resolved problem ready to sample.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: DenoiserModel,
    pub reward: RewardSpec,
    pub embedding: Embedding,
}

impl ProblemSpec {
    pub fn build(&self) -> embedsteer::Result<Problem> {
        match self {
            ProblemSpec::Toy(spec) => {
                let task = build_toy_task(spec)?;
                Ok(Problem {
                    model: task.model.into(),
                    reward: task.reward,
                    embedding: task.embedding,
                })
            }
            ProblemSpec::Explicit {
                model,
                reward,
                embedding,
            } => {
                let model = model.build()?;
                use embedsteer::models::ConditionalDenoiser;
                if embedding.dim() != model.embedding_dim() {
                    return Err(embedsteer::Error::InvalidArgument(format!(
                        "embedding has {} entries, model expects {}",
                        embedding.dim(),
                        model.embedding_dim()
                    )));
                }
                Ok(Problem {
                    model,
                    reward: reward.clone(),
                    embedding: embedding.clone(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub methods: Vec<SteeringMethod>,
    pub alphas: Vec<f64>,
}

/// Default learning-rate grid, half-decade spacing over two decades.
pub const DEFAULT_ALPHAS: [f64; 5] = [0.01, 0.0316, 0.1, 0.316, 1.0];

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            methods: vec![SteeringMethod::Embedopt, SteeringMethod::Dps],
            alphas: DEFAULT_ALPHAS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSection {
    pub methods: Vec<SteeringMethod>,
    pub steps: Vec<usize>,
    /// the constant `α·T`
    pub alpha_times_steps: f64,
    /// allowed drop of the mean metric relative to the longest run
    pub margin: f64,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            methods: vec![SteeringMethod::Embedopt],
            steps: vec![200, 100, 50, 20],
            alpha_times_steps: 20.0,
            margin: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fig1Section {
    pub dps_weights: Vec<f64>,
    pub embedopt_alphas: Vec<f64>,
}

impl Default for Fig1Section {
    fn default() -> Self {
        Self {
            dps_weights: vec![1.0, 100.0],
            embedopt_alphas: vec![0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub out_dir: PathBuf,
    pub seeds: SeedSpec,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    /// base steering settings; `single_run` runs each entry, the harnesses
    /// override method and α of the first
    #[serde(default = "default_steering")]
    pub steering: Vec<SteeringConfig>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub fig1: Fig1Section,
}

fn default_bins() -> usize {
    embedsteer::verification::DEFAULT_HISTOGRAM_BINS
}

fn default_steering() -> Vec<SteeringConfig> {
    vec![SteeringConfig::default()]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.seeds()
    }

    pub fn base_steering(&self) -> SteeringConfig {
        self.steering[0]
    }

    pub fn schedule_spec(&self) -> Result<&ScheduleSpec, BenchError> {
        self.schedule
            .as_ref()
            .ok_or_else(|| BenchError::Validation(format!("{} needs a [schedule] section", self.kind.as_str())))
    }

    pub fn problem(&self) -> Result<Problem, BenchError> {
        self.problem
            .as_ref()
            .ok_or_else(|| BenchError::Validation(format!("{} needs a [problem] section", self.kind.as_str())))?
            .build()
            .map_err(|e| BenchError::Validation(e.to_string()))
    }

    /// Checks everything that can be checked without sampling.
    pub fn validate(&self) -> Result<(), BenchError> {
        let invalid = |m: String| Err(BenchError::Validation(m));
        if self.kind == ExperimentKind::Verify {
            return Ok(());
        }
        if self.seed_list().is_empty() {
            return invalid("at least one seed is required".into());
        }
        if self.jobs == Some(0) {
            return invalid("jobs must be at least 1".into());
        }
        if self.bins == 0 {
            return invalid("bins must be at least 1".into());
        }
        if self.steering.is_empty() {
            return invalid("at least one [[steering]] entry is required".into());
        }
        for s in &self.steering {
            s.validate().map_err(|e| BenchError::Validation(e.to_string()))?;
        }
        self.schedule_spec()?
            .build()
            .map_err(|e| BenchError::Validation(e.to_string()))?;
        self.problem()?;
        match self.kind {
            ExperimentKind::LrSweep => {
                if self.sweep.alphas.is_empty() {
                    return invalid("sweep.alphas must not be empty".into());
                }
                if self.sweep.methods.is_empty() {
                    return invalid("sweep.methods must not be empty".into());
                }
                if self.sweep.alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
                    return invalid("sweep.alphas must be finite and >= 0".into());
                }
            }
            ExperimentKind::StepScaling => {
                if self.scaling.steps.is_empty() || self.scaling.steps.iter().any(|t| *t < 2) {
                    return invalid("scaling.steps must be non-empty with every T >= 2".into());
                }
                if !(self.scaling.alpha_times_steps >= 0.0) {
                    return invalid("scaling.alpha_times_steps must be >= 0".into());
                }
                for t in &self.scaling.steps {
                    self.schedule_spec()?
                        .with_steps(*t)
                        .build()
                        .map_err(|e| BenchError::Validation(e.to_string()))?;
                }
            }
            ExperimentKind::SyntheticFig1 => crate::experiments::fig1_oracle_inputs(self).map(|_| ())?,
            ExperimentKind::SingleRun | ExperimentKind::Verify => {}
        }
        Ok(())
    }

    /// Same config with command-line overrides applied.
    pub fn with_overrides(mut self, out: Option<PathBuf>, seeds: Option<SeedSpec>, jobs: Option<usize>) -> Self {
        if let Some(o) = out {
            self.out_dir = o;
        }
        if let Some(s) = seeds {
            self.seeds = s;
        }
        if jobs.is_some() {
            self.jobs = jobs;
        }
        self
    }
}
