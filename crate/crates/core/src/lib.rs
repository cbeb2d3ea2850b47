//! Inference-time steering for conditional diffusion samplers.
//!
//! Two steering families are implemented over closed-form conditional
//! denoisers:
//!
//! - **EmbedOpt**: gradient ascent on the conditioning embedding at every
//!   diffusion step, maximizing the reward of the denoised prediction
//!   (the *surrogate reward*), with per-component RMS-normalized updates.
//! - **DPS**: likelihood-gradient guidance on the noisy coordinates, either
//!   with the `σ²·w` reweighting or the norm-matched step used with the
//!   stochastic AF3-style sampler.
//!
//! The denoisers are conjugate Gaussians and Gaussian mixtures with affine
//! embedding-dependent means, so posterior means and every Jacobian product
//! are exact. The [`verification`] module carries the independent oracles
//! used to check them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod models;
pub mod rewards;
pub mod samplers;
pub mod schedules;
pub mod steering;
pub mod verification;

pub use error::{Error, Result};
pub use models::{DenoiserModel, Embedding, EmbeddingComponent, GaussianPriorModel, MixturePriorModel, State};
pub use rewards::RewardSpec;
pub use samplers::{Af3SamplerParams, SamplerMode, TrajectoryRecord};
pub use schedules::{DenominatorMode, NoiseSchedule, ScheduleKind};
pub use steering::{SteeringConfig, SteeringMethod};
