//! Closed-form conditional denoisers.
//!
//! Each model defines a conditional prior `p(x_0 | c)` whose mean depends
//! affinely on the flattened embedding, so `E[x_0 | x_t = x]` and its
//! Jacobians with respect to `x` and `c` are available exactly.
//!
//! - [`GaussianPriorModel`]: `x_0 ~ N(W·c + b, s0²·I)`.
//! - [`MixturePriorModel`]: `x_0 ~ Σ_k π_k·N(W_k·c + b_k, s_k²·I)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, axpy, dot, seeded_rng, Matrix};

/// Point in coordinate space (`D = 3·N_beads` for bead chains, `D = 1` for
/// the scalar task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State {
    pub coords: Vec<f64>,
}

impl State {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn scalar(x: f64) -> Self {
        Self { coords: vec![x] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.coords)
    }
}

impl From<Vec<f64>> for State {
    fn from(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingComponent {
    pub name: String,
    pub values: Vec<f64>,
}

/// Named conditioning tensors, flattened in component order.
///
/// Gradients with respect to an embedding are returned as an `Embedding` of
/// the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<EmbeddingComponent>", into = "Vec<EmbeddingComponent>")]
pub struct Embedding {
    components: Vec<EmbeddingComponent>,
}

impl TryFrom<Vec<EmbeddingComponent>> for Embedding {
    type Error = Error;

    fn try_from(components: Vec<EmbeddingComponent>) -> Result<Self> {
        Embedding::new(components)
    }
}

impl From<Embedding> for Vec<EmbeddingComponent> {
    fn from(e: Embedding) -> Self {
        e.components
    }
}

impl Embedding {
    pub fn new(components: Vec<EmbeddingComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("an embedding needs at least one component"));
        }
        for (i, c) in components.iter().enumerate() {
            if c.values.is_empty() {
                return Err(invalid(format!("embedding component '{}' is empty", c.name)));
            }
            if !linalg::all_finite(&c.values) {
                return Err(invalid(format!(
                    "embedding component '{}' has non-finite entries",
                    c.name
                )));
            }
            if components[..i].iter().any(|o| o.name == c.name) {
                return Err(invalid(format!("duplicate embedding component '{}'", c.name)));
            }
        }
        Ok(Self { components })
    }

    /// Single component, e.g. the scalar location parameter of the 1-D task.
    pub fn single(name: &str, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![EmbeddingComponent {
            name: name.to_string(),
            values,
        }])
    }

    pub fn components(&self) -> &[EmbeddingComponent] {
        &self.components
    }

    pub fn component(&self, name: &str) -> Option<&EmbeddingComponent> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.values.len()).collect()
    }

    /// Total flattened dimension `d`.
    pub fn dim(&self) -> usize {
        self.components.iter().map(|c| c.values.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| c.values.iter().copied())
            .collect()
    }

    /// New embedding with this shape and the given flattened values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        check_len(self.dim(), flat.len(), "flattened embedding")?;
        let mut offset = 0;
        let components = self
            .components
            .iter()
            .map(|c| {
                let n = c.values.len();
                let values = flat[offset..offset + n].to_vec();
                offset += n;
                EmbeddingComponent {
                    name: c.name.clone(),
                    values,
                }
            })
            .collect();
        Ok(Self { components })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| EmbeddingComponent {
                    name: c.name.clone(),
                    values: vec![0.0; c.values.len()],
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Embedding) -> bool {
        self.components.len() == other.components.len()
            && self
                .components
                .iter()
                .zip(&other.components)
                .all(|(a, b)| a.name == b.name && a.values.len() == b.values.len())
    }

    fn check_shape(&self, other: &Embedding) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(invalid("embedding shapes differ"))
        }
    }

    /// `self + a·other`
    pub fn add_scaled(&self, a: f64, other: &Embedding) -> Result<Self> {
        self.check_shape(other)?;
        let mut out = self.clone();
        for (dst, src) in out.components.iter_mut().zip(&other.components) {
            axpy(a, &src.values, &mut dst.values);
        }
        Ok(out)
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        self.check_shape(other)?;
        Ok(dot(&self.flat(), &other.flat()))
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.flat())
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| linalg::all_finite(&c.values))
    }

    pub(crate) fn components_mut(&mut self) -> &mut [EmbeddingComponent] {
        &mut self.components
    }
}

/// `m(c) = W·c + b`, `W ∈ R^{D×d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl AffineMap {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_len(weight.rows(), bias.len(), "affine map bias")?;
        Ok(Self { weight, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Matrix::identity(dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        let mut out = self.weight.matvec(c);
        axpy(1.0, &self.bias, &mut out);
        out
    }
}

/// Interface shared by every closed-form denoiser.
pub trait ConditionalDenoiser {
    /// Coordinate dimension `D`.
    fn dim(&self) -> usize;

    /// Flattened embedding dimension `d`.
    fn embedding_dim(&self) -> usize;

    /// Exact posterior mean `E[x_0 | x_t = x]` at noise level `sigma`.
    fn denoise(&self, x: &State, c: &Embedding, sigma: f64) -> Result<State>;

    /// `J_xᵀ·v` with `J_x = ∂denoise/∂x`.
    fn vjp_x(&self, x: &State, c: &Embedding, sigma: f64, v: &[f64]) -> Result<Vec<f64>>;

    /// `J_cᵀ·v`, shaped like `c`.
    fn vjp_c(&self, x: &State, c: &Embedding, sigma: f64, v: &[f64]) -> Result<Embedding>;

    /// `J_c·u` for an embedding-shaped direction `u`.
    fn jvp_c(&self, x: &State, c: &Embedding, sigma: f64, u: &Embedding) -> Result<Vec<f64>>;

    /// Ancestral draw from `p(x_0 | c)`.
    fn sample_prior<R: Rng + ?Sized>(&self, c: &Embedding, rng: &mut R) -> Result<State>
    where
        Self: Sized;

    /// Draw from the noisy marginal `p(x_σ | c)`, i.e. a prior sample plus
    /// `σ·ε`.
    fn sample_noisy_prior<R: Rng + ?Sized>(&self, c: &Embedding, sigma: f64, rng: &mut R) -> Result<State>
    where
        Self: Sized,
    {
        let mut x = self.sample_prior(c, rng)?;
        let noise = linalg::standard_normal_vec(rng, x.dim());
        axpy(sigma, &noise, &mut x.coords);
        Ok(x)
    }
}

fn check_inputs(dim: usize, embed_dim: usize, x: &State, c: &Embedding, sigma: f64) -> Result<()> {
    check_len(dim, x.dim(), "state")?;
    check_len(embed_dim, c.dim(), "embedding")?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("noise level must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

/// Isotropic conditional Gaussian prior `N(W·c + b, s0²·I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPriorModel {
    mean_map: AffineMap,
    prior_std: f64,
}

impl GaussianPriorModel {
    pub fn new(mean_map: AffineMap, prior_std: f64) -> Result<Self> {
        if !(prior_std > 0.0) || !prior_std.is_finite() {
            return Err(invalid(format!("prior std must be positive, got {prior_std}")));
        }
        Ok(Self { mean_map, prior_std })
    }

    /// The scalar model `N(c, s0²)` with an identity mean map.
    pub fn scalar_location(prior_std: f64) -> Result<Self> {
        Self::new(AffineMap::identity(1), prior_std)
    }

    pub fn mean_map(&self) -> &AffineMap {
        &self.mean_map
    }

    pub fn prior_std(&self) -> f64 {
        self.prior_std
    }

    pub fn prior_mean(&self, c: &Embedding) -> Result<Vec<f64>> {
        check_len(self.mean_map.in_dim(), c.dim(), "embedding")?;
        Ok(self.mean_map.apply(&c.flat()))
    }

    /// Posterior shrinkage `k = s0² / (s0² + σ²)`; exactly 1 at `σ = 0`.
    pub fn shrinkage(&self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 1.0;
        }
        let s2 = self.prior_std * self.prior_std;
        s2 / (s2 + sigma * sigma)
    }

    /// Analytic marginal score `−(x − m(c)) / (s0² + σ²)`.
    pub fn marginal_score(&self, x: &State, c: &Embedding, sigma: f64) -> Result<Vec<f64>> {
        check_inputs(self.dim(), self.embedding_dim(), x, c, sigma)?;
        let var = self.prior_std * self.prior_std + sigma * sigma;
        let mean = self.mean_map.apply(&c.flat());
        Ok(x.coords.iter().zip(&mean).map(|(xi, mi)| -(xi - mi) / var).collect())
    }
}

impl ConditionalDenoiser for GaussianPriorModel {
    fn dim(&self) -> usize {
        self.mean_map.out_dim()
    }

    fn embedding_dim(&self) -> usize {
        self.mean_map.in_dim()
    }

    fn denoise(&self, x: &State, c: &Embedding, sigma: f64) -> Result<State> {
        check_inputs(self.dim(), self.embedding_dim(), x, c, sigma)?;
        if sigma == 0.0 {
            return Ok(x.clone());
        }
        let k = self.shrinkage(sigma);
        let mean = self.mean_map.apply(&c.flat());
        Ok(State::new(
            x.coords.iter().zip(&mean).map(|(xi, mi)| mi + k * (xi - mi)).collect(),
        ))
    }

    fn vjp_x(&self, x: &State, c: &Embedding, sigma: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_inputs(self.dim(), self.embedding_dim(), x, c, sigma)?;
        check_len(self.dim(), v.len(), "cotangent")?;
        Ok(linalg::scale(self.shrinkage(sigma), v))
    }

    fn vjp_c(&self, x: &State, c: &Embedding, sigma: f64, v: &[f64]) -> Result<Embedding> {
        check_inputs(self.dim(), self.embedding_dim(), x, c, sigma)?;
        check_len(self.dim(), v.len(), "cotangent")?;
        let a = 1.0 - self.shrinkage(sigma);
        let flat = linalg::scale(a, &self.mean_map.weight.matvec_t(v));
        c.with_flat(&flat)
    }

    fn jvp_c(&self, x: &State, c: &Embedding, sigma: f64, u: &Embedding) -> Result<Vec<f64>> {
        check_inputs(self.dim(), self.embedding_dim(), x, c, sigma)?;
        c.check_shape(u)?;
        let a = 1.0 - self.shrinkage(sigma);
        Ok(linalg::scale(a, &self.mean_map.weight.matvec(&u.flat())))
    }

    fn sample_prior<R: Rng + ?Sized>(&self, c: &Embedding, rng: &mut R) -> Result<State> {
        let mut mean = self.prior_mean(c)?;
        let noise = linalg::standard_normal_vec(rng, mean.len());
        axpy(self.prior_std, &noise, &mut mean);
        Ok(State::new(mean))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMode {
    pub weight: f64,
    pub mean_map: AffineMap,
    pub std: f64,
}

/// Isotropic Gaussian mixture prior with per-mode affine mean maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePriorModel {
    modes: Vec<MixtureMode>,
    #[serde(skip)]
    log_weights: Vec<f64>,
}

/// Per-mode quantities at a fixed `(x, c, σ)`.
struct ModeTerms {
    /// responsibilities `r_k`
    resp: Vec<f64>,
    /// shrinkage `k_k = s_k² / (s_k² + σ²)`
    shrink: Vec<f64>,
    /// per-mode posterior means `μ_k = m_k + k_k·(x − m_k)`
    post_means: Vec<Vec<f64>>,
    /// `(x − m_k) / (s_k² + σ²)`, the negative x-gradient of the log-responsibility logit
    scaled_resid: Vec<Vec<f64>>,
}

impl MixturePriorModel {
    pub fn new(modes: Vec<MixtureMode>) -> Result<Self> {
        let first = modes.first().ok_or_else(|| invalid("a mixture needs at least one mode"))?;
        let (dim, embed_dim) = (first.mean_map.out_dim(), first.mean_map.in_dim());
        for m in &modes {
            if m.mean_map.out_dim() != dim || m.mean_map.in_dim() != embed_dim {
                return Err(invalid("mixture modes disagree on mean-map shape"));
            }
            if !(m.weight >= 0.0) || !m.weight.is_finite() {
                return Err(invalid("mixture weights must be finite and non-negative"));
            }
            if !(m.std > 0.0) || !m.std.is_finite() {
                return Err(invalid("mixture mode std must be positive"));
            }
        }
        let total: f64 = modes.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        let log_weights = modes.iter().map(|m| m.weight.ln()).collect();
        Ok(Self { modes, log_weights })
    }

    pub fn modes(&self) -> &[MixtureMode] {
        &self.modes
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    fn log_weight(&self, k: usize) -> f64 {
        // deserialized models skip the cache
        self.log_weights
            .get(k)
            .copied()
            .unwrap_or_else(|| self.modes[k].weight.ln())
    }

    pub fn mode_means(&self, c: &Embedding) -> Result<Vec<Vec<f64>>> {
        check_len(self.embedding_dim(), c.dim(), "embedding")?;
        let flat = c.flat();
        Ok(self.modes.iter().map(|m| m.mean_map.apply(&flat)).collect())
    }

    /// Posterior mode probabilities `P(k | x_σ = x, c)`, computed in log space.
    pub fn responsibilities(&self, x: &State, c: &Embedding, sigma: f64) -> Result<Vec<f64>> {
        Ok(self.terms(x, c, sigma)?.resp)
    }

    fn terms(&self, x: &State, c: &Embedding, sigma: f64) -> Result<ModeTerms> {
        check_inputs(self.dim(), self.embedding_dim(), x, c, sigma)?;
        let flat = c.flat();
        let half_dim = 0.5 * self.dim() as f64;
        let n = self.modes.len();
        let mut logits = Vec::with_capacity(n);
        let mut shrink = Vec::with_capacity(n);
        let mut post_means = Vec::with_capacity(n);
        let mut scaled_resid = Vec::with_capacity(n);
        for (k, mode) in self.modes.iter().enumerate() {
            let mean = mode.mean_map.apply(&flat);
            let s2 = mode.std * mode.std;
            let var = s2 + sigma * sigma;
            let kk = s2 / var;
            let resid = linalg::sub(&x.coords, &mean);
            let sq = dot(&resid, &resid);
            logits.push(self.log_weight(k) - half_dim * var.ln() - sq / (2.0 * var));
            post_means.push(
                mean.iter()
                    .zip(&resid)
                    .map(|(m, r)| m + kk * r)
                    .collect::<Vec<_>>(),
            );
            scaled_resid.push(linalg::scale(1.0 / var, &resid));
            shrink.push(kk);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= z);
        Ok(ModeTerms {
            resp,
            shrink,
            post_means,
            scaled_resid,
        })
    }
}

impl ConditionalDenoiser for MixturePriorModel {
    fn dim(&self) -> usize {
        self.modes[0].mean_map.out_dim()
    }

    fn embedding_dim(&self) -> usize {
        self.modes[0].mean_map.in_dim()
    }

    fn denoise(&self, x: &State, c: &Embedding, sigma: f64) -> Result<State> {
        let t = self.terms(x, c, sigma)?;
        let mut out = vec![0.0; self.dim()];
        for (r, mu) in t.resp.iter().zip(&t.post_means) {
            axpy(*r, mu, &mut out);
        }
        Ok(State::new(out))
    }

    fn vjp_x(&self, x: &State, c: &Embedding, sigma: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v.len(), "cotangent")?;
        let t = self.terms(x, c, sigma)?;
        // J_xᵀv = (Σ r_k k_k)·v − Σ_k r_k (μ_k·v − Σ_j r_j μ_j·v)·(x − m_k)/v_k
        let proj: Vec<f64> = t.post_means.iter().map(|mu| dot(mu, v)).collect();
        let mean_proj: f64 = t.resp.iter().zip(&proj).map(|(r, p)| r * p).sum();
        let diag: f64 = t.resp.iter().zip(&t.shrink).map(|(r, k)| r * k).sum();
        let mut out = linalg::scale(diag, v);
        for k in 0..self.modes.len() {
            axpy(-t.resp[k] * (proj[k] - mean_proj), &t.scaled_resid[k], &mut out);
        }
        Ok(out)
    }

    fn vjp_c(&self, x: &State, c: &Embedding, sigma: f64, v: &[f64]) -> Result<Embedding> {
        check_len(self.dim(), v.len(), "cotangent")?;
        let t = self.terms(x, c, sigma)?;
        let proj: Vec<f64> = t.post_means.iter().map(|mu| dot(mu, v)).collect();
        let mean_proj: f64 = t.resp.iter().zip(&proj).map(|(r, p)| r * p).sum();
        let mut flat = vec![0.0; self.embedding_dim()];
        for (k, mode) in self.modes.iter().enumerate() {
            // W_kᵀ [ r_k (1 − k_k) v + r_k (μ_k·v − mean) (x − m_k)/v_k ]
            let mut cot = linalg::scale(t.resp[k] * (1.0 - t.shrink[k]), v);
            axpy(t.resp[k] * (proj[k] - mean_proj), &t.scaled_resid[k], &mut cot);
            axpy(1.0, &mode.mean_map.weight.matvec_t(&cot), &mut flat);
        }
        c.with_flat(&flat)
    }

    fn jvp_c(&self, x: &State, c: &Embedding, sigma: f64, u: &Embedding) -> Result<Vec<f64>> {
        c.check_shape(u)?;
        let t = self.terms(x, c, sigma)?;
        let u_flat = u.flat();
        let dmeans: Vec<Vec<f64>> = self
            .modes
            .iter()
            .map(|m| m.mean_map.weight.matvec(&u_flat))
            .collect();
        // directional derivative of each logit: ((x − m_k)/v_k)·(W_k u)
        let dlogit: Vec<f64> = t
            .scaled_resid
            .iter()
            .zip(&dmeans)
            .map(|(s, dm)| dot(s, dm))
            .collect();
        let mean_dlogit: f64 = t.resp.iter().zip(&dlogit).map(|(r, q)| r * q).sum();
        let mut out = vec![0.0; self.dim()];
        for k in 0..self.modes.len() {
            axpy(t.resp[k] * (1.0 - t.shrink[k]), &dmeans[k], &mut out);
            axpy(t.resp[k] * (dlogit[k] - mean_dlogit), &t.post_means[k], &mut out);
        }
        Ok(out)
    }

    fn sample_prior<R: Rng + ?Sized>(&self, c: &Embedding, rng: &mut R) -> Result<State> {
        check_len(self.embedding_dim(), c.dim(), "embedding")?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = self.modes.len() - 1;
        for (k, m) in self.modes.iter().enumerate() {
            acc += m.weight;
            if u < acc {
                chosen = k;
                break;
            }
        }
        // guard against round-off in the cumulative sum landing on a zero-weight tail
        while self.modes[chosen].weight == 0.0 && chosen > 0 {
            chosen -= 1;
        }
        let mode = &self.modes[chosen];
        let mut x = mode.mean_map.apply(&c.flat());
        let noise = linalg::standard_normal_vec(rng, x.len());
        axpy(mode.std, &noise, &mut x);
        Ok(State::new(x))
    }
}

/// Either closed-form denoiser behind one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserModel {
    Gaussian(GaussianPriorModel),
    Mixture(MixturePriorModel),
}

impl From<GaussianPriorModel> for DenoiserModel {
    fn from(m: GaussianPriorModel) -> Self {
        Self::Gaussian(m)
    }
}

impl From<MixturePriorModel> for DenoiserModel {
    fn from(m: MixturePriorModel) -> Self {
        Self::Mixture(m)
    }
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            DenoiserModel::Gaussian($m) => $e,
            DenoiserModel::Mixture($m) => $e,
        }
    };
}

impl ConditionalDenoiser for DenoiserModel {
    fn dim(&self) -> usize {
        dispatch!(self, m => m.dim())
    }

    fn embedding_dim(&self) -> usize {
        dispatch!(self, m => m.embedding_dim())
    }

    fn denoise(&self, x: &State, c: &Embedding, sigma: f64) -> Result<State> {
        dispatch!(self, m => m.denoise(x, c, sigma))
    }

    fn vjp_x(&self, x: &State, c: &Embedding, sigma: f64, v: &[f64]) -> Result<Vec<f64>> {
        dispatch!(self, m => m.vjp_x(x, c, sigma, v))
    }

    fn vjp_c(&self, x: &State, c: &Embedding, sigma: f64, v: &[f64]) -> Result<Embedding> {
        dispatch!(self, m => m.vjp_c(x, c, sigma, v))
    }

    fn jvp_c(&self, x: &State, c: &Embedding, sigma: f64, u: &Embedding) -> Result<Vec<f64>> {
        dispatch!(self, m => m.jvp_c(x, c, sigma, u))
    }

    fn sample_prior<R: Rng + ?Sized>(&self, c: &Embedding, rng: &mut R) -> Result<State> {
        dispatch!(self, m => m.sample_prior(c, rng))
    }
}

/// `(x̂ − x) / σ²`, the Tweedie score estimate.
pub fn score_from_denoiser(x_hat: &State, x: &State, sigma: f64) -> Result<Vec<f64>> {
    check_len(x.dim(), x_hat.dim(), "denoised state")?;
    if sigma == 0.0 {
        return Err(Error::DivisionByZero("score at sigma = 0".into()));
    }
    if !(sigma > 0.0) {
        return Err(invalid("noise level must be positive"));
    }
    let s2 = sigma * sigma;
    Ok(x_hat
        .coords
        .iter()
        .zip(&x.coords)
        .map(|(h, xi)| (h - xi) / s2)
        .collect())
}

/// How the mean maps of a configured model are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeanMapSpec {
    /// `W = I`, `b = 0`; requires `D = d`.
    Identity,
    /// `W_k` entries `N(0, w_scale²)`, `b_k` entries `N(0, b_scale²)`, drawn
    /// mode by mode from one seeded stream.
    Random {
        seed: u64,
        #[serde(default = "one")]
        w_scale: f64,
        #[serde(default)]
        b_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub name: String,
    pub dim: usize,
}

/// Structured-config description of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Gaussian {
        dim: usize,
        components: Vec<ComponentSpec>,
        prior_std: f64,
        mean_map: MeanMapSpec,
    },
    Mixture {
        dim: usize,
        components: Vec<ComponentSpec>,
        weights: Vec<f64>,
        stds: Vec<f64>,
        mean_map: MeanMapSpec,
    },
}

impl ModelSpec {
    pub fn components(&self) -> &[ComponentSpec] {
        match self {
            ModelSpec::Gaussian { components, .. } | ModelSpec::Mixture { components, .. } => {
                components
            }
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.components().iter().map(|c| c.dim).sum()
    }

    pub fn build(&self) -> Result<DenoiserModel> {
        let embed_dim = self.embedding_dim();
        if self.components().iter().any(|c| c.dim == 0) {
            return Err(invalid("embedding components need a positive dimension"));
        }
        match self {
            ModelSpec::Gaussian {
                dim,
                prior_std,
                mean_map,
                ..
            } => {
                let map = build_maps(mean_map, *dim, embed_dim, 1)?.remove(0);
                Ok(GaussianPriorModel::new(map, *prior_std)?.into())
            }
            ModelSpec::Mixture {
                dim,
                weights,
                stds,
                mean_map,
                ..
            } => {
                if weights.len() != stds.len() {
                    return Err(invalid("mixture weights and stds differ in length"));
                }
                let maps = build_maps(mean_map, *dim, embed_dim, weights.len())?;
                let modes = maps
                    .into_iter()
                    .zip(weights.iter().zip(stds))
                    .map(|(mean_map, (&weight, &std))| MixtureMode {
                        weight,
                        mean_map,
                        std,
                    })
                    .collect();
                Ok(MixturePriorModel::new(modes)?.into())
            }
        }
    }
}

fn build_maps(spec: &MeanMapSpec, dim: usize, embed_dim: usize, count: usize) -> Result<Vec<AffineMap>> {
    if dim == 0 {
        return Err(invalid("model dimension must be positive"));
    }
    match spec {
        MeanMapSpec::Identity => {
            if dim != embed_dim {
                return Err(invalid(format!(
                    "identity mean map needs D = d, got D = {dim}, d = {embed_dim}"
                )));
            }
            Ok(vec![AffineMap::identity(dim); count])
        }
        MeanMapSpec::Random {
            seed,
            w_scale,
            b_scale,
        } => {
            let mut rng = seeded_rng(*seed);
            Ok((0..count)
                .map(|_| {
                    let weight = Matrix::random_normal(&mut rng, dim, embed_dim, *w_scale);
                    let bias = linalg::scale(*b_scale, &linalg::standard_normal_vec(&mut rng, dim));
                    AffineMap { weight, bias }
                })
                .collect())
        }
    }
}
