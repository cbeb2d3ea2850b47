//! Toy bead-chain tasks in the prior/likelihood mismatch regime.
//!
//! A two-mode mixture prior over an `N`-bead planar chain: the dominant mode
//! is a straight chain and the minority mode is bent at a central hinge. The
//! target is drawn from the minority mode, so the reward favours a region the
//! prior rarely visits.

use embedsteer::linalg::{seeded_rng, standard_normal_vec, Matrix};
use embedsteer::models::{AffineMap, ConditionalDenoiser, MixtureMode, MixturePriorModel};
use embedsteer::rewards::{
    select_top_k_constraints, DistanceConstraintReward, MapMSEReward, RewardSpec, VoxelGrid,
};
use embedsteer::{Embedding, EmbeddingComponent, Result, State};
use serde::{Deserialize, Serialize};

/// Bond length between consecutive beads (Å).
pub const BOND_LENGTH: f64 = 3.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    #[default]
    Distance,
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskSpec {
    pub kind: ToyKind,
    /// seed for the mean maps, the base embedding and the target draw
    pub seed: u64,
    pub beads: usize,
    pub weights: [f64; 2],
    /// per-coordinate std of each mode (Å)
    pub mode_std: f64,
    /// hinge angle of the minority mode (radians)
    pub hinge_angle: f64,
    /// entries of `W_k` are `N(0, w_scale²/d)`
    pub w_scale: f64,
    pub single_dim: usize,
    pub pair_dim: usize,
    pub constraints: usize,
    pub delta: f64,
    pub grid_shape: [usize; 3],
    pub grid_spacing: f64,
    pub atom_width: f64,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        Self {
            kind: ToyKind::Distance,
            seed: 0,
            beads: 8,
            weights: [0.9, 0.1],
            mode_std: 0.7,
            hinge_angle: 1.0,
            w_scale: 2.0,
            single_dim: 32,
            pair_dim: 64,
            constraints: 5,
            delta: 2.0,
            grid_shape: [16, 16, 16],
            grid_spacing: 2.5,
            atom_width: embedsteer::rewards::DEFAULT_ATOM_WIDTH,
        }
    }
}

/// Everything a steering run on the toy task needs.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub model: MixturePriorModel,
    pub reward: RewardSpec,
    pub embedding: Embedding,
    pub target: State,
    /// mean of the dominant mode at the base embedding
    pub prior_reference: State,
}

/// Chain along x whose second half is rotated by `angle` about z at the
/// middle bead.
pub fn hinge_chain(beads: usize, angle: f64) -> Vec<f64> {
    let pivot = beads / 2;
    let mut out = Vec::with_capacity(3 * beads);
    for i in 0..beads {
        let (x, y) = if i <= pivot {
            (i as f64 * BOND_LENGTH, 0.0)
        } else {
            let r = (i - pivot) as f64 * BOND_LENGTH;
            (pivot as f64 * BOND_LENGTH + r * angle.cos(), r * angle.sin())
        };
        out.extend_from_slice(&[x, y, 0.0]);
    }
    out
}

pub fn build_toy_task(spec: &ToyTaskSpec) -> Result<ToyTask> {
    if spec.beads < 2 {
        return Err(embedsteer::Error::InvalidArgument("toy chain needs at least 2 beads".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    let dim = 3 * spec.beads;
    let embed_dim = spec.single_dim + spec.pair_dim;
    let base = standard_normal_vec(&mut rng, embed_dim);
    let embedding = Embedding::new(vec![
        EmbeddingComponent { name: "single".into(), values: base[..spec.single_dim].to_vec() },
        EmbeddingComponent { name: "pair".into(), values: base[spec.single_dim..].to_vec() },
    ])?;
    let conformations = [hinge_chain(spec.beads, 0.0), hinge_chain(spec.beads, spec.hinge_angle)];
    let w_std = spec.w_scale / (embed_dim as f64).sqrt();
    let modes = conformations
        .iter()
        .zip(spec.weights)
        .map(|(conf, weight)| {
            let w = Matrix::random_normal(&mut rng, dim, embed_dim, w_std);
            // pin the mode mean at the base embedding to the conformation
            let shift = w.matvec(&base);
            let bias = conf.iter().zip(&shift).map(|(a, b)| a - b).collect();
            Ok(MixtureMode { weight, mean_map: AffineMap::new(w, bias)?, std: spec.mode_std })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = MixturePriorModel::new(modes)?;

    let minority = &model.modes()[1];
    let mut target = minority.mean_map.apply(&base);
    for (t, e) in target.iter_mut().zip(standard_normal_vec(&mut rng, dim)) {
        *t += minority.std * e;
    }
    let target = State::new(target);
    let prior_reference = State::new(model.modes()[0].mean_map.apply(&base));

    let reward = match spec.kind {
        ToyKind::Distance => DistanceConstraintReward::new(
            select_top_k_constraints(&prior_reference, &target, spec.constraints)?,
            spec.delta,
        )?
        .into(),
        ToyKind::Map => {
            let grid = VoxelGrid::centered(spec.grid_shape, centroid(&target), spec.grid_spacing)?;
            MapMSEReward::from_structure(grid, &target, spec.atom_width)?.into()
        }
    };
    debug_assert_eq!(model.dim(), dim);
    Ok(ToyTask { model, reward, embedding, target, prior_reference })
}

fn centroid(x: &State) -> [f64; 3] {
    let n = (x.dim() / 3) as f64;
    let mut c = [0.0; 3];
    for bead in x.coords.chunks(3) {
        for a in 0..3 {
            c[a] += bead[a] / n;
        }
    }
    c
}

/// Task metric: satisfied constraints for distance rewards, map correlation
/// for map rewards, the reward itself otherwise.
pub fn task_metric(reward: &RewardSpec, x: &State) -> Result<f64> {
    match reward {
        RewardSpec::Distance(r) => Ok(r.satisfied_count(x)? as f64),
        RewardSpec::Map(r) => r.correlation(x),
        RewardSpec::Gaussian(_) => reward.value(x),
    }
}
