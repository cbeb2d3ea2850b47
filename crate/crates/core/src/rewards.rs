//! Differentiable rewards `R(x_0)` with exact gradients.
//!
//! Three families are provided: a Gaussian measurement log-likelihood, clipped
//! pairwise distance restraints, and a real-space density-map MSE. Target maps
//! serialize as raw little-endian `f64` plus a JSON header; restraint sets as
//! CSV rows `(i, j, target, delta)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, dot};
use crate::models::State;

/// Default Gaussian splat width in Å.
pub const DEFAULT_ATOM_WIDTH: f64 = 1.5;

/// `R(x) = −w / (2τ²)·‖x − y‖²`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeasurementReward {
    pub y: Vec<f64>,
    pub tau2: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl GaussianMeasurementReward {
    pub fn new(y: Vec<f64>, tau2: f64, weight: f64) -> Result<Self> {
        if !(tau2 > 0.0) {
            return Err(invalid("measurement variance must be positive"));
        }
        if !(weight >= 0.0) {
            return Err(invalid("measurement weight must be non-negative"));
        }
        Ok(Self { y, tau2, weight })
    }

    pub fn value_and_grad(&self, x: &State) -> Result<(f64, Vec<f64>)> {
        check_len(self.y.len(), x.dim(), "state")?;
        let scale = self.weight / self.tau2;
        let resid = linalg::sub(&x.coords, &self.y);
        let value = -0.5 * scale * dot(&resid, &resid);
        Ok((value, linalg::scale(-scale, &resid)))
    }
}

/// One restraint `‖x_i − x_j‖ ≈ target` on bead indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceConstraint {
    pub i: usize,
    pub j: usize,
    pub target: f64,
}

/// `R(x) = −Σ min(|d_ij(x) − target|, δ)²`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceConstraintReward {
    pub constraints: Vec<DistanceConstraint>,
    pub delta: f64,
}

/// Row of the restraint CSV.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ConstraintRow {
    i: usize,
    j: usize,
    target: f64,
    delta: f64,
}

impl DistanceConstraintReward {
    pub fn new(constraints: Vec<DistanceConstraint>, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(invalid("distance tolerance must be positive"));
        }
        if constraints.iter().any(|c| c.i == c.j) {
            return Err(invalid("a distance restraint needs two distinct beads"));
        }
        Ok(Self { constraints, delta })
    }

    fn check_state(&self, x: &State) -> Result<()> {
        if !x.dim().is_multiple_of(3) {
            return Err(invalid("bead coordinates must have length 3·N"));
        }
        let n = x.dim() / 3;
        if let Some(c) = self.constraints.iter().find(|c| c.i >= n || c.j >= n) {
            return Err(invalid(format!(
                "restraint ({}, {}) references a bead outside 0..{n}",
                c.i, c.j
            )));
        }
        Ok(())
    }

    /// Absolute deviations `|d_ij − target|` per restraint.
    pub fn deviations(&self, x: &State) -> Result<Vec<f64>> {
        self.check_state(x)?;
        Ok(self
            .constraints
            .iter()
            .map(|c| (bead_distance(&x.coords, c.i, c.j) - c.target).abs())
            .collect())
    }

    /// Restraints with deviation strictly below the tolerance.
    pub fn satisfied_count(&self, x: &State) -> Result<usize> {
        Ok(self.deviations(x)?.iter().filter(|d| **d < self.delta).count())
    }

    pub fn value_and_grad(&self, x: &State) -> Result<(f64, Vec<f64>)> {
        self.check_state(x)?;
        let mut value = 0.0;
        let mut grad = vec![0.0; x.dim()];
        for c in &self.constraints {
            let diff: Vec<f64> = (0..3)
                .map(|a| x.coords[3 * c.i + a] - x.coords[3 * c.j + a])
                .collect();
            let d = linalg::norm(&diff);
            let dev = d - c.target;
            let clipped = dev.abs().min(self.delta);
            value -= clipped * clipped;
            // plateau beyond δ and coincident beads contribute no gradient
            if dev.abs() >= self.delta || d == 0.0 {
                continue;
            }
            let dr_dd = -2.0 * dev;
            for a in 0..3 {
                let g = dr_dd * diff[a] / d;
                grad[3 * c.i + a] += g;
                grad[3 * c.j + a] -= g;
            }
        }
        Ok((value, grad))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.constraints {
            w.serialize(ConstraintRow {
                i: c.i,
                j: c.j,
                target: c.target,
                delta: self.delta,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads restraint rows; every row must carry the same `delta`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut constraints = Vec::new();
        let mut delta: Option<f64> = None;
        for row in r.deserialize() {
            let row: ConstraintRow = row?;
            match delta {
                None => delta = Some(row.delta),
                Some(d) if d != row.delta => {
                    return Err(invalid("restraint rows disagree on delta"));
                }
                _ => {}
            }
            constraints.push(DistanceConstraint {
                i: row.i,
                j: row.j,
                target: row.target,
            });
        }
        let delta = delta.ok_or_else(|| invalid("restraint file has no rows"))?;
        Self::new(constraints, delta)
    }
}

fn bead_distance(coords: &[f64], i: usize, j: usize) -> f64 {
    (0..3)
        .map(|a| (coords[3 * i + a] - coords[3 * j + a]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Regular voxel grid; voxel `(ix, iy, iz)` is centred at
/// `origin + spacing·(ix, iy, iz)`. Flattened with `x` slowest, `z` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub shape: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: f64,
}

impl VoxelGrid {
    pub fn new(shape: [usize; 3], origin: [f64; 3], spacing: f64) -> Result<Self> {
        if shape.contains(&0) {
            return Err(invalid("grid dimensions must be positive"));
        }
        if !(spacing > 0.0) {
            return Err(invalid("voxel spacing must be positive"));
        }
        Ok(Self {
            shape,
            origin,
            spacing,
        })
    }

    /// Grid of the given shape centred on `center`.
    pub fn centered(shape: [usize; 3], center: [f64; 3], spacing: f64) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| center[a] - spacing * (shape[a] as f64 - 1.0) / 2.0);
        Self::new(shape, origin, spacing)
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.shape[1] + iy) * self.shape[2] + iz
    }

    pub fn center_of(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            self.origin[0] + self.spacing * ix as f64,
            self.origin[1] + self.spacing * iy as f64,
            self.origin[2] + self.spacing * iz as f64,
        ]
    }
}

/// `Σ_beads exp(−‖r_v − x_b‖² / 2w²)` on every voxel centre, unnormalized.
pub fn render_raw_map(x: &State, grid: &VoxelGrid, atom_width: f64) -> Result<Vec<f64>> {
    if !x.dim().is_multiple_of(3) {
        return Err(invalid("bead coordinates must have length 3·N"));
    }
    if !(atom_width > 0.0) {
        return Err(invalid("atom width must be positive"));
    }
    let inv = 1.0 / (2.0 * atom_width * atom_width);
    // the Gaussian factorizes per axis
    let axis_terms = |bead: &[f64]| -> [Vec<f64>; 3] {
        [0, 1, 2].map(|a| {
            (0..grid.shape[a])
                .map(|i| {
                    let r = grid.origin[a] + grid.spacing * i as f64 - bead[a];
                    (-r * r * inv).exp()
                })
                .collect()
        })
    };
    let mut map = vec![0.0; grid.len()];
    for bead in x.coords.chunks_exact(3) {
        let [ex, ey, ez] = axis_terms(bead);
        for ix in 0..grid.shape[0] {
            for iy in 0..grid.shape[1] {
                let exy = ex[ix] * ey[iy];
                let base = grid.index(ix, iy, 0);
                for iz in 0..grid.shape[2] {
                    map[base + iz] += exy * ez[iz];
                }
            }
        }
    }
    Ok(map)
}

/// Mean and population standard deviation of a map.
fn map_moments(map: &[f64]) -> (f64, f64) {
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero-mean, unit-variance copy of `map`.
pub fn normalize_map(map: &[f64]) -> Result<Vec<f64>> {
    if map.is_empty() {
        return Err(Error::DegenerateMap("empty map".into()));
    }
    let (mean, std) = map_moments(map);
    if !(std > 1e-300) || !std.is_finite() {
        return Err(Error::DegenerateMap("map has zero variance".into()));
    }
    Ok(map.iter().map(|v| (v - mean) / std).collect())
}

/// Rendered map normalized to zero mean and unit variance.
pub fn render_map(x: &State, grid: &VoxelGrid, atom_width: f64) -> Result<Vec<f64>> {
    normalize_map(&render_raw_map(x, grid, atom_width)?)
}

/// Pearson correlation over voxels.
pub fn map_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len(), "map")?;
    let na = normalize_map(a)?;
    let nb = normalize_map(b)?;
    Ok((dot(&na, &nb) / a.len() as f64).clamp(-1.0, 1.0))
}

/// `R(x) = −mean((V(x) − V_obs)²)` with both maps normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMSEReward {
    pub grid: VoxelGrid,
    pub target: Vec<f64>,
    pub atom_width: f64,
}

/// JSON sidecar of a binary target map.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MapHeader {
    shape: [usize; 3],
    origin: [f64; 3],
    spacing: f64,
    atom_width: f64,
    dtype: String,
    byte_order: String,
}

impl MapMSEReward {
    /// Normalizes `target` on construction. A map that is already normalized
    /// is kept bit for bit, so written targets read back unchanged.
    pub fn new(grid: VoxelGrid, target: &[f64], atom_width: f64) -> Result<Self> {
        check_len(grid.len(), target.len(), "target map")?;
        if !(atom_width > 0.0) {
            return Err(invalid("atom width must be positive"));
        }
        let (mean, std) = map_moments(target);
        let target = if mean.abs() < 1e-12 && (std - 1.0).abs() < 1e-12 {
            target.to_vec()
        } else {
            normalize_map(target)?
        };
        Ok(Self {
            target,
            grid,
            atom_width,
        })
    }

    /// Target rendered from reference coordinates.
    pub fn from_structure(grid: VoxelGrid, reference: &State, atom_width: f64) -> Result<Self> {
        let raw = render_raw_map(reference, &grid, atom_width)?;
        Self::new(grid, &raw, atom_width)
    }

    pub fn correlation(&self, x: &State) -> Result<f64> {
        let rendered = render_map(x, &self.grid, self.atom_width)?;
        Ok((dot(&rendered, &self.target) / self.grid.len() as f64).clamp(-1.0, 1.0))
    }

    pub fn value_and_grad(&self, x: &State) -> Result<(f64, Vec<f64>)> {
        let raw = render_raw_map(x, &self.grid, self.atom_width)?;
        let n = raw.len() as f64;
        let (mean, std) = map_moments(&raw);
        if !(std > 1e-300) {
            return Err(Error::DegenerateMap("rendered map has zero variance".into()));
        }
        let norm: Vec<f64> = raw.iter().map(|v| (v - mean) / std).collect();
        let value = -norm
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;

        // dR/dV_norm = −2 (V_norm − V_obs) / n, pulled back through the
        // normalization: dR/draw = (g − mean(g) − V_norm·mean(g·V_norm)) / std
        let g: Vec<f64> = norm
            .iter()
            .zip(&self.target)
            .map(|(a, b)| -2.0 * (a - b) / n)
            .collect();
        let g_mean = g.iter().sum::<f64>() / n;
        let g_proj = dot(&g, &norm) / n;
        let g_raw: Vec<f64> = g
            .iter()
            .zip(&norm)
            .map(|(gi, vi)| (gi - g_mean - vi * g_proj) / std)
            .collect();

        let inv_w2 = 1.0 / (self.atom_width * self.atom_width);
        let mut grad = vec![0.0; x.dim()];
        for (b, bead) in x.coords.chunks_exact(3).enumerate() {
            let ex: [Vec<f64>; 3] = [0, 1, 2].map(|a| {
                (0..self.grid.shape[a])
                    .map(|i| {
                        let r = self.grid.origin[a] + self.grid.spacing * i as f64 - bead[a];
                        (-0.5 * r * r * inv_w2).exp()
                    })
                    .collect()
            });
            let mut acc = [0.0; 3];
            for ix in 0..self.grid.shape[0] {
                let rx = self.grid.origin[0] + self.grid.spacing * ix as f64 - bead[0];
                for iy in 0..self.grid.shape[1] {
                    let ry = self.grid.origin[1] + self.grid.spacing * iy as f64 - bead[1];
                    let exy = ex[0][ix] * ex[1][iy];
                    let base = self.grid.index(ix, iy, 0);
                    for iz in 0..self.grid.shape[2] {
                        let w = g_raw[base + iz] * exy * ex[2][iz];
                        if w == 0.0 {
                            continue;
                        }
                        let rz = self.grid.origin[2] + self.grid.spacing * iz as f64 - bead[2];
                        // ∂/∂x_b exp(−‖r − x_b‖²/2w²) = exp(·)·(r − x_b)/w²
                        acc[0] += w * rx;
                        acc[1] += w * ry;
                        acc[2] += w * rz;
                    }
                }
            }
            for a in 0..3 {
                grad[3 * b + a] = acc[a] * inv_w2;
            }
        }
        Ok((value, grad))
    }

    /// Writes `<stem>.bin` (little-endian f64, x slowest) and `<stem>.json`.
    pub fn write_target(&self, stem: &Path) -> Result<()> {
        let header = MapHeader {
            shape: self.grid.shape,
            origin: self.grid.origin,
            spacing: self.grid.spacing,
            atom_width: self.atom_width,
            dtype: "float64".into(),
            byte_order: "little".into(),
        };
        fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
        let mut f = fs::File::create(stem.with_extension("bin"))?;
        for v in &self.target {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_target(stem: &Path) -> Result<Self> {
        let header: MapHeader = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        if header.dtype != "float64" || header.byte_order != "little" {
            return Err(invalid("target maps must be little-endian float64"));
        }
        let bytes = fs::read(stem.with_extension("bin"))?;
        if bytes.len() % 8 != 0 {
            return Err(invalid("target map byte length is not a multiple of 8"));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let grid = VoxelGrid::new(header.shape, header.origin, header.spacing)?;
        Self::new(grid, &values, header.atom_width)
    }
}

/// Any supported reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    Gaussian(GaussianMeasurementReward),
    Distance(DistanceConstraintReward),
    Map(MapMSEReward),
}

impl RewardSpec {
    pub fn value_and_grad(&self, x: &State) -> Result<(f64, Vec<f64>)> {
        if !x.is_finite() {
            return Err(invalid("reward evaluated at a non-finite state"));
        }
        match self {
            RewardSpec::Gaussian(r) => r.value_and_grad(x),
            RewardSpec::Distance(r) => r.value_and_grad(x),
            RewardSpec::Map(r) => r.value_and_grad(x),
        }
    }

    pub fn value(&self, x: &State) -> Result<f64> {
        Ok(self.value_and_grad(x)?.0)
    }
}

impl From<GaussianMeasurementReward> for RewardSpec {
    fn from(r: GaussianMeasurementReward) -> Self {
        Self::Gaussian(r)
    }
}

impl From<DistanceConstraintReward> for RewardSpec {
    fn from(r: DistanceConstraintReward) -> Self {
        Self::Distance(r)
    }
}

impl From<MapMSEReward> for RewardSpec {
    fn from(r: MapMSEReward) -> Self {
        Self::Map(r)
    }
}

/// The `K` bead pairs `(i < j)` whose distances differ most between two
/// structures, with targets taken from `x_target`. Ties break by `(i, j)`.
pub fn select_top_k_constraints(x_prior: &State, x_target: &State, k: usize) -> Result<Vec<DistanceConstraint>> {
    check_len(x_prior.dim(), x_target.dim(), "target state")?;
    if !x_prior.dim().is_multiple_of(3) {
        return Err(invalid("bead coordinates must have length 3·N"));
    }
    let n = x_prior.dim() / 3;
    let total = n * n.saturating_sub(1) / 2;
    if k == 0 || k > total {
        return Err(invalid(format!("cannot select {k} pairs out of {total}")));
    }
    let mut scored: Vec<(f64, usize, usize, f64)> = Vec::with_capacity(total);
    for i in 0..n {
        for j in i + 1..n {
            let dt = bead_distance(&x_target.coords, i, j);
            let dp = bead_distance(&x_prior.coords, i, j);
            scored.push(((dp - dt).abs(), i, j, dt));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(_, i, j, target)| DistanceConstraint { i, j, target })
        .collect())
}
