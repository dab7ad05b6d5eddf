//! Conditional generators `G(z, c)` and the classes `F_c` they define.
//!
//! Conditioning is modelled as a per-condition weight dictionary. Two families
//! are provided: bias-free ReLU networks and linear classes `z ↦ B_c z`, the
//! latter being the exactly analyzable single-piece case.

mod cones;
mod family;
mod linear;
mod relu;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::signals::Signal;

pub use cones::{cone_count_log_bound, enumerate_cones, ConeDecomposition, ConeOptions, ConePiece};
pub use family::{FamilyKind, FamilySpec, HeldoutSpec};
pub use linear::LinearGenerator;
pub use relu::ReluGenerator;

/// Opaque condition label (a prompt).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionId(String);

impl ConditionId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(invalid("condition id must be nonempty"));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ConditionId {
    fn from(s: &str) -> Self {
        assert!(!s.is_empty(), "condition id must be nonempty");
        Self(s.to_owned())
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The latent ball `B_2^k(R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentBall {
    pub dim: usize,
    pub radius: f64,
}

impl LatentBall {
    pub fn new(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 || !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid("latent ball needs dim > 0 and radius > 0"));
        }
        Ok(Self { dim, radius })
    }

    /// Default radius `3√k`.
    pub fn default_radius(dim: usize) -> f64 {
        3.0 * (dim as f64).sqrt()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        norm(z) <= self.radius * (1.0 + 1e-12)
    }

    /// Euclidean projection onto the ball.
    pub fn project(&self, z: &mut [f64]) {
        let nz = norm(z);
        if nz > self.radius {
            let s = self.radius / nz;
            z.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub(crate) fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(invalid(format!(
                "latent has length {}, expected {}",
                z.len(),
                self.dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("latent contains non-finite entries"));
        }
        if !self.contains(z) {
            return Err(Error::OutOfBall {
                norm: norm(z),
                radius: self.radius,
            });
        }
        Ok(())
    }
}

pub(crate) fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Distribution of latent draws used by Monte Carlo estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LatentLaw {
    /// Standard normal, rejection-resampled into the generator's ball.
    #[default]
    ClippedNormal,
    /// Uniform on the generator's ball.
    UniformBall,
}

impl LatentLaw {
    pub fn sample<R: Rng + ?Sized>(&self, ball: &LatentBall, rng: &mut R) -> Vec<f64> {
        match self {
            LatentLaw::ClippedNormal => {
                for _ in 0..1000 {
                    let z = rng::gaussian_vec(rng, ball.dim);
                    if norm(&z) <= ball.radius {
                        return z;
                    }
                }
                let mut z = rng::gaussian_vec(rng, ball.dim);
                ball.project(&mut z);
                z
            }
            LatentLaw::UniformBall => {
                let mut z = rng::gaussian_vec(rng, ball.dim);
                let nz = norm(&z).max(f64::MIN_POSITIVE);
                let u: f64 = rng.random::<f64>();
                let r = ball.radius * u.powf(1.0 / ball.dim as f64);
                z.iter_mut().for_each(|v| *v *= r / nz);
                z
            }
        }
    }
}

/// Common interface of conditional generators with real outputs of length `C·n`.
pub trait ConditionalGenerator: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn channels(&self) -> usize;
    fn per_channel_len(&self) -> usize;
    fn radius(&self) -> f64;
    fn conditions(&self) -> Vec<ConditionId>;
    fn has_condition(&self, c: &ConditionId) -> bool;

    /// Real output `G(z, c)`; checks the latent ball.
    fn forward(&self, z: &[f64], c: &ConditionId) -> Result<Vec<f64>>;

    /// `J(z)ᵀ v`, the reverse-mode derivative of `G(·, c)` at `z` applied to `v`.
    fn vjp(&self, z: &[f64], c: &ConditionId, v: &[f64]) -> Result<Vec<f64>>;

    /// Full Jacobian `∂G/∂z` of shape `(C·n) × k`.
    fn jacobian(&self, z: &[f64], c: &ConditionId) -> Result<DMatrix<f64>>;

    /// Certified upper bound on the Lipschitz constant of `G(·, c)`.
    fn lipschitz_bound(&self, c: &ConditionId) -> Result<f64>;

    /// The basis `B_c` when `G(·, c)` is linear.
    fn linear_basis(&self, _c: &ConditionId) -> Option<&DMatrix<f64>> {
        None
    }

    fn ambient_dim(&self) -> usize {
        self.channels() * self.per_channel_len()
    }

    fn latent_ball(&self) -> LatentBall {
        LatentBall {
            dim: self.latent_dim(),
            radius: self.radius(),
        }
    }

    fn generate(&self, z: &[f64], c: &ConditionId) -> Result<Signal> {
        Signal::from_real(&self.forward(z, c)?, self.channels(), self.per_channel_len())
    }
}

/// A serializable generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneratorFile", into = "GeneratorFile")]
pub enum Generator {
    Relu(ReluGenerator),
    Linear(LinearGenerator),
}

impl Generator {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn inner(&self) -> &dyn ConditionalGenerator {
        match self {
            Generator::Relu(g) => g,
            Generator::Linear(g) => g,
        }
    }

    pub fn check_condition(&self, c: &ConditionId) -> Result<()> {
        if self.has_condition(c) {
            Ok(())
        } else {
            Err(Error::UnknownCondition(c.to_string()))
        }
    }
}

impl ConditionalGenerator for Generator {
    fn latent_dim(&self) -> usize {
        self.inner().latent_dim()
    }
    fn channels(&self) -> usize {
        self.inner().channels()
    }
    fn per_channel_len(&self) -> usize {
        self.inner().per_channel_len()
    }
    fn radius(&self) -> f64 {
        self.inner().radius()
    }
    fn conditions(&self) -> Vec<ConditionId> {
        self.inner().conditions()
    }
    fn has_condition(&self, c: &ConditionId) -> bool {
        self.inner().has_condition(c)
    }
    fn forward(&self, z: &[f64], c: &ConditionId) -> Result<Vec<f64>> {
        self.inner().forward(z, c)
    }
    fn vjp(&self, z: &[f64], c: &ConditionId, v: &[f64]) -> Result<Vec<f64>> {
        self.inner().vjp(z, c, v)
    }
    fn jacobian(&self, z: &[f64], c: &ConditionId) -> Result<DMatrix<f64>> {
        self.inner().jacobian(z, c)
    }
    fn lipschitz_bound(&self, c: &ConditionId) -> Result<f64> {
        self.inner().lipschitz_bound(c)
    }
    fn linear_basis(&self, c: &ConditionId) -> Option<&DMatrix<f64>> {
        match self {
            Generator::Linear(g) => g.linear_basis(c),
            Generator::Relu(_) => None,
        }
    }
}

impl From<ReluGenerator> for Generator {
    fn from(g: ReluGenerator) -> Self {
        Generator::Relu(g)
    }
}

impl From<LinearGenerator> for Generator {
    fn from(g: LinearGenerator) -> Self {
        Generator::Linear(g)
    }
}

/// On-disk form: `{ "kind", "widths", "channels", "conditions": { id: { "W1": [[…]], … } }, "radius" }`.
/// Linear classes store a single matrix under `"B"` with `widths = [k, C·n]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GeneratorFile {
    kind: String,
    widths: Vec<usize>,
    #[serde(default = "one")]
    channels: usize,
    conditions: BTreeMap<String, BTreeMap<String, Vec<Vec<f64>>>>,
    radius: f64,
}

fn one() -> usize {
    1
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!("{what}: ragged or empty matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

impl TryFrom<GeneratorFile> for Generator {
    type Error = Error;

    fn try_from(f: GeneratorFile) -> Result<Self> {
        match f.kind.as_str() {
            "relu" => {
                let depth = f.widths.len().saturating_sub(1);
                let mut weights = BTreeMap::new();
                for (id, mats) in f.conditions {
                    let mut layers = Vec::with_capacity(depth);
                    for l in 1..=depth {
                        let key = format!("W{l}");
                        let rows = mats.get(&key).ok_or_else(|| {
                            invalid(format!("conditions.{id}: missing {key}"))
                        })?;
                        layers.push(matrix_from_rows(rows, &format!("conditions.{id}.{key}"))?);
                    }
                    if mats.len() != depth {
                        return Err(invalid(format!(
                            "conditions.{id}: expected exactly {depth} weight matrices"
                        )));
                    }
                    weights.insert(ConditionId::new(id)?, layers);
                }
                Ok(Generator::Relu(ReluGenerator::new(
                    f.widths, f.channels, f.radius, weights,
                )?))
            }
            "linear" => {
                if f.widths.len() != 2 {
                    return Err(invalid("linear generator needs widths = [k, C*n]"));
                }
                let ambient = f.widths[1];
                if f.channels == 0 || !ambient.is_multiple_of(f.channels) {
                    return Err(invalid("widths[1] must be a multiple of channels"));
                }
                let mut bases = BTreeMap::new();
                for (id, mats) in f.conditions {
                    let rows = mats
                        .get("B")
                        .ok_or_else(|| invalid(format!("conditions.{id}: missing B")))?;
                    let b = matrix_from_rows(rows, &format!("conditions.{id}.B"))?;
                    if b.ncols() != f.widths[0] {
                        return Err(invalid(format!(
                            "conditions.{id}.B has {} columns, widths[0] is {}",
                            b.ncols(),
                            f.widths[0]
                        )));
                    }
                    bases.insert(ConditionId::new(id)?, b);
                }
                Ok(Generator::Linear(LinearGenerator::new(
                    f.channels,
                    ambient / f.channels,
                    f.radius,
                    bases,
                )?))
            }
            other => Err(invalid(format!("unknown generator kind `{other}`"))),
        }
    }
}

impl From<Generator> for GeneratorFile {
    fn from(g: Generator) -> Self {
        match g {
            Generator::Relu(r) => GeneratorFile {
                kind: "relu".into(),
                widths: r.widths().to_vec(),
                channels: r.channels(),
                radius: r.radius(),
                conditions: r
                    .weight_sets()
                    .map(|(id, layers)| {
                        let mats = layers
                            .iter()
                            .enumerate()
                            .map(|(l, w)| (format!("W{}", l + 1), matrix_to_rows(w)))
                            .collect();
                        (id.to_string(), mats)
                    })
                    .collect(),
            },
            Generator::Linear(l) => GeneratorFile {
                kind: "linear".into(),
                widths: vec![l.latent_dim(), l.ambient_dim()],
                channels: l.channels(),
                radius: l.radius(),
                conditions: l
                    .bases()
                    .map(|(id, b)| {
                        let mut mats = BTreeMap::new();
                        mats.insert("B".to_string(), matrix_to_rows(b));
                        (id.to_string(), mats)
                    })
                    .collect(),
            },
        }
    }
}
