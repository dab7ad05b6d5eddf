use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{ConditionId, ConditionalGenerator, LatentBall};
use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Linear classes `F_c = { B_c z : ‖z‖ ≤ R }`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGenerator {
    channels: usize,
    per_channel_len: usize,
    radius: f64,
    bases: BTreeMap<ConditionId, DMatrix<f64>>,
}

impl LinearGenerator {
    pub fn new(
        channels: usize,
        per_channel_len: usize,
        radius: f64,
        bases: BTreeMap<ConditionId, DMatrix<f64>>,
    ) -> Result<Self> {
        if channels == 0 || per_channel_len == 0 {
            return Err(invalid("channels and per-channel length must be positive"));
        }
        let ambient = channels * per_channel_len;
        let k = bases
            .values()
            .next()
            .map(|b| b.ncols())
            .ok_or_else(|| invalid("at least one condition is required"))?;
        LatentBall::new(k, radius)?;
        for (id, b) in &bases {
            if b.nrows() != ambient || b.ncols() != k {
                return Err(invalid(format!(
                    "basis for {id} is {}x{}, expected {ambient}x{k}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("basis for {id} is not finite")));
            }
            if linalg::rank(b) != k {
                return Err(invalid(format!(
                    "basis for {id} has linearly dependent columns"
                )));
            }
        }
        Ok(Self {
            channels,
            per_channel_len,
            radius,
            bases,
        })
    }

    pub fn basis(&self, c: &ConditionId) -> Result<&DMatrix<f64>> {
        self.bases
            .get(c)
            .ok_or_else(|| Error::UnknownCondition(c.to_string()))
    }

    pub fn bases(&self) -> impl Iterator<Item = (&ConditionId, &DMatrix<f64>)> {
        self.bases.iter()
    }
}

impl ConditionalGenerator for LinearGenerator {
    fn latent_dim(&self) -> usize {
        self.bases.values().next().map(|b| b.ncols()).unwrap_or(0)
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn per_channel_len(&self) -> usize {
        self.per_channel_len
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn conditions(&self) -> Vec<ConditionId> {
        self.bases.keys().cloned().collect()
    }

    fn has_condition(&self, c: &ConditionId) -> bool {
        self.bases.contains_key(c)
    }

    fn forward(&self, z: &[f64], c: &ConditionId) -> Result<Vec<f64>> {
        let b = self.basis(c)?;
        self.latent_ball().check(z)?;
        Ok((b * DVector::from_column_slice(z)).iter().cloned().collect())
    }

    fn vjp(&self, z: &[f64], c: &ConditionId, v: &[f64]) -> Result<Vec<f64>> {
        let b = self.basis(c)?;
        self.latent_ball().check(z)?;
        if v.len() != b.nrows() {
            return Err(invalid("cotangent length mismatch"));
        }
        Ok(b.tr_mul(&DVector::from_column_slice(v)).iter().cloned().collect())
    }

    fn jacobian(&self, z: &[f64], c: &ConditionId) -> Result<DMatrix<f64>> {
        let b = self.basis(c)?;
        self.latent_ball().check(z)?;
        Ok(b.clone())
    }

    fn lipschitz_bound(&self, c: &ConditionId) -> Result<f64> {
        Ok(linalg::spectral_norm(self.basis(c)?))
    }

    fn linear_basis(&self, c: &ConditionId) -> Option<&DMatrix<f64>> {
        self.bases.get(c)
    }
}
