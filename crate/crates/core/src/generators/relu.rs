use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{ConditionId, ConditionalGenerator, LatentBall};
use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Bias-free depth-`d` ReLU network `W_d σ(W_{d−1} σ(⋯ σ(W_1 z)))` per condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluGenerator {
    widths: Vec<usize>,
    channels: usize,
    radius: f64,
    weights: BTreeMap<ConditionId, Vec<DMatrix<f64>>>,
}

/// Forward pass with the pre-activations of every hidden layer retained.
pub(crate) struct Trace {
    pub pre: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

impl ReluGenerator {
    /// `widths = [k, k_1, …, k_{d−1}, C·n]`; each condition carries `d` matrices.
    pub fn new(
        widths: Vec<usize>,
        channels: usize,
        radius: f64,
        weights: BTreeMap<ConditionId, Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        if widths.len() < 3 {
            return Err(invalid("ReLU generator needs depth d >= 2 (at least 3 widths)"));
        }
        if widths.contains(&0) {
            return Err(invalid("widths must be positive"));
        }
        let k = widths[0];
        let d = widths.len() - 1;
        if let Some(&w) = widths[1..d].iter().find(|&&w| w < k) {
            return Err(invalid(format!(
                "hidden width {w} is smaller than latent dimension {k}"
            )));
        }
        if channels == 0 || !widths[d].is_multiple_of(channels) {
            return Err(invalid("output width must be a positive multiple of channels"));
        }
        LatentBall::new(k, radius)?;
        if weights.is_empty() {
            return Err(invalid("at least one condition is required"));
        }
        for (id, layers) in &weights {
            if layers.len() != d {
                return Err(invalid(format!(
                    "condition {id}: {} weight matrices, expected {d}",
                    layers.len()
                )));
            }
            for (l, w) in layers.iter().enumerate() {
                if w.nrows() != widths[l + 1] || w.ncols() != widths[l] {
                    return Err(invalid(format!(
                        "condition {id}: W{} is {}x{}, expected {}x{}",
                        l + 1,
                        w.nrows(),
                        w.ncols(),
                        widths[l + 1],
                        widths[l]
                    )));
                }
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(format!("condition {id}: W{} not finite", l + 1)));
                }
            }
        }
        Ok(Self {
            widths,
            channels,
            radius,
            weights,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.depth()]
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    /// Geometric mean of the hidden widths, `(Π k_ℓ)^{1/(d−1)}`.
    pub fn mean_width(&self) -> f64 {
        let h = self.hidden_widths();
        let log_sum: f64 = h.iter().map(|&w| (w as f64).ln()).sum();
        (log_sum / h.len() as f64).exp()
    }

    pub fn weights(&self, c: &ConditionId) -> Result<&[DMatrix<f64>]> {
        self.weights
            .get(c)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownCondition(c.to_string()))
    }

    pub fn weight_sets(&self) -> impl Iterator<Item = (&ConditionId, &Vec<DMatrix<f64>>)> {
        self.weights.iter()
    }

    pub(crate) fn trace(&self, z: &[f64], c: &ConditionId) -> Result<Trace> {
        let layers = self.weights(c)?;
        self.latent_ball().check(z)?;
        let mut h = DVector::from_column_slice(z);
        let mut pre = Vec::with_capacity(layers.len() - 1);
        for (l, w) in layers.iter().enumerate() {
            let a = w * &h;
            if l + 1 < layers.len() {
                h = a.map(|v| v.max(0.0));
                pre.push(a);
            } else {
                h = a;
            }
        }
        Ok(Trace { pre, output: h })
    }
}

impl ConditionalGenerator for ReluGenerator {
    fn latent_dim(&self) -> usize {
        self.widths[0]
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn per_channel_len(&self) -> usize {
        self.widths[self.depth()] / self.channels
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn conditions(&self) -> Vec<ConditionId> {
        self.weights.keys().cloned().collect()
    }

    fn has_condition(&self, c: &ConditionId) -> bool {
        self.weights.contains_key(c)
    }

    fn forward(&self, z: &[f64], c: &ConditionId) -> Result<Vec<f64>> {
        Ok(self.trace(z, c)?.output.iter().cloned().collect())
    }

    fn vjp(&self, z: &[f64], c: &ConditionId, v: &[f64]) -> Result<Vec<f64>> {
        let layers = self.weights(c)?;
        let t = self.trace(z, c)?;
        if v.len() != self.ambient_dim() {
            return Err(invalid("cotangent length mismatch"));
        }
        let mut g = DVector::from_column_slice(v);
        for l in (0..layers.len()).rev() {
            g = layers[l].tr_mul(&g);
            if l > 0 {
                // σ'(0) = 0
                for (gi, &p) in g.iter_mut().zip(t.pre[l - 1].iter()) {
                    if p <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
        }
        Ok(g.iter().cloned().collect())
    }

    fn jacobian(&self, z: &[f64], c: &ConditionId) -> Result<DMatrix<f64>> {
        let layers = self.weights(c)?;
        let t = self.trace(z, c)?;
        let mut j = layers[0].clone();
        for l in 1..layers.len() {
            let mut masked = j;
            for (r, &p) in t.pre[l - 1].iter().enumerate() {
                if p <= 0.0 {
                    masked.row_mut(r).fill(0.0);
                }
            }
            j = &layers[l] * masked;
        }
        Ok(j)
    }

    fn lipschitz_bound(&self, c: &ConditionId) -> Result<f64> {
        Ok(self
            .weights(c)?
            .iter()
            .map(linalg::spectral_norm)
            .product())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn net(layers: Vec<DMatrix<f64>>, widths: Vec<usize>) -> ReluGenerator {
        let mut w = BTreeMap::new();
        w.insert(ConditionId::from("c"), layers);
        ReluGenerator::new(widths, 1, 10.0, w).unwrap()
    }

    fn random_net(seed: u64, widths: &[usize]) -> ReluGenerator {
        let mut r = rng::stream(seed);
        let layers = widths
            .windows(2)
            .map(|p| DMatrix::from_vec(p[1], p[0], rng::gaussian_vec(&mut r, p[0] * p[1])))
            .collect();
        net(layers, widths.to_vec())
    }

    #[test]
    fn origin_maps_to_zero() {
        let g = random_net(1, &[2, 3, 4]);
        let out = g.forward(&[0.0, 0.0], &"c".into()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonnegative_chain_is_linear_on_positive_orthant() {
        let w1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let w2 = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 3.0, 2.0, 0.0]);
        let g = net(vec![w1.clone(), w2.clone()], vec![2, 2, 3]);
        let z = [0.4, 1.3];
        let expect = &w2 * &w1 * DVector::from_column_slice(&z);
        let out = g.forward(&z, &"c".into()).unwrap();
        for (a, b) in out.iter().zip(expect.iter()) {
            assert_eq!(*a, *b);
        }
    }

    #[test]
    fn widths_must_chain() {
        let w1 = DMatrix::zeros(3, 2);
        let w2 = DMatrix::zeros(4, 2);
        let mut w = BTreeMap::new();
        w.insert(ConditionId::from("c"), vec![w1, w2]);
        assert!(ReluGenerator::new(vec![2, 3, 4], 1, 1.0, w).is_err());
        assert!(ReluGenerator::new(vec![2, 4], 1, 1.0, BTreeMap::new()).is_err());
    }

    #[test]
    fn hidden_width_below_latent_rejected() {
        let mut w = BTreeMap::new();
        w.insert(
            ConditionId::from("c"),
            vec![DMatrix::zeros(1, 2), DMatrix::zeros(3, 1)],
        );
        assert!(ReluGenerator::new(vec![2, 1, 3], 1, 1.0, w).is_err());
    }

    #[test]
    fn jacobian_matches_vjp() {
        let g = random_net(4, &[2, 3, 3, 5]);
        let c = ConditionId::from("c");
        let z = [0.3, -0.7];
        let j = g.jacobian(&z, &c).unwrap();
        let v = [1.0, -2.0, 0.5, 0.0, 3.0];
        let got = g.vjp(&z, &c, &v).unwrap();
        let expect = j.transpose() * DVector::from_column_slice(&v);
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let g = net(
            vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 2)],
            vec![2, 2, 3],
        );
        let grad = g.vjp(&[0.5, 0.5], &"c".into(), &[1.0, 1.0, 1.0]).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lipschitz_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        let g = net(vec![id.clone(), id.clone(), id], vec![2, 2, 2, 2]);
        assert!((g.lipschitz_bound(&"c".into()).unwrap() - 1.0).abs() < 1e-14);
        let g = net(
            vec![
                DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
                DMatrix::<f64>::identity(2, 2),
            ],
            vec![2, 2, 2],
        );
        assert!((g.lipschitz_bound(&"c".into()).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mean_width_is_geometric() {
        let g = random_net(2, &[2, 2, 8, 3]);
        assert!((g.mean_width() - 4.0).abs() < 1e-12);
        assert_eq!(g.hidden_units(), 10);
    }
}
