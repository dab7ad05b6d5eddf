//! Activation-pattern decomposition of bias-free ReLU generators.
//!
//! Each realizable pattern fixes a polyhedral cone `Q_j` in latent space on
//! which the generator is the linear map `A_j`. Patterns are enumerated by a
//! depth-first search over hidden units, pruned by a feasibility search on the
//! accumulated sign constraints.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{norm, ConditionId, ConditionalGenerator, Generator, LinearGenerator, ReluGenerator};
use crate::error::{invalid, Error, Result};
use crate::rng;

/// Search budgets for [`enumerate_cones`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeOptions {
    pub unit_cap: usize,
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ConeOptions {
    fn default() -> Self {
        Self {
            unit_cap: 20,
            restarts: 200,
            iterations: 500,
            seed: 0,
        }
    }
}

/// One linear piece: the generator equals `map · z` for `z` in the cone
/// `{ z : g·z > 0 for every row g of constraints }`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConePiece {
    /// Activation per hidden unit, layer by layer.
    pub pattern: Vec<Vec<bool>>,
    pub map: DMatrix<f64>,
    /// Signed pre-activation rows; active units keep their sign, inactive
    /// units are negated. Empty for an unconstrained piece.
    pub constraints: DMatrix<f64>,
    /// Unit-norm interior point of the cone.
    pub witness: Vec<f64>,
}

impl ConePiece {
    pub fn is_unconstrained(&self) -> bool {
        self.constraints.nrows() == 0
    }

    /// Whether `z` lies strictly inside the cone.
    pub fn contains(&self, z: &[f64]) -> bool {
        let z = DVector::from_column_slice(z);
        (&self.constraints * z).iter().all(|&v| v > 0.0)
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        (&self.map * DVector::from_column_slice(z)).iter().cloned().collect()
    }

    /// Random point of the cone intersected with the ball of the given radius.
    pub fn sample<R: Rng + ?Sized>(&self, radius: f64, rng: &mut R) -> Vec<f64> {
        let k = self.witness.len();
        let r = radius * rng.random::<f64>().powf(1.0 / k as f64);
        let mut spread = 2.0;
        for _ in 0..64 {
            let g = rng::gaussian_vec(rng, k);
            let z: Vec<f64> = self
                .witness
                .iter()
                .zip(&g)
                .map(|(w, gi)| w + spread * gi)
                .collect();
            let nz = norm(&z);
            if nz > 0.0 && self.contains(&z) {
                return z.iter().map(|v| v * r / nz).collect();
            }
            spread *= 0.8;
        }
        self.witness.iter().map(|v| v * r).collect()
    }
}

/// Finite cone decomposition `B_2^k(R) ⊆ ⋃ Q_j` with `G = A_j` on `Q_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeDecomposition {
    pub pieces: Vec<ConePiece>,
    /// Patterns whose feasibility search failed within budget.
    pub excluded: usize,
    pub latent_dim: usize,
    pub channels: usize,
    pub per_channel_len: usize,
    pub radius: f64,
}

impl ConeDecomposition {
    /// A linear class as a single unconstrained piece.
    pub fn from_linear(
        basis: &DMatrix<f64>,
        channels: usize,
        per_channel_len: usize,
        radius: f64,
    ) -> Result<Self> {
        let k = basis.ncols();
        if k == 0 || basis.nrows() != channels * per_channel_len {
            return Err(invalid("basis shape does not match the ambient dimension"));
        }
        let mut witness = vec![0.0; k];
        witness[0] = 1.0;
        Ok(Self {
            pieces: vec![ConePiece {
                pattern: Vec::new(),
                map: basis.clone(),
                constraints: DMatrix::zeros(0, k),
                witness,
            }],
            excluded: 0,
            latent_dim: k,
            channels,
            per_channel_len,
            radius,
        })
    }

    pub fn count(&self) -> usize {
        self.pieces.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.channels * self.per_channel_len
    }

    pub fn is_unconstrained(&self) -> bool {
        self.pieces.iter().all(ConePiece::is_unconstrained)
    }

    /// Index of a piece whose cone contains `z`, if any.
    pub fn locate(&self, z: &[f64]) -> Option<usize> {
        self.pieces.iter().position(|p| p.is_unconstrained() || p.contains(z))
    }
}

/// `k(d−1) log(2e k̄/k)`, the bound on `log N` for a depth-`d` network.
pub fn cone_count_log_bound(k: usize, d: usize, mean_width: f64) -> f64 {
    let k = k as f64;
    k * (d as f64 - 1.0) * (2.0 * std::f64::consts::E * mean_width / k).ln()
}

/// Enumerates the realizable activation patterns of `G(·, c)`.
pub fn enumerate_cones(g: &Generator, c: &ConditionId, opts: &ConeOptions) -> Result<ConeDecomposition> {
    match g {
        Generator::Linear(lin) => linear_decomposition(lin, c),
        Generator::Relu(relu) => relu_decomposition(relu, c, opts),
    }
}

fn linear_decomposition(g: &LinearGenerator, c: &ConditionId) -> Result<ConeDecomposition> {
    ConeDecomposition::from_linear(g.basis(c)?, g.channels(), g.per_channel_len(), g.radius())
}

fn relu_decomposition(g: &ReluGenerator, c: &ConditionId, opts: &ConeOptions) -> Result<ConeDecomposition> {
    let layers = g.weights(c)?;
    let units = g.hidden_units();
    if units > opts.unit_cap {
        return Err(Error::Capacity {
            units,
            cap: opts.unit_cap,
        });
    }
    let k = g.latent_dim();
    let mut search = Search {
        layers,
        k,
        opts,
        rng: rng::derived_stream(opts.seed, rng::purpose::CONE, rng::label_seed(0, c.as_str())),
        pieces: Vec::new(),
        excluded: 0,
    };
    let mut w0 = vec![0.0; k];
    w0[0] = 1.0;
    let first = layers[0].clone();
    search.descend(0, 0, first, Vec::new(), Vec::new(), Vec::new(), w0);
    if search.excluded > 0 {
        log::info!(
            "cone enumeration for `{c}`: {} pattern(s) excluded as possibly infeasible",
            search.excluded
        );
    }
    Ok(ConeDecomposition {
        pieces: search.pieces,
        excluded: search.excluded,
        latent_dim: k,
        channels: g.channels(),
        per_channel_len: g.per_channel_len(),
        radius: g.radius(),
    })
}

struct Search<'a> {
    layers: &'a [DMatrix<f64>],
    k: usize,
    opts: &'a ConeOptions,
    rng: rand_chacha::ChaCha8Rng,
    pieces: Vec<ConePiece>,
    excluded: usize,
}

impl Search<'_> {
    /// `pre` holds the pre-activation map `z ↦ W_ℓ D ⋯ z` of the current layer.
    #[allow(clippy::too_many_arguments)]
    fn descend(
        &mut self,
        layer: usize,
        unit: usize,
        pre: DMatrix<f64>,
        mut done: Vec<Vec<bool>>,
        current: Vec<bool>,
        rows: Vec<Vec<f64>>,
        witness: Vec<f64>,
    ) {
        let hidden = self.layers.len() - 1;
        if unit == pre.nrows() {
            let mut post = pre;
            for (r, &on) in current.iter().enumerate() {
                if !on {
                    post.row_mut(r).fill(0.0);
                }
            }
            done.push(current);
            let next = &self.layers[layer + 1] * post;
            if layer + 1 == hidden {
                self.pieces.push(ConePiece {
                    pattern: done,
                    map: next,
                    constraints: rows_to_matrix(&rows, self.k),
                    witness,
                });
            } else {
                self.descend(layer + 1, 0, next, done, Vec::new(), rows, witness);
            }
            return;
        }
        let row: Vec<f64> = pre.row(unit).iter().cloned().collect();
        let scale = pre.norm().max(f64::MIN_POSITIVE);
        if norm(&row) <= 1e-13 * scale {
            // Pre-activation vanishes identically: the unit is always inactive.
            let mut cur = current;
            cur.push(false);
            self.descend(layer, unit + 1, pre, done, cur, rows, witness);
            return;
        }
        for on in [true, false] {
            let g: Vec<f64> = if on { row.clone() } else { row.iter().map(|v| -v).collect() };
            let mut child_rows = rows.clone();
            child_rows.push(g);
            match self.feasible(&child_rows, &witness) {
                Some(w) => {
                    let mut cur = current.clone();
                    cur.push(on);
                    self.descend(layer, unit + 1, pre.clone(), done.clone(), cur, child_rows, w);
                }
                None => self.excluded += 1,
            }
        }
    }

    /// Finds a unit-norm `z` with `g·z > 0` for every row, or gives up.
    fn feasible(&mut self, rows: &[Vec<f64>], start: &[f64]) -> Option<Vec<f64>> {
        if strictly_inside(rows, start) {
            return Some(start.to_vec());
        }
        let unit_rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|g| {
                let ng = norm(g);
                g.iter().map(|v| v / ng).collect()
            })
            .collect();
        for restart in 0..self.opts.restarts {
            let mut z = if restart == 0 {
                start.to_vec()
            } else {
                rng::gaussian_vec(&mut self.rng, self.k)
            };
            for _ in 0..self.opts.iterations {
                // Relaxed projection onto the most violated half-space g·z ≥ 1.
                let (worst, slack) = unit_rows
                    .iter()
                    .enumerate()
                    .map(|(r, g)| (r, dot(g, &z) - 1.0))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("nonempty constraint set");
                if slack >= 0.0 {
                    break;
                }
                let step = -1.5 * slack;
                for (zi, gi) in z.iter_mut().zip(&unit_rows[worst]) {
                    *zi += step * gi;
                }
            }
            if strictly_inside(&unit_rows, &z) {
                let nz = norm(&z);
                let w: Vec<f64> = z.iter().map(|v| v / nz).collect();
                if strictly_inside(rows, &w) {
                    return Some(w);
                }
            }
        }
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn strictly_inside(rows: &[Vec<f64>], z: &[f64]) -> bool {
    let nz = norm(z);
    nz > 0.0
        && rows
            .iter()
            .all(|g| dot(g, z) > 1e-9 * norm(g) * nz)
}

fn rows_to_matrix(rows: &[Vec<f64>], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn relu(widths: &[usize], layers: Vec<DMatrix<f64>>) -> Generator {
        let mut w = BTreeMap::new();
        w.insert(ConditionId::from("c"), layers);
        ReluGenerator::new(widths.to_vec(), 1, 3.0, w).unwrap().into()
    }

    fn random_relu(seed: u64, widths: &[usize]) -> Generator {
        let mut r = rng::stream(seed);
        let layers = widths
            .windows(2)
            .map(|p| DMatrix::from_vec(p[1], p[0], rng::gaussian_vec(&mut r, p[0] * p[1])))
            .collect();
        relu(widths, layers)
    }

    #[test]
    fn single_hidden_unit_splits_once() {
        // k = 1 so a single hidden unit respects k ≤ k_1.
        let w1 = DMatrix::from_row_slice(1, 1, &[2.0]);
        let w2 = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 0.5]);
        let g = relu(&[1, 1, 3], vec![w1.clone(), w2.clone()]);
        let d = enumerate_cones(&g, &"c".into(), &ConeOptions::default()).unwrap();
        assert_eq!(d.count(), 2);
        let maps: Vec<&DMatrix<f64>> = d.pieces.iter().map(|p| &p.map).collect();
        assert!(maps.iter().any(|m| m.iter().all(|&v| v == 0.0)));
        assert!(maps.iter().any(|m| **m == &w2 * &w1));
    }

    #[test]
    fn linear_class_lifts_to_one_piece() {
        let b = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 0.0]);
        let mut m = BTreeMap::new();
        m.insert(ConditionId::from("c"), b.clone());
        let g: Generator = LinearGenerator::new(1, 4, 2.0, m).unwrap().into();
        let d = enumerate_cones(&g, &"c".into(), &ConeOptions::default()).unwrap();
        assert_eq!(d.count(), 1);
        assert_eq!(d.pieces[0].map, b);
        assert!(d.is_unconstrained());
    }

    #[test]
    fn pieces_reproduce_forward_pass() {
        let c = ConditionId::from("c");
        for seed in 0..5 {
            let g = random_relu(seed, &[2, 3, 4]);
            let d = enumerate_cones(&g, &c, &ConeOptions::default()).unwrap();
            assert!(d.count() >= 2 && d.count() <= 8);
            let mut r = rng::stream(100 + seed);
            for piece in &d.pieces {
                for _ in 0..100 {
                    let z = piece.sample(g.radius(), &mut r);
                    assert!(piece.contains(&z));
                    let out = g.forward(&z, &c).unwrap();
                    for (a, b) in out.iter().zip(piece.apply(&z)) {
                        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn cones_cover_random_latents() {
        let c = ConditionId::from("c");
        let g = random_relu(11, &[2, 3, 3, 5]);
        let d = enumerate_cones(&g, &c, &ConeOptions::default()).unwrap();
        let mut r = rng::stream(5);
        for _ in 0..1000 {
            let z = rng::gaussian_vec(&mut r, 2);
            assert!(d.locate(&z).is_some());
        }
    }

    #[test]
    fn count_respects_log_bound() {
        let c = ConditionId::from("c");
        for seed in 0..5 {
            let g = random_relu(seed, &[2, 3, 3, 4]);
            let Generator::Relu(inner) = &g else { unreachable!() };
            let d = enumerate_cones(&g, &c, &ConeOptions::default()).unwrap();
            let bound = cone_count_log_bound(2, inner.depth(), inner.mean_width());
            assert!((d.count() as f64).ln() <= bound);
        }
    }

    #[test]
    fn unit_cap_enforced() {
        let g = random_relu(0, &[2, 12, 12, 3]);
        let err = enumerate_cones(&g, &"c".into(), &ConeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Capacity { units: 24, cap: 20 }));
    }
}
