//! Tightness-separated synthetic prompt families.
//!
//! Every prompt shares a low-pass component and adds a prompt-specific
//! band-pass component scaled by `theta`. At `theta = 0` all prompts coincide;
//! larger values push each class's Fourier energy towards its own band.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ConditionId, Generator, LatentBall, LinearGenerator, ReluGenerator};
use crate::error::{invalid, Result};
use crate::rng;
use crate::signals::{idft, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FamilyKind {
    Linear,
    /// Depth-2 ReLU network with the given hidden width.
    Relu { hidden: usize },
}

/// A held-out prompt placed at a controlled distance from an existing one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutSpec {
    pub name: String,
    pub near: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub n: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub k: usize,
    pub prompts: Vec<String>,
    pub theta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Id of an extra member mixing all prompt bands equally.
    #[serde(default)]
    pub unconditioned: Option<String>,
    #[serde(default)]
    pub heldout: Option<HeldoutSpec>,
    #[serde(default)]
    pub radius: Option<f64>,
}

fn one() -> usize {
    1
}

impl FamilySpec {
    pub fn linear(n: usize, k: usize, prompts: &[&str], theta: f64, seed: u64) -> Self {
        Self {
            kind: FamilyKind::Linear,
            n,
            channels: 1,
            k,
            prompts: prompts.iter().map(|s| s.to_string()).collect(),
            theta,
            seed,
            unconditioned: None,
            heldout: None,
            radius: None,
        }
    }

    /// Half-width of each prompt band.
    pub fn band_halfwidth(&self) -> usize {
        (self.n / 32).max(1)
    }

    /// Largest folded frequency of the shared low-pass band.
    pub fn lowpass_cutoff(&self) -> usize {
        (self.n / 16).max(1)
    }

    /// Folded centre frequency of prompt `p`.
    pub fn center(&self, p: usize) -> usize {
        let w = self.band_halfwidth();
        let lo = self.lowpass_cutoff() + 2 * w;
        let hi = self.n / 2 - w;
        let count = self.prompts.len();
        if count <= 1 {
            return lo;
        }
        let t = p as f64 / (count - 1) as f64;
        (lo as f64 + t * (hi - lo) as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(invalid("prompt family is empty"));
        }
        if self.k == 0 || self.channels == 0 {
            return Err(invalid("k and channels must be positive"));
        }
        if !self.theta.is_finite() || self.theta < 0.0 {
            return Err(invalid("theta must be finite and nonnegative"));
        }
        let w = self.band_halfwidth();
        if self.n < 16 || self.lowpass_cutoff() + 2 * w > self.n / 2 - w {
            return Err(invalid("n too small for a band-separated family (need n >= 16)"));
        }
        let mut names: Vec<&str> = self.prompts.iter().map(String::as_str).collect();
        names.extend(self.unconditioned.as_deref());
        names.extend(self.heldout.as_ref().map(|h| h.name.as_str()));
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(invalid("prompt ids must be distinct"));
        }
        if let Some(h) = &self.heldout {
            if !self.prompts.contains(&h.near) {
                return Err(invalid(format!("held-out prompt refers to unknown `{}`", h.near)));
            }
            if !h.distance.is_finite() || h.distance < 0.0 {
                return Err(invalid("held-out distance must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Generator> {
        self.validate()?;
        let radius = self.radius.unwrap_or_else(|| LatentBall::default_radius(self.k));
        let cols = match self.kind {
            FamilyKind::Linear => self.k,
            FamilyKind::Relu { hidden } => {
                if hidden < self.k {
                    return Err(invalid("hidden width must be at least k"));
                }
                hidden
            }
        };
        let mut r = rng::derived_stream(self.seed, rng::purpose::FAMILY, 0);
        let w = self.band_halfwidth() as i64;
        let cutoff = self.lowpass_cutoff();
        let shared = self.band_matrix(&mut r, cols, |d| d <= cutoff);
        let bands: Vec<DMatrix<f64>> = (0..self.prompts.len())
            .map(|p| {
                let c = self.center(p) as i64;
                self.band_matrix(&mut r, cols, move |d| (d as i64 - c).abs() <= w)
            })
            .collect();
        let mut outputs: BTreeMap<ConditionId, DMatrix<f64>> = BTreeMap::new();
        for (p, name) in self.prompts.iter().enumerate() {
            outputs.insert(ConditionId::new(name.clone())?, &shared + &bands[p] * self.theta);
        }
        if let Some(uc) = &self.unconditioned {
            let mut mix = DMatrix::zeros(shared.nrows(), cols);
            for b in &bands {
                mix += b;
            }
            mix /= (bands.len() as f64).sqrt();
            outputs.insert(ConditionId::new(uc.clone())?, &shared + mix * self.theta);
        }
        if let Some(h) = &self.heldout {
            let p = self.prompts.iter().position(|s| *s == h.near).expect("validated");
            let c = self.center(p) as i64;
            let fresh = self.band_matrix(&mut r, cols, move |d| (d as i64 - c).abs() <= w);
            let band = &bands[p] + fresh * h.distance;
            outputs.insert(ConditionId::new(h.name.clone())?, &shared + band * self.theta);
        }
        match self.kind {
            FamilyKind::Linear => {
                Ok(LinearGenerator::new(self.channels, self.n, radius, outputs)?.into())
            }
            FamilyKind::Relu { hidden } => {
                let base = DMatrix::from_vec(
                    hidden,
                    self.k,
                    rng::gaussian_vec(&mut r, hidden * self.k),
                ) / (self.k as f64).sqrt();
                let mut weights = BTreeMap::new();
                for (id, w2) in outputs {
                    let mut pr = rng::derived_stream(self.seed, rng::purpose::FAMILY, rng::label_seed(1, id.as_str()));
                    let pert = DMatrix::from_vec(hidden, self.k, rng::gaussian_vec(&mut pr, hidden * self.k))
                        / (self.k as f64).sqrt();
                    let w1 = &base + pert * (0.25 * self.theta);
                    weights.insert(id, vec![w1, w2]);
                }
                let widths = vec![self.k, hidden, self.channels * self.n];
                Ok(ReluGenerator::new(widths, self.channels, radius, weights)?.into())
            }
        }
    }

    /// `(C·n) × cols` matrix of unit-norm real columns whose spectra are
    /// supported on folded frequencies accepted by `allow`.
    fn band_matrix<R: rand::Rng + ?Sized>(
        &self,
        r: &mut R,
        cols: usize,
        allow: impl Fn(usize) -> bool,
    ) -> DMatrix<f64> {
        let n = self.n;
        let ch = self.channels;
        let mut m = DMatrix::zeros(ch * n, cols);
        for j in 0..cols {
            let mut coeffs = vec![Complex64::new(0.0, 0.0); ch * n];
            for c in 0..ch {
                for f in 0..=n / 2 {
                    if !allow(f) {
                        continue;
                    }
                    let g = rng::gaussian_vec(r, 2);
                    let v = if f == 0 || 2 * f == n {
                        Complex64::new(g[0], 0.0)
                    } else {
                        Complex64::new(g[0], g[1])
                    };
                    coeffs[c * n + f] = v;
                    if f != 0 && 2 * f != n {
                        coeffs[c * n + n - f] = v.conj();
                    }
                }
            }
            let sp = Spectrum::new(coeffs, ch, n).expect("consistent shape");
            let s = idft(&sp).expect("consistent shape");
            let vals = s.real_part();
            let nv = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (i, v) in vals.iter().enumerate() {
                m[(i, j)] = v / nv;
            }
        }
        m
    }
}
