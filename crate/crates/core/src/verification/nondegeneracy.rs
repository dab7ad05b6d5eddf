use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::christoffel::{column_spectra, concat, SamplingLaw};
use crate::error::{Error, Result};
use crate::generators::ConeDecomposition;
use crate::linalg;
use crate::measurement::{draw_plan, operator_from_spectra, DrawMode, MeasurementPlan, WeightMode};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactSpectral,
    Sampled,
}

/// Extreme squared singular values of `A_Ω` on `L_{a,b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairExtremes {
    pub a: usize,
    pub b: usize,
    pub dim: usize,
    pub min_sq: f64,
    pub max_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub tau_hat: f64,
    pub method: Method,
    pub tau: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairExtremes>,
    /// Number of secants probed by the sampled method.
    #[serde(default)]
    pub probes: usize,
}

/// Orthonormal bases of every `L_{a,b}`, with their column spectra cached so
/// that many plans can be checked cheaply.
#[derive(Debug, Clone)]
pub struct SecantSubspaces {
    pub channels: usize,
    pub n: usize,
    entries: Vec<(usize, usize, Vec<Vec<Complex64>>)>,
}

impl SecantSubspaces {
    pub fn new(d: &ConeDecomposition) -> Result<Self> {
        if d.pieces.is_empty() {
            return Err(crate::error::invalid("empty cone decomposition"));
        }
        let mut entries = Vec::new();
        for a in 0..d.count() {
            for b in a..d.count() {
                let q = linalg::orthonormal_basis(&concat(&d.pieces[a].map, &d.pieces[b].map));
                if q.ncols() == 0 {
                    continue;
                }
                entries.push((a, b, column_spectra(&q, d.channels, d.per_channel_len)?));
            }
        }
        Ok(Self {
            channels: d.channels,
            n: d.per_channel_len,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extremes(&self, plan: &MeasurementPlan) -> Result<Vec<PairExtremes>> {
        check_plan(plan, self.channels, self.n)?;
        Ok(self
            .entries
            .iter()
            .map(|(a, b, spectra)| {
                let m = operator_from_spectra(plan, spectra);
                let sv = linalg::singular_values(&m);
                let max_sq = sv.first().map(|s| s * s).unwrap_or(0.0);
                let min_sq = if m.nrows() < m.ncols() {
                    0.0
                } else {
                    sv.last().map(|s| s * s).unwrap_or(0.0)
                };
                PairExtremes {
                    a: *a,
                    b: *b,
                    dim: spectra.len(),
                    min_sq,
                    max_sq,
                }
            })
            .collect())
    }

    /// Certified distortion `max_{a,b} max(σ²_max − 1, 1 − σ²_min)`.
    pub fn tau_hat(&self, plan: &MeasurementPlan) -> Result<f64> {
        Ok(distortion(&self.extremes(plan)?))
    }
}

fn distortion(pairs: &[PairExtremes]) -> f64 {
    pairs
        .iter()
        .map(|p| (p.max_sq - 1.0).max(1.0 - p.min_sq))
        .fold(0.0, f64::max)
}

fn check_plan(plan: &MeasurementPlan, channels: usize, n: usize) -> Result<()> {
    if plan.mode != WeightMode::Weighted {
        return Err(Error::Mode(
            "empirical nondegeneracy is defined for weighted plans".into(),
        ));
    }
    if plan.channels != channels || plan.n != n {
        return Err(crate::error::invalid("plan does not match the class's signal shape"));
    }
    Ok(())
}

/// Exact-spectral certificate over all cone pairs.
pub fn check_nondegeneracy(d: &ConeDecomposition, plan: &MeasurementPlan, tau: f64) -> Result<NondegeneracyReport> {
    let subspaces = SecantSubspaces::new(d)?;
    let pairs = subspaces.extremes(plan)?;
    let tau_hat = distortion(&pairs);
    Ok(NondegeneracyReport {
        tau_hat,
        method: Method::ExactSpectral,
        tau,
        pass: tau_hat <= tau,
        pairs,
        probes: 0,
    })
}

/// Random secant pair `(A_a z1, A_b z2)` with each latent inside its cone.
pub(crate) fn sample_secant_pair<R: Rng + ?Sized>(d: &ConeDecomposition, r: &mut R) -> (Vec<f64>, Vec<f64>) {
    let a = r.random_range(0..d.count());
    let b = r.random_range(0..d.count());
    let z1 = d.pieces[a].sample(d.radius, r);
    let z2 = d.pieces[b].sample(d.radius, r);
    (d.pieces[a].apply(&z1), d.pieces[b].apply(&z2))
}

/// `‖A_Ω h‖² / ‖h‖²` for a real `h`, or `None` when `h = 0`.
pub fn rayleigh(plan: &MeasurementPlan, h: &[f64]) -> Result<Option<f64>> {
    let nh: f64 = h.iter().map(|v| v * v).sum();
    if nh == 0.0 {
        return Ok(None);
    }
    let sp = crate::signals::dft_real(h, plan.channels, plan.n)?;
    let e = sp.energies();
    let m = plan.m() as f64;
    let a2: f64 = plan
        .indices
        .iter()
        .zip(&plan.weights)
        .map(|(&i, w)| w * e[i])
        .sum::<f64>()
        / m;
    Ok(Some(a2 / nh))
}

/// Lower estimate of the distortion from `probes` random secants.
pub fn check_nondegeneracy_sampled(
    d: &ConeDecomposition,
    plan: &MeasurementPlan,
    tau: f64,
    probes: usize,
    seed: u64,
) -> Result<NondegeneracyReport> {
    check_plan(plan, d.channels, d.per_channel_len)?;
    let tau_hat = (0..probes)
        .into_par_iter()
        .map(|t| -> Result<f64> {
            let mut r = rng::derived_stream(seed, rng::purpose::PROBE, t as u64);
            let (f1, f2) = sample_secant_pair(d, &mut r);
            let h: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| x - y).collect();
            Ok(rayleigh(plan, &h)?.map(|q| (q - 1.0).abs()).unwrap_or(0.0))
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    Ok(NondegeneracyReport {
        tau_hat,
        method: Method::Sampled,
        tau,
        pass: tau_hat <= tau,
        pairs: Vec::new(),
        probes,
    })
}

/// Worst pair found while probing the S-REC inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrecWitness {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    /// `‖A(f1 − f2)‖ / ‖f1 − f2‖`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrecReport {
    pub gamma: f64,
    pub q: f64,
    pub tau_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witnesses: Option<SrecWitness>,
    #[serde(default)]
    pub probed: usize,
    #[serde(default)]
    pub violations: usize,
}

/// `γ = √(1 − τ̂)`, `q = 0`.
pub fn check_srec(report: &NondegeneracyReport) -> Result<SrecReport> {
    if !(report.tau_hat < 1.0) {
        return Err(Error::NoCertificate {
            tau_hat: report.tau_hat,
        });
    }
    Ok(SrecReport {
        gamma: (1.0 - report.tau_hat).sqrt(),
        q: 0.0,
        tau_hat: report.tau_hat,
        witnesses: None,
        probed: 0,
        violations: 0,
    })
}

/// Checks `‖A(f1 − f2)‖ ≥ γ‖f1 − f2‖ − q` on random pairs of the class.
pub fn probe_srec(
    d: &ConeDecomposition,
    plan: &MeasurementPlan,
    report: &SrecReport,
    probes: usize,
    seed: u64,
) -> Result<SrecReport> {
    if plan.channels != d.channels || plan.n != d.per_channel_len {
        return Err(crate::error::invalid("plan does not match the class's signal shape"));
    }
    let results: Vec<(bool, f64, Vec<f64>, Vec<f64>)> = (0..probes)
        .into_par_iter()
        .map(|t| -> Result<(bool, f64, Vec<f64>, Vec<f64>)> {
            let mut r = rng::derived_stream(seed, rng::purpose::PROBE, t as u64);
            let (f1, f2) = sample_secant_pair(d, &mut r);
            let h: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| x - y).collect();
            let nh = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ratio = rayleigh(plan, &h)?.map(f64::sqrt).unwrap_or(f64::INFINITY);
            let violated = nh > 0.0 && ratio * nh < report.gamma * nh - report.q;
            Ok((violated, ratio, f1, f2))
        })
        .collect::<Result<_>>()?;
    let violations = results.iter().filter(|r| r.0).count();
    let worst = results
        .into_iter()
        .filter(|r| r.1.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(_, ratio, f1, f2)| SrecWitness { f1, f2, ratio });
    Ok(SrecReport {
        witnesses: worst,
        probed: probes,
        violations,
        ..report.clone()
    })
}

/// Fraction of `plans` weighted iid draws of size `m` that certify `tau`.
pub fn nondegeneracy_pass_rate(
    subspaces: &SecantSubspaces,
    law: &SamplingLaw,
    m: usize,
    tau: f64,
    plans: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    let passes = (0..plans)
        .into_par_iter()
        .map(|t| -> Result<usize> {
            let s = rng::derive_seed(seed, rng::purpose::PLAN, t as u64);
            let plan = draw_plan(
                law,
                m,
                DrawMode::IidWithReplacement,
                WeightMode::Weighted,
                subspaces.channels,
                s,
            )?;
            Ok(usize::from(subspaces.tau_hat(&plan)? <= tau))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok((passes, plans))
}
