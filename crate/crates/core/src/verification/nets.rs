//! Greedy secant nets in the sampling seminorm, certified by random probes.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::christoffel::SamplingLaw;
use crate::error::{invalid, Result};
use crate::generators::ConeDecomposition;
use crate::measurement::MeasurementPlan;
use crate::rng;
use crate::signals::dft_real;

use super::nondegeneracy::{rayleigh, sample_secant_pair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetStatus {
    Certified,
    CoverageUnverified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetOptions {
    /// Candidate secants for the initial greedy pass.
    pub pool: usize,
    /// Fresh secants per certification round.
    pub probes: usize,
    /// Certification rounds; uncovered probes join the net between rounds.
    pub rounds: usize,
    pub seed: u64,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            pool: 2000,
            probes: 100_000,
            rounds: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecantNet {
    /// Unit-norm secants.
    pub points: Vec<Vec<f64>>,
    pub eta: f64,
    pub status: NetStatus,
    pub probes: usize,
    /// Largest probe-to-net distance seen in the final round.
    pub coverage_radius: f64,
    pub channels: usize,
    pub n: usize,
}

impl SecantNet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Spectra of unit secants, kept alongside the points for fast distances.
struct Spectra {
    coeffs: Vec<Vec<Complex64>>,
    inv_mu: Vec<f64>,
    channels: usize,
    n: usize,
}

impl Spectra {
    fn distance(&self, a: &[Complex64], b: &[Complex64]) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n {
            let e: f64 = (0..self.channels)
                .map(|c| (a[c * self.n + i] - b[c * self.n + i]).norm_sqr())
                .sum();
            best = best.max(e * self.inv_mu[i]);
        }
        best.sqrt()
    }

    fn nearest(&self, s: &[Complex64]) -> f64 {
        self.coeffs
            .iter()
            .map(|p| self.distance(p, s))
            .fold(f64::INFINITY, f64::min)
    }
}

fn unit_secant(d: &ConeDecomposition, seed: u64, purpose: u64, t: usize) -> Option<Vec<f64>> {
    let mut r = rng::derived_stream(seed, purpose, t as u64);
    let (f1, f2) = sample_secant_pair(d, &mut r);
    let h: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| x - y).collect();
    let nh = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    (nh > 1e-12).then(|| h.iter().map(|v| v / nh).collect())
}

fn spectrum(h: &[f64], channels: usize, n: usize) -> Result<Vec<Complex64>> {
    Ok(dft_real(h, channels, n)?.coeffs().to_vec())
}

/// Builds an `eta`-net of the normalized secant set in the seminorm of `law`.
pub fn build_secant_net(d: &ConeDecomposition, eta: f64, law: &SamplingLaw, opts: &NetOptions) -> Result<SecantNet> {
    if !(eta > 0.0) {
        return Err(invalid("eta must be positive"));
    }
    if law.len() != d.per_channel_len {
        return Err(invalid("law length does not match the signal length"));
    }
    let (channels, n) = (d.channels, d.per_channel_len);
    let pool: Vec<(Vec<f64>, Vec<Complex64>)> = (0..opts.pool)
        .into_par_iter()
        .filter_map(|t| unit_secant(d, opts.seed, rng::purpose::CONE, t))
        .map(|h| spectrum(&h, channels, n).map(|s| (h, s)))
        .collect::<Result<_>>()?;
    if pool.is_empty() {
        return Err(invalid("class has no nonzero secants"));
    }
    let mut net = Spectra {
        coeffs: Vec::new(),
        inv_mu: law.probs.iter().map(|p| 1.0 / p).collect(),
        channels,
        n,
    };
    let mut points = Vec::new();

    // Farthest-point insertion until every candidate is within eta.
    let mut gap = vec![f64::INFINITY; pool.len()];
    let mut next = 0;
    loop {
        points.push(pool[next].0.clone());
        net.coeffs.push(pool[next].1.clone());
        let newest = net.coeffs.last().unwrap();
        gap.par_iter_mut()
            .zip(&pool)
            .for_each(|(g, (_, s))| *g = g.min(net.distance(newest, s)));
        let (i, &g) = gap
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        if g <= eta {
            break;
        }
        next = i;
    }

    let mut status = NetStatus::CoverageUnverified;
    let mut coverage_radius = f64::INFINITY;
    for round in 0..opts.rounds {
        let base = rng::derive_seed(opts.seed, rng::purpose::PROBE, round as u64);
        let misses: Vec<(f64, Vec<f64>, Vec<Complex64>)> = (0..opts.probes)
            .into_par_iter()
            .filter_map(|t| unit_secant(d, base, rng::purpose::PROBE, t))
            .map(|h| {
                let s = spectrum(&h, channels, n)?;
                Ok((net.nearest(&s), h, s))
            })
            .collect::<Result<Vec<_>>>()?;
        coverage_radius = misses.iter().map(|m| m.0).fold(0.0, f64::max);
        let uncovered: Vec<_> = misses.into_iter().filter(|m| m.0 > eta).collect();
        if uncovered.is_empty() {
            status = NetStatus::Certified;
            break;
        }
        // Add uncovered probes greedily, skipping ones the new points already cover.
        for (_, h, s) in uncovered {
            if net.nearest(&s) > eta {
                points.push(h);
                net.coeffs.push(s);
            }
        }
    }
    if status != NetStatus::Certified {
        log::warn!("secant net coverage unverified after {} rounds", opts.rounds);
    }
    Ok(SecantNet {
        points,
        eta,
        status,
        probes: opts.probes,
        coverage_radius,
        channels,
        n,
    })
}

/// `N² (1 + 2/(η√μ̲))^{2k}` for an `(N, k)`-piecewise-linear class.
pub fn piecewise_net_bound(pieces: f64, k: usize, eta: f64, mu_min: f64) -> f64 {
    pieces * pieces * (1.0 + 2.0 / (eta * mu_min.sqrt())).powi(2 * k as i32)
}

/// `(1 + 8LR/(ξη√μ̲))^{2k}` for an `L`-Lipschitz generator on a radius-`R` ball.
pub fn lipschitz_net_bound(k: usize, lipschitz: f64, radius: f64, xi: f64, eta: f64, mu_min: f64) -> f64 {
    (1.0 + 8.0 * lipschitz * radius / (xi * eta * mu_min.sqrt())).powi(2 * k as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtensionStatus {
    Passed,
    Failed,
    PrerequisiteFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetExtensionReport {
    pub status: ExtensionStatus,
    pub eps: f64,
    pub eta: f64,
    /// `√(1−ε) − η` and `√(1+ε) + η`.
    pub lower: f64,
    pub upper: f64,
    /// Extremes of `‖A h‖²` over the net points.
    pub net_min_sq: f64,
    pub net_max_sq: f64,
    /// Extremes of `‖A h‖` over the off-net probes.
    pub probe_min: f64,
    pub probe_max: f64,
    /// Smallest margin to either extended bound (negative on violation).
    pub slack: f64,
    pub probes: usize,
    pub violations: usize,
}

/// Checks the net bound `|‖Au‖² − 1| ≤ ε` and its extension to fresh secants.
pub fn net_extension_check(
    d: &ConeDecomposition,
    net: &SecantNet,
    plan: &MeasurementPlan,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<NetExtensionReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps must lie in (0, 1)"));
    }
    if net.is_empty() {
        return Err(invalid("empty net"));
    }
    let mut net_min_sq = f64::INFINITY;
    let mut net_max_sq = 0.0f64;
    for u in &net.points {
        let q = rayleigh(plan, u)?.unwrap_or(0.0);
        net_min_sq = net_min_sq.min(q);
        net_max_sq = net_max_sq.max(q);
    }
    let lower = (1.0 - eps).sqrt() - net.eta;
    let upper = (1.0 + eps).sqrt() + net.eta;
    let ratios: Vec<f64> = (0..probes)
        .into_par_iter()
        .filter_map(|t| unit_secant(d, seed, rng::purpose::PROBE, t))
        .map(|h| Ok(rayleigh(plan, &h)?.unwrap_or(0.0).sqrt()))
        .collect::<Result<_>>()?;
    let probe_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let probe_max = ratios.iter().copied().fold(0.0, f64::max);
    let violations = ratios.iter().filter(|&&r| r < lower || r > upper).count();
    let slack = (probe_min - lower).min(upper - probe_max);
    let status = if net_min_sq < 1.0 - eps || net_max_sq > 1.0 + eps {
        ExtensionStatus::PrerequisiteFailed
    } else if violations > 0 {
        ExtensionStatus::Failed
    } else {
        ExtensionStatus::Passed
    };
    Ok(NetExtensionReport {
        status,
        eps,
        eta: net.eta,
        lower,
        upper,
        net_min_sq,
        net_max_sq,
        probe_min,
        probe_max,
        slack,
        probes: ratios.len(),
        violations,
    })
}
