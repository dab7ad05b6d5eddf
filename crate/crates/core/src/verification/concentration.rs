//! Fixed-direction concentration of `‖A h‖²` over independent weighted plans.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::christoffel::SamplingLaw;
use crate::error::{invalid, Result};
use crate::generators::ConeDecomposition;
use crate::measurement::{draw_plan, DrawMode, WeightMode};
use crate::rng;
use crate::signals::dft_real;

use super::nondegeneracy::sample_secant_pair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub secant: usize,
    pub m: usize,
    pub eps: f64,
    pub failure_rate: f64,
    pub trials: usize,
    /// Mean and standard error of `‖A h‖² / ‖h‖²`.
    pub mean_ratio: f64,
    pub se_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationTable {
    pub rows: Vec<ConcentrationRow>,
    /// Failure rates never increase along the (sorted) grid, per secant.
    pub monotone: bool,
    /// Every mean lies within three standard errors of 1.
    pub unbiased: bool,
}

impl ConcentrationTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `count` nonzero secants of the class, reproducible from `seed`.
pub fn sample_secants(d: &ConeDecomposition, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut t = 0u64;
    while out.len() < count && t < 1000 * count as u64 + 1000 {
        let mut r = rng::derived_stream(seed, rng::purpose::PROBE, t);
        t += 1;
        let (f1, f2) = sample_secant_pair(d, &mut r);
        let h: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| x - y).collect();
        if h.iter().any(|v| v.abs() > 1e-12) {
            out.push(h);
        }
    }
    out
}

/// Empirical exceedance rates of `|‖A h‖² − ‖h‖²| > ε‖h‖²` for each secant
/// and each `m` in `m_grid`, over `trials` weighted iid plans.
pub fn concentration_experiment(
    secants: &[Vec<f64>],
    law: &SamplingLaw,
    channels: usize,
    m_grid: &[usize],
    eps: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationTable> {
    if secants.is_empty() || m_grid.is_empty() || trials < 2 {
        return Err(invalid("need secants, a nonempty m grid and at least two trials"));
    }
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    let n = law.len();
    // ‖A h‖² = (1/m) Σ_j E_{I_j}(h) / μ_{I_j}, so block energies suffice.
    let energies: Vec<(Vec<f64>, f64)> = secants
        .iter()
        .map(|h| {
            let sp = dft_real(h, channels, n)?;
            let e = sp.energies();
            let total = sp.norm_sq();
            if total == 0.0 {
                return Err(invalid("zero secant"));
            }
            Ok((e, total))
        })
        .collect::<Result<_>>()?;

    let mut grid = m_grid.to_vec();
    grid.sort_unstable();
    let mut rows = Vec::new();
    for (gi, &m) in grid.iter().enumerate() {
        let base = rng::derive_seed(seed, rng::purpose::PLAN, gi as u64);
        // ratios[trial][secant]
        let ratios: Vec<Vec<f64>> = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<Vec<f64>> {
                let s = rng::derive_seed(base, rng::purpose::TRIAL, t as u64);
                let plan = draw_plan(law, m, DrawMode::IidWithReplacement, WeightMode::Weighted, channels, s)?;
                Ok(energies
                    .iter()
                    .map(|(e, total)| {
                        let a2: f64 = plan.indices.iter().zip(&plan.weights).map(|(&i, w)| w * e[i]).sum();
                        a2 / m as f64 / total
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for s in 0..secants.len() {
            let xs: Vec<f64> = ratios.iter().map(|r| r[s]).collect();
            let mean = xs.iter().sum::<f64>() / trials as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
            let fails = xs.iter().filter(|x| (*x - 1.0).abs() > eps).count();
            rows.push(ConcentrationRow {
                secant: s,
                m,
                eps,
                failure_rate: fails as f64 / trials as f64,
                trials,
                mean_ratio: mean,
                se_ratio: (var / trials as f64).sqrt(),
            });
        }
    }
    let per_secant = |s: usize| rows.iter().filter(move |r| r.secant == s);
    let monotone = (0..secants.len()).all(|s| {
        let rates: Vec<f64> = per_secant(s).map(|r| r.failure_rate).collect();
        rates.windows(2).all(|w| w[1] <= w[0])
    });
    let unbiased = rows.iter().all(|r| (r.mean_ratio - 1.0).abs() <= 3.0 * r.se_ratio + 1e-12);
    Ok(ConcentrationTable {
        rows,
        monotone,
        unbiased,
    })
}
