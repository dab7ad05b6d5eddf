//! Measurement plans and the subsampled Fourier operator `A_Ω`.
//!
//! Weighted plans use `A_Ω = m^{-1/2} W^{1/2} P_Ω F` with `W = diag(1/μ(I_j))`
//! and iid draws; unweighted plans drop `W` and draw without replacement with
//! the DC index always first.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::christoffel::{column_spectra, SamplingLaw};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng;
use crate::signals::{dft, idft, Signal, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    IidWithReplacement,
    WithoutReplacementDc,
}

fn check_pairing(draw: DrawMode, mode: WeightMode) -> Result<()> {
    match (draw, mode) {
        (DrawMode::IidWithReplacement, WeightMode::Weighted)
        | (DrawMode::WithoutReplacementDc, WeightMode::Unweighted) => Ok(()),
        (DrawMode::WithoutReplacementDc, WeightMode::Weighted) => Err(Error::ModeConflict(
            "weighted mode requires iid draws".into(),
        )),
        (DrawMode::IidWithReplacement, WeightMode::Unweighted) => Err(Error::ModeConflict(
            "unweighted mode requires without-replacement draws with DC".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub indices: Vec<usize>,
    /// `1/μ(I_j)` in weighted mode, all ones otherwise.
    pub weights: Vec<f64>,
    pub mode: WeightMode,
    pub draw_mode: DrawMode,
    pub channels: usize,
    pub n: usize,
    pub seed: u64,
}

impl MeasurementPlan {
    /// Validating constructor for explicit index sets.
    pub fn from_indices(
        indices: Vec<usize>,
        weights: Vec<f64>,
        mode: WeightMode,
        draw_mode: DrawMode,
        channels: usize,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        check_pairing(draw_mode, mode)?;
        if indices.is_empty() {
            return Err(invalid("a plan needs at least one index"));
        }
        if channels == 0 || n == 0 {
            return Err(invalid("channels and n must be positive"));
        }
        if weights.len() != indices.len() {
            return Err(invalid("one weight per index is required"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= n) {
            return Err(invalid(format!("index {i} out of range for n = {n}")));
        }
        match mode {
            WeightMode::Weighted => {
                if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
                    return Err(invalid("weights must be finite and positive"));
                }
            }
            WeightMode::Unweighted => {
                if weights.iter().any(|&w| w != 1.0) {
                    return Err(invalid("unweighted plans carry unit weights"));
                }
            }
        }
        if draw_mode == DrawMode::WithoutReplacementDc {
            if !indices.contains(&0) {
                return Err(invalid("without-replacement plans must include index 0"));
            }
            let mut seen = vec![false; n];
            for &i in &indices {
                if std::mem::replace(&mut seen[i], true) {
                    return Err(invalid(format!("index {i} repeated in a without-replacement plan")));
                }
            }
        }
        Ok(Self {
            indices,
            weights,
            mode,
            draw_mode,
            channels,
            n,
            seed,
        })
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// Row scale `sqrt(w_j / m)` of sample `j`.
    pub fn scale(&self, j: usize) -> f64 {
        (self.weights[j] / self.m() as f64).sqrt()
    }

    pub fn measurement_len(&self) -> usize {
        self.channels * self.m()
    }

    fn check_signal(&self, f: &Signal) -> Result<()> {
        if f.channels() != self.channels || f.per_channel_len() != self.n {
            return Err(invalid(format!(
                "signal is {}x{}, plan expects {}x{}",
                f.channels(),
                f.per_channel_len(),
                self.channels,
                self.n
            )));
        }
        Ok(())
    }
}

/// Draws a plan of `m` indices from `law`.
pub fn draw_plan(
    law: &SamplingLaw,
    m: usize,
    draw_mode: DrawMode,
    mode: WeightMode,
    channels: usize,
    seed: u64,
) -> Result<MeasurementPlan> {
    check_pairing(draw_mode, mode)?;
    let n = law.len();
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    let mut r = rng::derived_stream(seed, rng::purpose::PLAN, 0);
    match draw_mode {
        DrawMode::IidWithReplacement => {
            let dist = WeightedIndex::new(&law.probs).map_err(|e| invalid(e.to_string()))?;
            let indices: Vec<usize> = (0..m).map(|_| dist.sample(&mut r)).collect();
            let weights = indices.iter().map(|&i| 1.0 / law.probs[i]).collect();
            MeasurementPlan::from_indices(indices, weights, mode, draw_mode, channels, n, seed)
        }
        DrawMode::WithoutReplacementDc => {
            if m > n {
                return Err(invalid(format!("m = {m} exceeds n = {n} without replacement")));
            }
            let mut remaining = law.probs.clone();
            remaining[0] = 0.0;
            let mut indices = vec![0];
            for _ in 1..m {
                let i = sequential_draw(&remaining, &mut r);
                remaining[i] = 0.0;
                indices.push(i);
            }
            MeasurementPlan::from_indices(indices, vec![1.0; m], mode, draw_mode, channels, n, seed)
        }
    }
}

/// One categorical draw from the renormalized positive entries of `p`.
fn sequential_draw<R: Rng + ?Sized>(p: &[f64], r: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let u = r.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    /// Sample-major: entry `j·C + c` is channel `c` of sample `j`.
    pub y: Vec<Complex64>,
    pub channels: usize,
    /// `‖e‖₂` of the noise added so far, if any.
    pub noise_norm: Option<f64>,
}

impl Measurements {
    pub fn new(y: Vec<Complex64>, channels: usize) -> Result<Self> {
        if channels == 0 || !y.len().is_multiple_of(channels) {
            return Err(invalid("measurement length is not a multiple of channels"));
        }
        if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("measurements contain non-finite entries"));
        }
        Ok(Self {
            y,
            channels,
            noise_norm: None,
        })
    }

    pub fn norm(&self) -> f64 {
        self.y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    fn check(&self, plan: &MeasurementPlan) -> Result<()> {
        if self.channels != plan.channels || self.y.len() != plan.measurement_len() {
            return Err(invalid(format!(
                "measurements have length {}, plan expects {}",
                self.y.len(),
                plan.measurement_len()
            )));
        }
        Ok(())
    }
}

/// `y = A_Ω f`.
pub fn apply(plan: &MeasurementPlan, f: &Signal) -> Result<Measurements> {
    plan.check_signal(f)?;
    let sp = dft(f)?;
    Ok(apply_spectrum(plan, &sp))
}

pub(crate) fn apply_spectrum(plan: &MeasurementPlan, sp: &Spectrum) -> Measurements {
    let mut y = Vec::with_capacity(plan.measurement_len());
    for (j, &i) in plan.indices.iter().enumerate() {
        let s = plan.scale(j);
        for c in 0..plan.channels {
            y.push(sp.at(c, i) * s);
        }
    }
    Measurements {
        y,
        channels: plan.channels,
        noise_norm: None,
    }
}

/// `A_Ωᴴ y`.
pub fn adjoint(plan: &MeasurementPlan, y: &Measurements) -> Result<Signal> {
    y.check(plan)?;
    let n = plan.n;
    let mut sp = Spectrum::zeros(plan.channels, n);
    let coeffs = sp.coeffs_mut();
    for (j, &i) in plan.indices.iter().enumerate() {
        let s = plan.scale(j);
        for c in 0..plan.channels {
            coeffs[c * n + i] += y.y[j * plan.channels + c] * s;
        }
    }
    idft(&sp)
}

/// Adds `e = m^{-1/2} W^{1/2} u` (or `m^{-1/2} u` when `weighted` is false).
pub fn add_noise(
    plan: &MeasurementPlan,
    y: &Measurements,
    u: &[Complex64],
    weighted: bool,
) -> Result<Measurements> {
    y.check(plan)?;
    if u.len() != y.y.len() {
        return Err(invalid(format!(
            "noise has length {}, expected {}",
            u.len(),
            y.y.len()
        )));
    }
    let m = plan.m() as f64;
    let mut out = y.clone();
    let mut e2 = 0.0;
    for (j, _) in plan.indices.iter().enumerate() {
        let s = if weighted {
            (plan.weights[j] / m).sqrt()
        } else {
            1.0 / m.sqrt()
        };
        for c in 0..plan.channels {
            let k = j * plan.channels + c;
            let e = u[k] * s;
            e2 += e.norm_sqr();
            out.y[k] += e;
        }
    }
    let prior = y.noise_norm.unwrap_or(0.0);
    out.noise_norm = Some((prior * prior + e2).sqrt());
    Ok(out)
}

/// Complex Gaussian `u` with `E|u_j|² = scale²`.
pub fn gaussian_noise(len: usize, scale: f64, seed: u64) -> Result<Vec<Complex64>> {
    if !scale.is_finite() || scale < 0.0 {
        return Err(invalid("noise scale must be finite and nonnegative"));
    }
    let mut r = rng::derived_stream(seed, rng::purpose::NOISE, 0);
    let g = rng::gaussian_vec(&mut r, 2 * len);
    let s = scale / std::f64::consts::SQRT_2;
    Ok(g.chunks(2).map(|p| Complex64::new(p[0] * s, p[1] * s)).collect())
}

/// `(m/n) A_Ωᴴ y`.
pub fn zero_filled(plan: &MeasurementPlan, y: &Measurements) -> Result<Signal> {
    let a = adjoint(plan, y)?;
    Ok(a.scale(Complex64::new(plan.m() as f64 / plan.n as f64, 0.0)))
}

/// Zero-filled image on the scale of the signal: `m A_Ωᴴ y` for unweighted
/// plans (the inverse DFT of the zero-filled spectrum) and `A_Ωᴴ y` for
/// weighted plans (an unbiased estimate of `f`).
pub fn zero_filled_image(plan: &MeasurementPlan, y: &Measurements) -> Result<Signal> {
    let a = adjoint(plan, y)?;
    let s = match plan.mode {
        WeightMode::Unweighted => plan.m() as f64,
        WeightMode::Weighted => 1.0,
    };
    Ok(a.scale(Complex64::new(s, 0.0)))
}

/// Real matrix `[Re; Im]` of `A_Ω Q`, rows ordered sample-major.
pub fn operator_matrix(plan: &MeasurementPlan, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let spectra = column_spectra(q, plan.channels, plan.n)?;
    Ok(operator_from_spectra(plan, &spectra))
}

pub(crate) fn operator_from_spectra(plan: &MeasurementPlan, spectra: &[Vec<Complex64>]) -> DMatrix<f64> {
    let n = plan.n;
    let rows: Vec<Vec<Complex64>> = plan
        .indices
        .iter()
        .enumerate()
        .flat_map(|(j, &i)| {
            let s = plan.scale(j);
            (0..plan.channels).map(move |c| (s, c * n + i))
        })
        .map(|(s, at)| spectra.iter().map(|col| col[at] * s).collect())
        .collect();
    linalg::stack_complex(&rows, spectra.len())
}

pub fn write_measurements_csv<W: Write>(y: &Measurements, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["j", "channel", "re", "im"])?;
    for (k, v) in y.y.iter().enumerate() {
        wr.write_record([
            (k / y.channels).to_string(),
            (k % y.channels).to_string(),
            format!("{:?}", v.re),
            format!("{:?}", v.im),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_measurements_csv<R: Read>(r: R, channels: usize) -> Result<Measurements> {
    let mut rd = csv::Reader::from_reader(r);
    let mut y = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| invalid(format!("row {row}: missing column {i}")))
        };
        let j: usize = field(0)?.parse().map_err(|_| invalid(format!("row {row}: bad j")))?;
        let c: usize = field(1)?.parse().map_err(|_| invalid(format!("row {row}: bad channel")))?;
        if j * channels + c != row || c >= channels {
            return Err(invalid(format!("row {row}: entries out of order")));
        }
        let re: f64 = field(2)?.parse().map_err(|_| invalid(format!("row {row}: bad re")))?;
        let im: f64 = field(3)?.parse().map_err(|_| invalid(format!("row {row}: bad im")))?;
        y.push(Complex64::new(re, im));
    }
    Measurements::new(y, channels)
}
