//! Multichannel signals, the unitary DFT, Fourier sampling and PSNR.
//!
//! A signal with `C` channels of length `n` is stored channel-major: entry `j`
//! of channel `c` lives at `c * n + j`. The forward transform uses the kernel
//! `exp(-2πi jk/n) / √n` per channel, with frequencies ordered `0..n` (DC first).

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// In-place unitary transform of every length-`n` block of `buf`.
fn unitary_transform(buf: &mut [Complex64], n: usize, inverse: bool) {
    let fft = plan(n, inverse);
    fft.process(buf);
    let scale = 1.0 / (n as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// A `C`-channel signal of per-channel length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    data: Vec<Complex64>,
    channels: usize,
    len: usize,
}

impl Signal {
    pub fn new(data: Vec<Complex64>, channels: usize, len: usize) -> Result<Self> {
        if channels == 0 || len == 0 {
            return Err(invalid("channels and per-channel length must be positive"));
        }
        if data.len() != channels * len {
            return Err(invalid(format!(
                "signal has {} entries, expected {}x{}",
                data.len(),
                channels,
                len
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("signal contains non-finite entries"));
        }
        Ok(Self {
            data,
            channels,
            len,
        })
    }

    pub fn from_real(values: &[f64], channels: usize, len: usize) -> Result<Self> {
        Self::new(
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            channels,
            len,
        )
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            data: vec![Complex64::new(0.0, 0.0); channels * len],
            channels,
            len,
        }
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Per-channel length `n`.
    pub fn per_channel_len(&self) -> usize {
        self.len
    }

    /// Ambient dimension `C·n`.
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.re).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Hermitian inner product `⟨self, other⟩ = Σ conj(self_j)·other_j`.
    pub fn inner(&self, other: &Signal) -> Result<Complex64> {
        self.check_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn sub(&self, other: &Signal) -> Result<Signal> {
        self.check_shape(other)?;
        Ok(Signal {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            channels: self.channels,
            len: self.len,
        })
    }

    pub fn add(&self, other: &Signal) -> Result<Signal> {
        self.check_shape(other)?;
        Ok(Signal {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            channels: self.channels,
            len: self.len,
        })
    }

    pub fn scale(&self, s: Complex64) -> Signal {
        Signal {
            data: self.data.iter().map(|v| v * s).collect(),
            channels: self.channels,
            len: self.len,
        }
    }

    pub fn same_shape(&self, other: &Signal) -> bool {
        self.channels == other.channels && self.len == other.len
    }

    fn check_shape(&self, other: &Signal) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.channels, self.len, other.channels, other.len
            )))
        }
    }
}

/// Per-channel Fourier coefficients, grouped like [`Signal`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<Complex64>,
    channels: usize,
    len: usize,
}

impl Spectrum {
    pub fn new(coeffs: Vec<Complex64>, channels: usize, len: usize) -> Result<Self> {
        if channels == 0 || len == 0 || coeffs.len() != channels * len {
            return Err(invalid(format!(
                "spectrum has {} coefficients, expected {}x{}",
                coeffs.len(),
                channels,
                len
            )));
        }
        Ok(Self {
            coeffs,
            channels,
            len,
        })
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); channels * len],
            channels,
            len,
        }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn per_channel_len(&self) -> usize {
        self.len
    }

    /// Coefficient of channel `c` at frequency `i`.
    pub fn at(&self, c: usize, i: usize) -> Complex64 {
        self.coeffs[c * self.len + i]
    }

    /// `Σ_c |coeff(c, i)|²`, the energy of the channel block at frequency `i`.
    pub fn block_energy(&self, i: usize) -> f64 {
        (0..self.channels).map(|c| self.at(c, i).norm_sqr()).sum()
    }

    /// Block energies for every frequency.
    pub fn energies(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.block_energy(i)).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Unitary DFT of every channel.
pub fn dft(s: &Signal) -> Result<Spectrum> {
    if s.data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(invalid("non-finite signal"));
    }
    let mut buf = s.data.clone();
    unitary_transform(&mut buf, s.len, false);
    Ok(Spectrum {
        coeffs: buf,
        channels: s.channels,
        len: s.len,
    })
}

/// Forward transform of a real vector laid out like a signal.
pub fn dft_real(values: &[f64], channels: usize, len: usize) -> Result<Spectrum> {
    dft(&Signal::from_real(values, channels, len)?)
}

/// Inverse of [`dft`].
pub fn idft(sp: &Spectrum) -> Result<Signal> {
    if sp.coeffs.len() != sp.channels * sp.len {
        return Err(invalid("spectrum length mismatch"));
    }
    let mut buf = sp.coeffs.clone();
    unitary_transform(&mut buf, sp.len, true);
    Signal::new(buf, sp.channels, sp.len)
}

/// `P_i F f` for every channel.
pub fn sample_coefficient(s: &Signal, i: usize) -> Result<Vec<Complex64>> {
    if i >= s.len {
        return Err(invalid(format!(
            "frequency index {i} out of range 0..{}",
            s.len
        )));
    }
    let sp = dft(s)?;
    Ok((0..s.channels).map(|c| sp.at(c, i)).collect())
}

/// Peak signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psnr {
    /// Zero mean-squared error.
    Exact,
    Db(f64),
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Exact => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Exact => write!(f, "exact"),
            Psnr::Db(v) => write!(f, "{v}"),
        }
    }
}

/// `10·log10(peak² / MSE)` with MSE averaged over all `C·n` entries.
pub fn psnr(reference: &Signal, estimate: &Signal, peak: f64) -> Result<Psnr> {
    if !reference.same_shape(estimate) {
        return Err(invalid("psnr: shape mismatch"));
    }
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(invalid("psnr: peak must be positive"));
    }
    let mse = reference
        .data
        .iter()
        .zip(&estimate.data)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / reference.dim() as f64;
    if mse == 0.0 {
        Ok(Psnr::Exact)
    } else {
        Ok(Psnr::Db(10.0 * (peak * peak / mse).log10()))
    }
}

/// `‖estimate − reference‖ / ‖reference‖` (absolute error when the reference is zero).
pub fn relative_error(reference: &Signal, estimate: &Signal) -> Result<f64> {
    let diff = estimate.sub(reference)?.norm();
    let base = reference.norm();
    Ok(if base > 0.0 { diff / base } else { diff })
}

#[derive(Serialize, Deserialize)]
struct SignalRow {
    channel: usize,
    index: usize,
    re: f64,
    im: f64,
}

/// Writes `(channel, index, re, im)` rows.
pub fn write_signal_csv<W: Write>(s: &Signal, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for c in 0..s.channels {
        for (j, v) in s.channel(c).iter().enumerate() {
            wr.serialize(SignalRow {
                channel: c,
                index: j,
                re: v.re,
                im: v.im,
            })?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads `(channel, index, re, im)` rows in any order; every entry must appear once.
pub fn read_signal_csv<R: Read>(r: R) -> Result<Signal> {
    let mut rd = csv::Reader::from_reader(r);
    let rows: Vec<SignalRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(invalid("empty signal csv"));
    }
    let channels = rows.iter().map(|r| r.channel).max().unwrap_or(0) + 1;
    let len = rows.iter().map(|r| r.index).max().unwrap_or(0) + 1;
    if rows.len() != channels * len {
        return Err(invalid(format!(
            "signal csv has {} rows, expected {}x{}",
            rows.len(),
            channels,
            len
        )));
    }
    let mut data = vec![Complex64::new(f64::NAN, 0.0); channels * len];
    for row in rows {
        let slot = &mut data[row.channel * len + row.index];
        if !slot.re.is_nan() {
            return Err(invalid(format!(
                "duplicate entry channel {} index {}",
                row.channel, row.index
            )));
        }
        *slot = Complex64::new(row.re, row.im);
    }
    Signal::new(data, channels, len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_signal(seed: u64, channels: usize, len: usize) -> Signal {
        let mut r = rng::stream(seed);
        let re = rng::gaussian_vec(&mut r, channels * len);
        let im = rng::gaussian_vec(&mut r, channels * len);
        Signal::new(
            re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect(),
            channels,
            len,
        )
        .unwrap()
    }

    #[test]
    fn constant_maps_to_dc() {
        let s = Signal::from_real(&[1.0; 4], 1, 4).unwrap();
        let sp = dft(&s).unwrap();
        let expect = [2.0, 0.0, 0.0, 0.0];
        for (v, e) in sp.coeffs().iter().zip(expect) {
            assert!((v - c(e)).norm() < 1e-15);
        }
    }

    #[test]
    fn delta_maps_to_flat_spectrum() {
        let s = Signal::from_real(&[1.0, 0.0, 0.0, 0.0], 1, 4).unwrap();
        for v in dft(&s).unwrap().coeffs() {
            assert!((v - c(0.5)).norm() < 1e-15);
        }
    }

    #[test]
    fn dft_preserves_norm() {
        let s = random_signal(1, 1, 16);
        let sp = dft(&s).unwrap();
        assert!((sp.norm_sq().sqrt() - s.norm()).abs() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        let sp = Spectrum::new(vec![c(2.0), c(0.0), c(0.0), c(0.0)], 1, 4).unwrap();
        let s = idft(&sp).unwrap();
        for v in s.data() {
            assert!((v - c(1.0)).norm() < 1e-15);
        }
        let z = idft(&Spectrum::zeros(2, 8)).unwrap();
        assert_eq!(z.norm(), 0.0);

        let s = random_signal(2, 1, 8);
        let back = idft(&dft(&s).unwrap()).unwrap();
        assert!(back.sub(&s).unwrap().norm() <= 1e-12 * s.norm());
    }

    #[test]
    fn spectrum_length_mismatch_rejected() {
        assert!(Spectrum::new(vec![c(1.0); 3], 1, 4).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Signal::new(vec![c(f64::NAN)], 1, 1).is_err());
        assert!(Signal::from_real(&[1.0, f64::INFINITY], 1, 2).is_err());
    }

    #[test]
    fn sample_coefficient_examples() {
        let n = 8;
        let s = Signal::from_real(&[1.0; 16], 2, n).unwrap();
        let dc = sample_coefficient(&s, 0).unwrap();
        for v in dc {
            assert!((v - c((n as f64).sqrt())).norm() < 1e-12);
        }
        for v in sample_coefficient(&s, 3).unwrap() {
            assert!(v.norm() < 1e-12);
        }
        let r = random_signal(3, 3, n);
        let sp = dft(&r).unwrap();
        for i in 0..n {
            let got = sample_coefficient(&r, i).unwrap();
            for ch in 0..3 {
                assert_eq!(got[ch], sp.at(ch, i));
            }
        }
        assert!(sample_coefficient(&r, n).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Signal::from_real(&[1.0; 10], 1, 10).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), Psnr::Exact);
        let b = Signal::from_real(&[0.9; 10], 1, 10).unwrap();
        let v = psnr(&a, &b, 1.0).unwrap().db();
        assert!((v - 20.0).abs() < 1e-9);
        let c3 = Signal::from_real(&[0.9; 12], 1, 12).unwrap();
        assert!(psnr(&a, &c3, 1.0).is_err());
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn psnr_matches_explicit_loop() {
        let a = random_signal(10, 2, 16);
        let b = random_signal(11, 2, 16);
        let mut acc = 0.0;
        for j in 0..a.dim() {
            let d = a.data()[j] - b.data()[j];
            acc += d.re * d.re + d.im * d.im;
        }
        let mse = acc / 32.0;
        let expected = 10.0 * (9.0 / mse).log10();
        assert!((psnr(&a, &b, 3.0).unwrap().db() - expected).abs() < 1e-9);
    }

    #[test]
    fn csv_roundtrip() {
        let s = random_signal(4, 2, 5);
        let mut buf = Vec::new();
        write_signal_csv(&s, &mut buf).unwrap();
        let back = read_signal_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("channel,index,re,im"));
    }
}
