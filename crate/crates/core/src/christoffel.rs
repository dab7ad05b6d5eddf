//! Christoffel functions of secant classes, sampling laws, the sampling
//! seminorm and the prompt compatibility factor `Λ`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::generators::{ConditionId, ConditionalGenerator, ConeDecomposition, LatentLaw};
use crate::linalg;
use crate::rng;
use crate::signals::{dft, dft_real, Signal};

/// Default relative floor applied when forming sampling laws.
pub const DEFAULT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    MonteCarlo,
    ExactSubspace,
    Interval,
}

/// Per-frequency values `K̃(i)`. In interval mode `values` holds the upper end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChristoffelEstimate {
    pub values: Vec<f64>,
    pub trials: usize,
    pub mode: EstimateMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

impl ChristoffelEstimate {
    pub fn new(values: Vec<f64>, trials: usize, mode: EstimateMode) -> Result<Self> {
        check_values(&values)?;
        Ok(Self {
            values,
            trials,
            mode,
            lower: None,
            upper: None,
        })
    }

    pub fn interval(lower: Vec<f64>, upper: Vec<f64>, trials: usize) -> Result<Self> {
        check_values(&upper)?;
        if lower.len() != upper.len() {
            return Err(invalid("interval ends differ in length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && *l >= 0.0 && l <= u)) {
            return Err(invalid("interval requires 0 <= lower <= upper"));
        }
        Ok(Self {
            values: upper.clone(),
            trials,
            mode: EstimateMode::Interval,
            lower: Some(lower),
            upper: Some(upper),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `κ̃ = Σ_i K̃(i)`.
    pub fn kappa(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Whether the interval has collapsed to a point (or the estimate is exact).
    pub fn is_exact(&self) -> bool {
        match (&self.lower, &self.upper) {
            (Some(l), Some(u)) => l == u,
            _ => self.mode == EstimateMode::ExactSubspace,
        }
    }
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(invalid("Christoffel estimate is empty"));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid("Christoffel values must be finite and nonnegative"));
    }
    if values.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateClass("all Christoffel values are zero".into()));
    }
    Ok(())
}

/// Normalized block energies `|P_i F h|² / ‖h‖²`, or `None` when `h = 0`.
pub fn normalized_energies(h: &[f64], channels: usize, n: usize) -> Result<Option<Vec<f64>>> {
    let nh: f64 = h.iter().map(|v| v * v).sum();
    if nh == 0.0 {
        return Ok(None);
    }
    let sp = dft_real(h, channels, n)?;
    Ok(Some(sp.energies().into_iter().map(|e| e / nh).collect()))
}

fn max_merge(mut a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        if *y > *x {
            *x = *y;
        }
    }
    a
}

/// Monte Carlo estimate of `K(F_{c1} − F_{c2})` from `trials` random secants.
///
/// Trial `t` draws from its own derived stream, so a run with more trials
/// dominates a shorter run index-wise.
pub fn christoffel_monte_carlo<G: ConditionalGenerator + ?Sized>(
    g: &G,
    c1: &ConditionId,
    c2: &ConditionId,
    latent_law: LatentLaw,
    trials: usize,
    seed: u64,
) -> Result<ChristoffelEstimate> {
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    for c in [c1, c2] {
        if !g.has_condition(c) {
            return Err(Error::UnknownCondition(c.to_string()));
        }
    }
    let n = g.per_channel_len();
    let ch = g.channels();
    let ball = g.latent_ball();
    let per_trial = |t: usize| -> Result<Option<Vec<f64>>> {
        let mut r = rng::derived_stream(seed, rng::purpose::TRIAL, t as u64);
        let z1 = latent_law.sample(&ball, &mut r);
        let z2 = latent_law.sample(&ball, &mut r);
        let a = g.forward(&z1, c1)?;
        let b = g.forward(&z2, c2)?;
        let h: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        normalized_energies(&h, ch, n)
    };
    let (values, hits) = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(Vec<f64>, usize)> {
            Ok(match per_trial(t)? {
                Some(e) => (e, 1),
                None => (vec![0.0; n], 0),
            })
        })
        .try_reduce(
            || (vec![0.0; n], 0),
            |a, b| Ok((max_merge(a.0, &b.0), a.1 + b.1)),
        )?;
    if hits == 0 {
        return Err(Error::DegenerateClass(format!(
            "every secant between `{c1}` and `{c2}` vanished in {trials} trials"
        )));
    }
    ChristoffelEstimate::new(values, trials, EstimateMode::MonteCarlo)
}

/// `K(i)` of the real subspace spanned by the orthonormal columns of `q`.
///
/// For `h = Q x` the block energy is `xᵀ (Σ_ch Re(M_chᴴ M_ch)) x` with `M_ch`
/// the `i`-th Fourier row of channel `ch`, so `K(i)` is the top eigenvalue.
pub fn subspace_christoffel(q: &DMatrix<f64>, channels: usize, n: usize) -> Result<Vec<f64>> {
    let spectra = column_spectra(q, channels, n)?;
    Ok((0..n).map(|i| block_gram_max(&spectra, channels, n, i)).collect())
}

pub(crate) fn column_spectra(
    q: &DMatrix<f64>,
    channels: usize,
    n: usize,
) -> Result<Vec<Vec<num_complex::Complex64>>> {
    if q.nrows() != channels * n {
        return Err(invalid("basis rows do not match the ambient dimension"));
    }
    q.column_iter()
        .map(|col| {
            let v: Vec<f64> = col.iter().cloned().collect();
            Ok(dft_real(&v, channels, n)?.coeffs().to_vec())
        })
        .collect()
}

fn block_gram_max(spectra: &[Vec<num_complex::Complex64>], channels: usize, n: usize, i: usize) -> f64 {
    let r = spectra.len();
    if r == 0 {
        return 0.0;
    }
    let rows: Vec<Vec<num_complex::Complex64>> = (0..channels)
        .map(|c| spectra.iter().map(|s| s[c * n + i]).collect())
        .collect();
    let m = linalg::stack_complex(&rows, r);
    let gram = m.transpose() * &m;
    linalg::lambda_max_symmetric(&gram).max(0.0)
}

/// Exact `K` of `span(B1) + span(B2)`, the secant class of two linear classes.
pub fn linear_christoffel(
    b1: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    channels: usize,
    n: usize,
) -> Result<ChristoffelEstimate> {
    if b1.nrows() != b2.nrows() {
        return Err(invalid("bases have different ambient dimensions"));
    }
    let q = linalg::orthonormal_basis(&concat(b1, b2));
    let values = subspace_christoffel(&q, channels, n)?;
    ChristoffelEstimate::new(values, 0, EstimateMode::ExactSubspace)
}

pub(crate) fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.columns_mut(0, a.ncols()).copy_from(a);
    m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    m
}

/// Options for the cone-restricted lower end of [`christoffel_exact_subspace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub trials: usize,
    pub seed: u64,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            trials: 2000,
            seed: 0,
        }
    }
}

/// Interval for `K(F_1 − F_2)` over two cone decompositions.
///
/// The upper end maximizes over cone pairs the Christoffel function of
/// `L_{a,b} = span(A_a) + span(A_b)`; the lower end samples secants with both
/// latents inside their cones. When every piece is unconstrained the secant
/// sets are the subspaces themselves and the interval is a point.
pub fn christoffel_exact_subspace(
    d1: &ConeDecomposition,
    d2: &ConeDecomposition,
    refine: Refinement,
) -> Result<ChristoffelEstimate> {
    if d1.pieces.is_empty() || d2.pieces.is_empty() {
        return Err(invalid("empty cone decomposition"));
    }
    if d1.ambient_dim() != d2.ambient_dim() || d1.per_channel_len != d2.per_channel_len {
        return Err(invalid("decompositions live in different ambient spaces"));
    }
    let (ch, n) = (d1.channels, d1.per_channel_len);
    let pairs: Vec<(usize, usize)> = (0..d1.count())
        .flat_map(|a| (0..d2.count()).map(move |b| (a, b)))
        .collect();
    let upper = pairs
        .par_iter()
        .map(|&(a, b)| {
            let q = linalg::orthonormal_basis(&concat(&d1.pieces[a].map, &d2.pieces[b].map));
            subspace_christoffel(&q, ch, n)
        })
        .try_reduce(|| vec![0.0; n], |x, y| Ok(max_merge(x, &y)))?;
    if d1.is_unconstrained() && d2.is_unconstrained() {
        return ChristoffelEstimate::interval(upper.clone(), upper, 0);
    }
    let lower = (0..refine.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let mut r = rng::derived_stream(refine.seed, rng::purpose::CONE, t as u64);
            let (a, b) = pairs[r.random_range(0..pairs.len())];
            let (pa, pb) = (&d1.pieces[a], &d2.pieces[b]);
            let z1 = pa.sample(d1.radius, &mut r);
            let z2 = pb.sample(d2.radius, &mut r);
            let h: Vec<f64> = pa.apply(&z1).iter().zip(pb.apply(&z2)).map(|(x, y)| x - y).collect();
            Ok(normalized_energies(&h, ch, n)?.unwrap_or_else(|| vec![0.0; n]))
        })
        .try_reduce(|| vec![0.0; n], |x, y| Ok(max_merge(x, &y)))?;
    // Sampled secants lie in some L_{a,b}; clamp roundoff above the upper end.
    let lower: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| l.min(*u)).collect();
    ChristoffelEstimate::interval(lower, upper, refine.trials)
}

/// A full-support probability vector over frequency indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingLaw {
    pub probs: Vec<f64>,
    pub min_prob: f64,
    pub floor_applied: bool,
    /// `κ̃` of the estimate the law was built from, before flooring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl SamplingLaw {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("sampling law is empty"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(invalid("sampling law needs full support"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("sampling law sums to {total}, not 1")));
        }
        let min_prob = probs.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            probs,
            min_prob,
            floor_applied: false,
            kappa: None,
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("sampling law is empty"));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `μ(i) ∝ max(K(i), floor · max_j K(j))`.
pub fn sampling_law(k: &ChristoffelEstimate, floor: f64) -> Result<SamplingLaw> {
    check_values(&k.values)?;
    if !(0.0..1.0).contains(&floor) {
        return Err(invalid("floor must lie in [0, 1)"));
    }
    let kmax = k.values.iter().cloned().fold(0.0, f64::max);
    let level = floor * kmax;
    let raised: Vec<f64> = k.values.iter().map(|&v| v.max(level)).collect();
    if raised.iter().any(|&v| v <= 0.0) {
        return Err(invalid(
            "floor 0 leaves zero-probability indices; use a positive floor",
        ));
    }
    let floor_applied = k.values.iter().any(|&v| v < level);
    let z: f64 = raised.iter().sum();
    let probs: Vec<f64> = raised.iter().map(|v| v / z).collect();
    let min_prob = probs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SamplingLaw {
        probs,
        min_prob,
        floor_applied,
        kappa: Some(k.kappa()),
    })
}

/// `|||g|||_μ = (max_i |P_i F g|² / μ(i))^{1/2}`.
pub fn sampling_seminorm(g: &Signal, law: &SamplingLaw) -> Result<f64> {
    if g.per_channel_len() != law.len() {
        return Err(invalid("signal length does not match the sampling law"));
    }
    let e = dft(g)?.energies();
    Ok(e.iter()
        .zip(&law.probs)
        .map(|(ei, p)| ei / p)
        .fold(0.0, f64::max)
        .sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub value: f64,
    pub argmax_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<Vec<f64>>>,
}

/// `Λ = max_i K12(i) / μ3(i)`, ties broken towards the lowest index.
pub fn compatibility_factor(k12: &ChristoffelEstimate, law3: &SamplingLaw) -> Result<CompatibilityReport> {
    if k12.len() != law3.len() {
        return Err(invalid("estimate and law have different lengths"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, (k, p)) in k12.values.iter().zip(&law3.probs).enumerate() {
        let r = k / p;
        if r > best.1 {
            best = (i, r);
        }
    }
    Ok(CompatibilityReport {
        value: best.1,
        argmax_index: best.0,
        table: None,
    })
}

/// Writes `index,value` rows.
pub fn write_values_csv<W: Write>(values: &[f64], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["index", "value"])?;
    for (i, v) in values.iter().enumerate() {
        wr.write_record([i.to_string(), format!("{v:?}")])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_values_csv<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let idx: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| invalid(format!("row {row}: bad index")))?;
        if idx != row {
            return Err(invalid(format!("row {row}: index {idx} out of order")));
        }
        let v: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| invalid(format!("row {row}: bad value")))?;
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{enumerate_cones, ConeOptions, Generator, LinearGenerator, ReluGenerator};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeMap;

    fn linear(b: DMatrix<f64>, n: usize) -> Generator {
        let mut m = BTreeMap::new();
        m.insert(ConditionId::from("c"), b);
        LinearGenerator::new(1, n, 10.0, m).unwrap().into()
    }

    fn random_matrix(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
        let mut s = rng::stream(seed);
        DMatrix::from_vec(r, c, rng::gaussian_vec(&mut s, r * c))
    }

    #[test]
    fn single_vector_class_is_exact_after_one_trial() {
        let b = random_matrix(1, 16, 1);
        let g = linear(b.clone(), 16);
        let est = christoffel_monte_carlo(&g, &"c".into(), &"c".into(), LatentLaw::default(), 1, 4).unwrap();
        let col: Vec<f64> = b.column(0).iter().cloned().collect();
        let expect = normalized_energies(&col, 1, 16).unwrap().unwrap();
        for (a, e) in est.values.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_generator_is_degenerate() {
        let mut w = BTreeMap::new();
        w.insert(
            ConditionId::from("c"),
            vec![DMatrix::zeros(2, 2), DMatrix::zeros(4, 2)],
        );
        let g: Generator = ReluGenerator::new(vec![2, 2, 4], 1, 3.0, w).unwrap().into();
        let err = christoffel_monte_carlo(&g, &"c".into(), &"c".into(), LatentLaw::default(), 10, 0);
        assert!(matches!(err, Err(Error::DegenerateClass(_))));
    }

    #[test]
    fn monotone_in_trials() {
        let g = linear(random_matrix(2, 16, 3), 16);
        let c = ConditionId::from("c");
        let mut prev = vec![0.0; 16];
        for t in 1..12 {
            let est = christoffel_monte_carlo(&g, &c, &c, LatentLaw::default(), t, 9).unwrap();
            for (a, b) in est.values.iter().zip(&prev) {
                assert!(a >= b);
            }
            prev = est.values;
        }
    }

    #[test]
    fn delta_class_has_flat_christoffel() {
        let mut b = DMatrix::zeros(8, 1);
        b[(0, 0)] = 1.0;
        let k = subspace_christoffel(&b, 1, 8).unwrap();
        assert!(k.iter().all(|v| (v - 1.0 / 8.0).abs() < 1e-14));
    }

    #[test]
    fn full_real_space() {
        // Real signals: frequencies i and n−i are conjugate, so a unit-norm
        // real h can place at most half its energy on a non-self-conjugate i.
        let n = 8;
        let k = subspace_christoffel(&DMatrix::identity(n, n), 1, n).unwrap();
        for (i, v) in k.iter().enumerate() {
            let expect = if i == 0 || i == n / 2 { 1.0 } else { 0.5 };
            assert!((v - expect).abs() < 1e-12, "i={i}: {v}");
        }
    }

    #[test]
    fn two_dim_class_matches_angular_grid() {
        let n = 8;
        let b = random_matrix(5, n, 2);
        let q = linalg::orthonormal_basis(&b);
        let k = subspace_christoffel(&q, 1, n).unwrap();
        let mut grid = vec![0.0f64; n];
        let steps = 10_000;
        for s in 0..steps {
            let a = std::f64::consts::PI * s as f64 / steps as f64;
            let h = &b * nalgebra::DVector::from_vec(vec![a.cos(), a.sin()]);
            let v: Vec<f64> = h.iter().cloned().collect();
            let e = normalized_energies(&v, 1, n).unwrap().unwrap();
            grid = max_merge(grid, &e);
        }
        for (x, y) in k.iter().zip(&grid) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn monte_carlo_below_exact_upper_for_relu() {
        let mut s = rng::stream(3);
        let layers = vec![
            DMatrix::from_vec(3, 2, rng::gaussian_vec(&mut s, 6)),
            DMatrix::from_vec(8, 3, rng::gaussian_vec(&mut s, 24)),
        ];
        let mut w = BTreeMap::new();
        w.insert(ConditionId::from("c"), layers);
        let g: Generator = ReluGenerator::new(vec![2, 3, 8], 1, 3.0, w).unwrap().into();
        let c = ConditionId::from("c");
        let d = enumerate_cones(&g, &c, &ConeOptions::default()).unwrap();
        let exact = christoffel_exact_subspace(&d, &d, Refinement::default()).unwrap();
        let mc = christoffel_monte_carlo(&g, &c, &c, LatentLaw::default(), 20_000, 1).unwrap();
        let upper = exact.upper.as_ref().unwrap();
        let lower = exact.lower.as_ref().unwrap();
        for i in 0..8 {
            assert!(mc.values[i] <= upper[i] + 1e-12);
            assert!(lower[i] <= upper[i]);
        }
    }

    #[test]
    fn one_cone_interval_is_tight() {
        let b = random_matrix(8, 16, 2);
        let g = linear(b.clone(), 16);
        let c = ConditionId::from("c");
        let d = enumerate_cones(&g, &c, &ConeOptions::default()).unwrap();
        let exact = christoffel_exact_subspace(&d, &d, Refinement::default()).unwrap();
        assert!(exact.is_exact());
        let mc = christoffel_monte_carlo(&g, &c, &c, LatentLaw::default(), 100_000, 2).unwrap();
        let (arg, top) = exact
            .values
            .iter()
            .cloned()
            .enumerate()
            .fold((0, 0.0), |a, (i, v)| if v > a.1 { (i, v) } else { a });
        assert!(mc.values[arg] >= 0.95 * top);
        assert!(mc.values.iter().zip(&exact.values).all(|(m, e)| *m <= e + 1e-12));
    }

    #[test]
    fn empty_decomposition_rejected() {
        let b = random_matrix(8, 8, 1);
        let mut d = ConeDecomposition::from_linear(&b, 1, 8, 1.0).unwrap();
        d.pieces.clear();
        assert!(christoffel_exact_subspace(&d, &d, Refinement::default()).is_err());
    }

    #[test]
    fn flat_estimate_gives_uniform_law() {
        let k = ChristoffelEstimate::new(vec![0.3; 5], 1, EstimateMode::MonteCarlo).unwrap();
        let law = sampling_law(&k, DEFAULT_FLOOR).unwrap();
        assert!(law.probs.iter().all(|p| (p - 0.2).abs() < 1e-15));
        assert!((law.min_prob - 0.2).abs() < 1e-15);
        assert!(!law.floor_applied);
    }

    #[test]
    fn floor_restores_full_support() {
        let k = ChristoffelEstimate::new(vec![1.0, 0.0, 0.0, 0.0], 1, EstimateMode::MonteCarlo).unwrap();
        let law = sampling_law(&k, 1e-12).unwrap();
        let z = 1.0 + 3e-12;
        assert!((law.probs[0] - 1.0 / z).abs() < 1e-15);
        for p in &law.probs[1..] {
            assert!((p - 1e-12 / z).abs() < 1e-24);
        }
        assert!(law.floor_applied);
        assert_eq!(law.kappa, Some(1.0));
        assert!(sampling_law(&k, 0.0).is_err());
    }

    #[test]
    fn zero_estimate_is_degenerate() {
        assert!(matches!(
            ChristoffelEstimate::new(vec![0.0; 3], 1, EstimateMode::MonteCarlo),
            Err(Error::DegenerateClass(_))
        ));
    }

    #[test]
    fn law_is_reproducible() {
        let g = linear(random_matrix(3, 16, 2), 16);
        let c = ConditionId::from("c");
        let a = christoffel_monte_carlo(&g, &c, &c, LatentLaw::default(), 50, 77).unwrap();
        let b = christoffel_monte_carlo(&g, &c, &c, LatentLaw::default(), 50, 77).unwrap();
        assert_eq!(sampling_law(&a, DEFAULT_FLOOR).unwrap(), sampling_law(&b, DEFAULT_FLOOR).unwrap());
    }

    #[test]
    fn seminorm_examples() {
        let n = 8;
        let law = SamplingLaw::uniform(n).unwrap();
        let mut s = rng::stream(4);
        let g = Signal::from_real(&rng::gaussian_vec(&mut s, n), 1, n).unwrap();
        let e = dft(&g).unwrap().energies();
        let top = e.iter().cloned().fold(0.0, f64::max);
        let v = sampling_seminorm(&g, &law).unwrap();
        assert!((v * v - n as f64 * top).abs() < 1e-12 * n as f64 * top);
        assert_eq!(sampling_seminorm(&Signal::zeros(1, n), &law).unwrap(), 0.0);
    }

    #[test]
    fn seminorm_matches_brute_force() {
        let n = 16;
        let mut s = rng::stream(12);
        let raw: Vec<f64> = (0..n).map(|_| s.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        let law = SamplingLaw::new(raw.iter().map(|v| v / total).collect()).unwrap();
        let data: Vec<Complex64> = (0..2 * n)
            .map(|_| Complex64::new(s.random::<f64>() - 0.5, s.random::<f64>() - 0.5))
            .collect();
        let g = Signal::new(data, 2, n).unwrap();
        let mut best = 0.0f64;
        for i in 0..n {
            let mut e = 0.0;
            for c in 0..2 {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    let ang = -2.0 * std::f64::consts::PI * (i * j) as f64 / n as f64;
                    acc += g.channel(c)[j] * Complex64::from_polar(1.0, ang);
                }
                e += (acc / (n as f64).sqrt()).norm_sqr();
            }
            best = best.max(e / law.probs[i]);
        }
        assert!((sampling_seminorm(&g, &law).unwrap() - best.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn lambda_of_own_law_is_kappa() {
        let b = random_matrix(6, 32, 2);
        let k = linear_christoffel(&b, &b, 1, 32).unwrap();
        let law = sampling_law(&k, DEFAULT_FLOOR).unwrap();
        assert!(!law.floor_applied);
        let rep = compatibility_factor(&k, &law).unwrap();
        assert!((rep.value - k.kappa()).abs() < 1e-9);
    }

    #[test]
    fn uniform_pair_gives_kappa() {
        let k = ChristoffelEstimate::new(vec![0.25; 4], 1, EstimateMode::MonteCarlo).unwrap();
        let law = SamplingLaw::uniform(4).unwrap();
        let rep = compatibility_factor(&k, &law).unwrap();
        assert!((rep.value - 1.0).abs() < 1e-15);
        assert_eq!(rep.argmax_index, 0);
    }

    #[test]
    fn diagonal_is_column_minimum() {
        let n = 32;
        let bases: Vec<DMatrix<f64>> = (0..3).map(|s| random_matrix(40 + s, n, 2)).collect();
        let ks: Vec<ChristoffelEstimate> = bases
            .iter()
            .map(|b| linear_christoffel(b, b, 1, n).unwrap())
            .collect();
        let laws: Vec<SamplingLaw> = ks.iter().map(|k| sampling_law(k, DEFAULT_FLOOR).unwrap()).collect();
        for r in 0..3 {
            let col: Vec<f64> = (0..3)
                .map(|s| compatibility_factor(&ks[r], &laws[s]).unwrap().value)
                .collect();
            for s in 0..3 {
                assert!(col[r] <= col[s] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let v = vec![0.1, 1.0 / 3.0, 2.5e-17];
        let mut buf = Vec::new();
        write_values_csv(&v, &mut buf).unwrap();
        assert_eq!(read_values_csv(buf.as_slice()).unwrap(), v);
    }

    proptest! {
        #[test]
        fn scaling_invariance(seed in 0u64..1000, t in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
            let mut s = rng::stream(seed);
            let h = rng::gaussian_vec(&mut s, 16);
            let ht: Vec<f64> = h.iter().map(|v| v * t).collect();
            let a = normalized_energies(&h, 1, 16).unwrap().unwrap();
            let b = normalized_energies(&ht, 1, 16).unwrap().unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn lambda_dominates_kappa(seed in 0u64..500) {
            let mut s = rng::stream(seed);
            let b = DMatrix::from_vec(16, 2, rng::gaussian_vec(&mut s, 32));
            let k = linear_christoffel(&b, &b, 1, 16).unwrap();
            let raw: Vec<f64> = (0..16).map(|_| s.random::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            let law = SamplingLaw::new(raw.iter().map(|v| v / total).collect()).unwrap();
            let rep = compatibility_factor(&k, &law).unwrap();
            prop_assert!(rep.value >= k.kappa() * (1.0 - 1e-12));
        }

        #[test]
        fn seminorm_bounded_by_euclidean(seed in 0u64..500) {
            let mut s = rng::stream(seed);
            let raw: Vec<f64> = (0..16).map(|_| s.random::<f64>() + 0.01).collect();
            let total: f64 = raw.iter().sum();
            let law = SamplingLaw::new(raw.iter().map(|v| v / total).collect()).unwrap();
            let g = Signal::from_real(&rng::gaussian_vec(&mut s, 16), 1, 16).unwrap();
            let v = sampling_seminorm(&g, &law).unwrap();
            prop_assert!(v <= g.norm() / law.min_prob.sqrt() * (1.0 + 1e-12));
        }
    }
}
