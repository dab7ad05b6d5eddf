//! Sample-complexity calculators. The absolute constant hidden by `≳` is an
//! explicit input (`constant`, default 1).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Relu,
    Lipschitz,
    PiecewiseLinear,
    NetBased,
}

/// Inputs shared by all regimes; each regime reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityInputs {
    pub tau: f64,
    pub delta: f64,
    pub mu_min: f64,
    pub lambda: f64,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub widths: Option<Vec<usize>>,
    pub xi: Option<f64>,
    pub lipschitz: Option<f64>,
    pub radius: Option<f64>,
    pub pieces: Option<f64>,
    pub net_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityBudget {
    pub regime: Regime,
    pub inputs: ComplexityInputs,
    pub constant: f64,
    /// The bracketed logarithmic factor.
    pub bracket: f64,
    /// `constant · Λ τ⁻² · bracket` before rounding.
    pub rhs: f64,
    pub m_required: usize,
    /// Additive S-REC slack `q = √(1−τ) ξ` (Lipschitz regime).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

fn check_common(x: &ComplexityInputs, constant: f64) -> Result<()> {
    if !(x.tau > 0.0 && x.tau < 1.0) {
        return Err(invalid("tau must lie in (0, 1)"));
    }
    if !(x.delta > 0.0 && x.delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    if !(x.mu_min > 0.0 && x.mu_min <= 1.0) {
        return Err(invalid("mu_min must lie in (0, 1]"));
    }
    if !(x.lambda > 0.0 && x.lambda.is_finite()) {
        return Err(invalid("lambda must be positive"));
    }
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(invalid("constant must be positive"));
    }
    Ok(())
}

fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| invalid(format!("missing input `{name}`")))
}

fn finish(regime: Regime, inputs: ComplexityInputs, constant: f64, bracket: f64, q: Option<f64>) -> ComplexityBudget {
    let rhs = constant * inputs.lambda / (inputs.tau * inputs.tau) * bracket;
    let m_required = (rhs.ceil() as usize).max(1);
    ComplexityBudget {
        regime,
        inputs,
        constant,
        bracket,
        rhs,
        m_required,
        q,
    }
}

/// Geometric mean `(Π k_ℓ)^{1/(d−1)}` of the hidden widths.
pub fn mean_width(widths: &[usize]) -> f64 {
    let s: f64 = widths.iter().map(|&w| (w as f64).ln()).sum();
    (s / widths.len() as f64).exp()
}

/// ReLU networks: `k(d−1)(1 + log(k̄/k)) + k(1 + log(1/(τ√μ̲))) + log(1/δ)`.
pub fn complexity_relu(
    k: usize,
    d: usize,
    widths: &[usize],
    tau: f64,
    delta: f64,
    mu_min: f64,
    lambda: f64,
    constant: f64,
) -> Result<ComplexityBudget> {
    let inputs = ComplexityInputs {
        tau,
        delta,
        mu_min,
        lambda,
        k: Some(k),
        d: Some(d),
        widths: Some(widths.to_vec()),
        ..Default::default()
    };
    check_common(&inputs, constant)?;
    if k == 0 || d < 2 {
        return Err(invalid("need k >= 1 and d >= 2"));
    }
    if widths.len() != d - 1 || widths.iter().any(|&w| w < k) {
        return Err(invalid("need d − 1 hidden widths, each at least k"));
    }
    let (kf, df) = (k as f64, d as f64);
    let kbar = mean_width(widths);
    let bracket = kf * (df - 1.0) * (1.0 + (kbar / kf).ln())
        + kf * (1.0 + (1.0 / (tau * mu_min.sqrt())).ln())
        + (1.0 / delta).ln();
    Ok(finish(Regime::Relu, inputs, constant, bracket, None))
}

/// Lipschitz generators: `k log(1 + LR/(ξτ√μ̲)) + log(1/δ)`.
#[allow(clippy::too_many_arguments)]
pub fn complexity_lipschitz(
    k: usize,
    lipschitz: f64,
    radius: f64,
    xi: f64,
    tau: f64,
    delta: f64,
    mu_min: f64,
    lambda: f64,
    constant: f64,
) -> Result<ComplexityBudget> {
    let inputs = ComplexityInputs {
        tau,
        delta,
        mu_min,
        lambda,
        k: Some(k),
        xi: Some(xi),
        lipschitz: Some(lipschitz),
        radius: Some(radius),
        ..Default::default()
    };
    check_common(&inputs, constant)?;
    if k == 0 || !(lipschitz >= 0.0) || !(radius > 0.0) || !(xi > 0.0) {
        return Err(invalid("need k >= 1, L >= 0, R > 0 and xi > 0"));
    }
    let bracket = k as f64 * (1.0 + lipschitz * radius / (xi * tau * mu_min.sqrt())).ln() + (1.0 / delta).ln();
    let q = (1.0 - tau).sqrt() * xi;
    Ok(finish(Regime::Lipschitz, inputs, constant, bracket, Some(q)))
}

/// `(N, k)`-piecewise-linear generators: `log N + k log(1 + 1/(τ√μ̲)) + log(1/δ)`.
pub fn complexity_piecewise(
    pieces: f64,
    k: usize,
    tau: f64,
    delta: f64,
    mu_min: f64,
    lambda: f64,
    constant: f64,
) -> Result<ComplexityBudget> {
    let inputs = ComplexityInputs {
        tau,
        delta,
        mu_min,
        lambda,
        k: Some(k),
        pieces: Some(pieces),
        ..Default::default()
    };
    check_common(&inputs, constant)?;
    if k == 0 || !(pieces >= 1.0) {
        return Err(invalid("need k >= 1 and N >= 1"));
    }
    let bracket = pieces.ln() + k as f64 * (1.0 + 1.0 / (tau * mu_min.sqrt())).ln() + (1.0 / delta).ln();
    Ok(finish(Regime::PiecewiseLinear, inputs, constant, bracket, None))
}

/// Union bound over a finite net: `log(2|N|/δ)`.
pub fn complexity_net(
    net_size: f64,
    tau: f64,
    delta: f64,
    mu_min: f64,
    lambda: f64,
    constant: f64,
) -> Result<ComplexityBudget> {
    let inputs = ComplexityInputs {
        tau,
        delta,
        mu_min,
        lambda,
        net_size: Some(net_size),
        ..Default::default()
    };
    check_common(&inputs, constant)?;
    if !(net_size >= 1.0) {
        return Err(invalid("net size must be at least 1"));
    }
    let bracket = (2.0 * net_size / delta).ln();
    Ok(finish(Regime::NetBased, inputs, constant, bracket, None))
}

/// Dispatches on `regime` using the fields of `inputs`.
pub fn complexity(regime: Regime, inputs: &ComplexityInputs, constant: f64) -> Result<ComplexityBudget> {
    let x = inputs;
    match regime {
        Regime::Relu => {
            let widths = x.widths.clone().ok_or_else(|| invalid("missing input `widths`"))?;
            let d = x.d.unwrap_or(widths.len() + 1);
            complexity_relu(need(x.k, "k")?, d, &widths, x.tau, x.delta, x.mu_min, x.lambda, constant)
        }
        Regime::Lipschitz => complexity_lipschitz(
            need(x.k, "k")?,
            need(x.lipschitz, "lipschitz")?,
            need(x.radius, "radius")?,
            need(x.xi, "xi")?,
            x.tau,
            x.delta,
            x.mu_min,
            x.lambda,
            constant,
        ),
        Regime::PiecewiseLinear => complexity_piecewise(
            need(x.pieces, "pieces")?,
            need(x.k, "k")?,
            x.tau,
            x.delta,
            x.mu_min,
            x.lambda,
            constant,
        ),
        Regime::NetBased => complexity_net(need(x.net_size, "net_size")?, x.tau, x.delta, x.mu_min, x.lambda, constant),
    }
}
