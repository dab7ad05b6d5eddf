//! Latent least-squares recovery over a recovery prompt and the
//! prompt-mismatched error bound.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::generators::{ConditionId, ConditionalGenerator, LatentLaw};
use crate::linalg;
use crate::measurement::{adjoint, apply, operator_matrix, zero_filled_image, MeasurementPlan, Measurements};
use crate::rng;
use crate::signals::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

/// `Plain` is projected gradient descent; `Adaptive` divides each coordinate
/// by the root of a running mean of squared gradients (no momentum).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Plain,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "latent")]
pub enum InitMode {
    ZeroFilled,
    Random,
    Provided(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub max_steps: usize,
    pub base_lr: f64,
    pub lr_schedule: LrSchedule,
    pub grad_clip: f64,
    pub patience: usize,
    pub restarts: usize,
    pub init: InitMode,
    /// Relative objective improvement below which a step counts as stagnant.
    pub tolerance: f64,
    pub step_rule: StepRule,
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            base_lr: 1e-2,
            lr_schedule: LrSchedule::Cosine,
            grad_clip: 1.0,
            patience: 35,
            restarts: 4,
            init: InitMode::ZeroFilled,
            tolerance: 1e-6,
            step_rule: StepRule::Plain,
            seed: 0,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.restarts == 0 || self.patience == 0 {
            return Err(invalid("max_steps, restarts and patience must be positive"));
        }
        if self.patience > self.max_steps {
            return Err(invalid("patience cannot exceed max_steps"));
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("grad_clip", self.grad_clip),
            ("tolerance", self.tolerance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    fn lr(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.base_lr,
            LrSchedule::Cosine => {
                let t = step as f64 / self.max_steps as f64;
                0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub z_hat: Vec<f64>,
    pub f_hat: Signal,
    /// Objective `(1/(2Cm))‖A G(ẑ) − y‖²` at the returned latent.
    pub residual: f64,
    /// Largest final residual over restarts minus the returned residual.
    pub omega_gap: f64,
    pub steps_used: usize,
    pub restart_index: usize,
    pub restart_residuals: Vec<f64>,
}

impl RecoveryResult {
    /// JSON record with the configuration echoed for replay.
    pub fn to_json(&self, cfg: &RecoveryConfig, c_r: &ConditionId) -> serde_json::Value {
        serde_json::json!({
            "condition": c_r,
            "z_hat": self.z_hat,
            "f_hat": self.f_hat.real_part(),
            "residual": self.residual,
            "omega_gap": self.omega_gap,
            "steps_used": self.steps_used,
            "restart_index": self.restart_index,
            "restart_residuals": self.restart_residuals,
            "config": cfg,
        })
    }
}

struct Problem<'a, G: ConditionalGenerator + ?Sized> {
    g: &'a G,
    c: &'a ConditionId,
    plan: &'a MeasurementPlan,
    y: &'a Measurements,
}

impl<G: ConditionalGenerator + ?Sized> Problem<'_, G> {
    fn norm_const(&self) -> f64 {
        (self.plan.channels * self.plan.m()) as f64
    }

    fn signal(&self, z: &[f64]) -> Result<Signal> {
        self.g.generate(z, self.c)
    }

    fn residual_vec(&self, z: &[f64]) -> Result<Measurements> {
        let af = apply(self.plan, &self.signal(z)?)?;
        let r: Vec<Complex64> = af.y.iter().zip(&self.y.y).map(|(a, b)| a - b).collect();
        Ok(Measurements {
            y: r,
            channels: self.y.channels,
            noise_norm: None,
        })
    }

    fn objective(&self, z: &[f64]) -> Result<f64> {
        let r = self.residual_vec(z)?;
        Ok(r.norm().powi(2) / (2.0 * self.norm_const()))
    }

    fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.residual_vec(z)?;
        let obj = r.norm().powi(2) / (2.0 * self.norm_const());
        let back = adjoint(self.plan, &r)?.real_part();
        let mut grad = self.g.vjp(z, self.c, &back)?;
        let s = 1.0 / self.norm_const();
        grad.iter_mut().for_each(|v| *v *= s);
        Ok((obj, grad))
    }
}

/// Best-of-restarts projected gradient descent on
/// `(1/(2Cm))‖A_Ω G(z, c_r) − y‖²` over `‖z‖ ≤ R`.
pub fn recover<G: ConditionalGenerator + ?Sized>(
    g: &G,
    c_r: &ConditionId,
    plan: &MeasurementPlan,
    y: &Measurements,
    cfg: &RecoveryConfig,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    if !g.has_condition(c_r) {
        return Err(Error::UnknownCondition(c_r.to_string()));
    }
    if plan.channels != g.channels() || plan.n != g.per_channel_len() {
        return Err(invalid("plan does not match the generator's signal shape"));
    }
    if y.channels != plan.channels || y.y.len() != plan.measurement_len() {
        return Err(invalid("measurements do not match the plan"));
    }
    let p = Problem { g, c: c_r, plan, y };
    let ball = g.latent_ball();
    let mut runs = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let z0 = initial_latent(&p, cfg, restart)?;
        if !ball.contains(&z0) || z0.len() != ball.dim {
            return Err(invalid("initial latent lies outside the latent ball"));
        }
        runs.push(descend(&p, cfg, z0, restart)?);
    }
    // Minimum residual, lowest restart index on ties.
    let (best_idx, _) = runs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, r)| if r.1 < acc.1 { (i, r.1) } else { acc });
    let restart_residuals: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let worst = restart_residuals.iter().cloned().fold(0.0, f64::max);
    let (z_hat, residual, steps_used) = runs.swap_remove(best_idx);
    Ok(RecoveryResult {
        f_hat: p.signal(&z_hat)?,
        z_hat,
        residual,
        omega_gap: worst - residual,
        steps_used,
        restart_index: best_idx,
        restart_residuals,
    })
}

fn initial_latent<G: ConditionalGenerator + ?Sized>(
    p: &Problem<'_, G>,
    cfg: &RecoveryConfig,
    restart: usize,
) -> Result<Vec<f64>> {
    let ball = p.g.latent_ball();
    let mut r = rng::derived_stream(cfg.seed, rng::purpose::RESTART, restart as u64);
    let random = LatentLaw::ClippedNormal.sample(&ball, &mut r);
    if restart > 0 {
        return Ok(random);
    }
    match &cfg.init {
        InitMode::Random => Ok(random),
        InitMode::Provided(z) => {
            ball.check(z)?;
            Ok(z.clone())
        }
        InitMode::ZeroFilled => {
            let zf = zero_filled_image(p.plan, p.y)?.real_part();
            if let Some(b) = p.g.linear_basis(p.c) {
                let z = linalg::ball_constrained_lstsq(b, &DVector::from_vec(zf), ball.radius);
                return Ok(z.iter().cloned().collect());
            }
            let fitted = fit_to_signal(p.g, p.c, &zf, random.clone(), 200)?;
            if p.objective(&fitted)? <= p.objective(&random)? {
                Ok(fitted)
            } else {
                Ok(random)
            }
        }
    }
}

/// Adaptive-step projected descent on `½‖G(z) − target‖²`.
fn fit_to_signal<G: ConditionalGenerator + ?Sized>(
    g: &G,
    c: &ConditionId,
    target: &[f64],
    mut z: Vec<f64>,
    steps: usize,
) -> Result<Vec<f64>> {
    let ball = g.latent_ball();
    let mut v = vec![0.0; z.len()];
    for t in 1..=steps {
        let out = g.forward(&z, c)?;
        let r: Vec<f64> = out.iter().zip(target).map(|(a, b)| a - b).collect();
        let grad = g.vjp(&z, c, &r)?;
        let lr = 0.05 * ball.radius / (1.0 + t as f64 / 50.0);
        for i in 0..z.len() {
            v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
            let vhat = v[i] / (1.0 - 0.999f64.powi(t as i32));
            z[i] -= lr * grad[i] / (vhat.sqrt() + 1e-12);
        }
        ball.project(&mut z);
    }
    Ok(z)
}

/// One restart; returns (best latent, its objective, steps taken).
fn descend<G: ConditionalGenerator + ?Sized>(
    p: &Problem<'_, G>,
    cfg: &RecoveryConfig,
    mut z: Vec<f64>,
    restart: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let ball = p.g.latent_ball();
    let (mut obj, mut grad) = p.value_and_grad(&z)?;
    if !obj.is_finite() {
        return Err(Error::Divergence {
            restart,
            step: 0,
            objective: obj,
        });
    }
    let mut best = (z.clone(), obj);
    let mut stagnant = 0;
    let mut second = vec![0.0; z.len()];
    let mut steps = 0;
    for step in 0..cfg.max_steps {
        if obj == 0.0 {
            break;
        }
        let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn > cfg.grad_clip {
            let s = cfg.grad_clip / gn;
            grad.iter_mut().for_each(|v| *v *= s);
        }
        let lr = cfg.lr(step);
        match cfg.step_rule {
            StepRule::Plain => {
                for (zi, gi) in z.iter_mut().zip(&grad) {
                    *zi -= lr * gi;
                }
            }
            StepRule::Adaptive => {
                let t = (step + 1) as i32;
                for i in 0..z.len() {
                    second[i] = 0.999 * second[i] + 0.001 * grad[i] * grad[i];
                    let vhat = second[i] / (1.0 - 0.999f64.powi(t));
                    z[i] -= lr * grad[i] / (vhat.sqrt() + 1e-12);
                }
            }
        }
        ball.project(&mut z);
        steps = step + 1;
        let (o, g) = p.value_and_grad(&z)?;
        if !o.is_finite() {
            return Err(Error::Divergence {
                restart,
                step: steps,
                objective: o,
            });
        }
        obj = o;
        grad = g;
        if obj < best.1 * (1.0 - cfg.tolerance) {
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if obj < best.1 {
            best = (z.clone(), obj);
        }
        if stagnant >= cfg.patience {
            break;
        }
    }
    Ok((best.0, best.1, steps))
}

/// Recovery objective at a given latent.
pub fn objective<G: ConditionalGenerator + ?Sized>(
    g: &G,
    c_r: &ConditionId,
    plan: &MeasurementPlan,
    y: &Measurements,
    z: &[f64],
) -> Result<f64> {
    Problem { g, c: c_r, plan, y }.objective(z)
}

/// Returned residual minus the objective at a planted latent `z*`.
pub fn planted_gap<G: ConditionalGenerator + ?Sized>(
    g: &G,
    c_r: &ConditionId,
    plan: &MeasurementPlan,
    y: &Measurements,
    result: &RecoveryResult,
    z_star: &[f64],
) -> Result<f64> {
    Ok(result.residual - objective(g, c_r, plan, y, z_star)?)
}

/// `ω = ‖y − A f̂‖ − min_{f ∈ F_{c_r}} ‖y − A f‖` for a linear recovery class,
/// with the minimum solved exactly over the latent ball.
pub fn measurement_omega<G: ConditionalGenerator + ?Sized>(
    g: &G,
    c_r: &ConditionId,
    plan: &MeasurementPlan,
    y: &Measurements,
    f_hat: &Signal,
) -> Result<f64> {
    let b = g
        .linear_basis(c_r)
        .ok_or_else(|| invalid("exact ω needs a linear recovery class"))?;
    let a = operator_matrix(plan, b)?;
    let ys = linalg::stack_complex_vec(&y.y);
    let z = linalg::ball_constrained_lstsq(&a, &ys, g.radius());
    let best = (&a * z - &ys).norm();
    let af = apply(plan, f_hat)?;
    let achieved = af.y.iter().zip(&y.y).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
    Ok((achieved - best).max(0.0))
}

/// `(1 + 2√Λ/γ)·approx + (2‖e‖ + ω + q)/γ`.
pub fn recovery_bound(
    lambda_star: f64,
    gamma: f64,
    q: f64,
    approx_error: f64,
    noise_norm: f64,
    omega: f64,
) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(invalid("gamma must be positive"));
    }
    for (name, v) in [
        ("lambda", lambda_star),
        ("q", q),
        ("approximation error", approx_error),
        ("noise norm", noise_norm),
        ("omega", omega),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(invalid(format!("{name} must be finite and nonnegative")));
        }
    }
    Ok((1.0 + 2.0 * lambda_star.sqrt() / gamma) * approx_error + (2.0 * noise_norm + omega + q) / gamma)
}

/// Budget for the nonlinear branch of [`approximation_error`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproxBudget {
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ApproxBudget {
    fn default() -> Self {
        Self {
            restarts: 8,
            iterations: 100,
            seed: 0,
        }
    }
}

/// `inf_{f ∈ F_{c_r}} ‖f* − f‖₂`: exact for linear classes, an upper estimate
/// from multi-restart Gauss-Newton otherwise.
pub fn approximation_error<G: ConditionalGenerator + ?Sized>(
    g: &G,
    c_r: &ConditionId,
    f_star: &Signal,
    budget: ApproxBudget,
) -> Result<f64> {
    if !g.has_condition(c_r) {
        return Err(Error::UnknownCondition(c_r.to_string()));
    }
    if f_star.channels() != g.channels() || f_star.per_channel_len() != g.per_channel_len() {
        return Err(invalid("target does not match the generator's signal shape"));
    }
    // The class is real, so the imaginary part is orthogonal to it.
    let im2: f64 = f_star.data().iter().map(|v| v.im * v.im).sum();
    let target = DVector::from_vec(f_star.real_part());
    if let Some(b) = g.linear_basis(c_r) {
        let z = linalg::ball_constrained_lstsq(b, &target, g.radius());
        let r2 = (b * z - &target).norm_squared();
        return Ok((r2 + im2).sqrt());
    }
    let ball = g.latent_ball();
    let mut best = f64::INFINITY;
    for restart in 0..budget.restarts.max(1) {
        let mut r = rng::derived_stream(budget.seed, rng::purpose::RESTART, restart as u64);
        let mut z = if restart == 0 {
            vec![0.0; ball.dim]
        } else {
            LatentLaw::ClippedNormal.sample(&ball, &mut r)
        };
        let resid = |z: &[f64]| -> Result<f64> {
            let out = DVector::from_vec(g.forward(z, c_r)?);
            Ok((out - &target).norm())
        };
        let mut cur = resid(&z)?;
        for _ in 0..budget.iterations {
            let out = DVector::from_vec(g.forward(&z, c_r)?);
            let j: DMatrix<f64> = g.jacobian(&z, c_r)?;
            let delta = linalg::ball_constrained_lstsq(&j, &(&target - out), 2.0 * ball.radius);
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-6 {
                let mut cand: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, d)| a + t * d).collect();
                ball.project(&mut cand);
                let v = resid(&cand)?;
                if v < cur {
                    z = cand;
                    cur = v;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        best = best.min(cur);
    }
    Ok((best * best + im2).sqrt())
}
