//! Closed-form parameter selection: the `(S, σ, η)` schedule for a given `(K, β)`,
//! the guaranteed stationarity level, gradient-call counts, the iteration-optimal
//! `(K*, β*)`, the multi-run high-probability plan and the increasing-`K` schedule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optimizer::PisgdConfig;

/// Relative distance to an integer under which `ceil`/`floor` snap to it.
const INTEGER_SNAP: f64 = 1e-12;

fn snap(x: f64) -> Option<f64> {
    let r = x.round();
    ((x - r).abs() <= INTEGER_SNAP * x.abs().max(1.0)).then_some(r)
}

/// `⌈x⌉`, treating values within rounding noise of an integer as that integer.
pub(crate) fn ceil_snapped(x: f64) -> f64 {
    snap(x).unwrap_or_else(|| x.ceil())
}

/// `⌊x⌋`, treating values within rounding noise of an integer as that integer.
pub(crate) fn floor_snapped(x: f64) -> f64 {
    snap(x).unwrap_or_else(|| x.floor())
}

/// Problem constants the planner works from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// `L0 = E[C(ξ)]`
    pub l0: f64,
    /// `Q = E[C(ξ)²]`
    pub q: f64,
    /// `Δ ≥ f(x¹) − f(x*)`
    pub delta: f64,
    /// `d`
    pub dim: usize,
    /// `θ`
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_theta() -> f64 {
    1.0
}

impl ProblemConstants {
    pub fn new(l0: f64, q: f64, delta: f64, dim: usize) -> Result<Self> {
        let c = Self {
            l0,
            q,
            delta,
            dim,
            theta: 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        self.theta = theta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("l0", self.l0)?;
        positive("q", self.q)?;
        positive("delta", self.delta)?;
        positive("theta", self.theta)?;
        if self.dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        crate::objective::check_moments(self.l0, self.q)
    }

    fn sqrt_d(&self) -> f64 {
        (self.dim as f64).sqrt()
    }
}

/// `(S, σ, η)` for a run of `K` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub batch: usize,
    pub radius: f64,
    pub step: f64,
}

fn check_k_beta(k: usize, beta: f64) -> Result<()> {
    if k == 0 {
        return Err(invalid("k_total", "must be at least 1"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta", format!("must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// `S = ⌈K^{1−β}⌉`, `σ = θ√d·K^{−β}`, `η = (θ/L0)·K^{−β}`.
pub fn theorem_schedule(k: usize, beta: f64, consts: &ProblemConstants) -> Result<Schedule> {
    check_k_beta(k, beta)?;
    consts.validate()?;
    let kf = k as f64;
    let shrink = kf.powf(-beta);
    Ok(Schedule {
        batch: ceil_snapped(kf.powf(1.0 - beta)) as usize,
        radius: consts.theta * consts.sqrt_d() * shrink,
        step: consts.theta / consts.l0 * shrink,
    })
}

/// Upper bound on `E[dist(0, ∂_σ f(x^R))]` after a run with [`theorem_schedule`]:
/// `K^{(β−1)/2} √(2(L0Δ/θ + L0²√d·K^{−β} + Q))`.
pub fn bound_rhs(k: usize, beta: f64, consts: &ProblemConstants) -> Result<f64> {
    check_k_beta(k, beta)?;
    consts.validate()?;
    Ok(bound_value(k as f64, beta, consts))
}

pub(crate) fn bound_value(k: f64, beta: f64, c: &ProblemConstants) -> f64 {
    let inner = c.l0 * c.delta / c.theta + c.l0 * c.l0 * c.sqrt_d() * k.powf(-beta) + c.q;
    k.powf((beta - 1.0) / 2.0) * (2.0 * inner).sqrt()
}

/// Iteration counts meeting each tolerance separately at a fixed `β`, and the gradient calls they cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub k_eps1: u64,
    pub k_eps2: u64,
    pub calls_eps1: u128,
    pub calls_eps2: u128,
}

impl ComplexityEstimate {
    pub fn gradient_calls(&self) -> u128 {
        self.calls_eps1.max(self.calls_eps2)
    }
}

/// Gradient calls `(K−1)⌈K^{1−β}⌉` sufficient for an expected `(ε1, ε2)`-stationary point at a fixed `β`.
pub fn complexity_estimate(eps1: f64, eps2: f64, beta: f64, consts: &ProblemConstants) -> Result<ComplexityEstimate> {
    check_tolerances(eps1, eps2)?;
    check_k_beta(1, beta)?;
    consts.validate()?;
    let c = consts;
    let k1 = ceil_snapped((c.theta * c.sqrt_d() / eps1).powf(1.0 / beta)).max(1.0);
    let base2 = 2.0 / (eps2 * eps2) * (c.l0 * c.delta / c.theta + c.l0 * c.l0 * c.sqrt_d() + c.q);
    let k2 = ceil_snapped(base2.powf(1.0 / (1.0 - beta))).max(1.0);
    if !(k1 < 1e30 && k2 < 1e30) {
        return Err(Error::Infeasible(format!(
            "iteration counts overflow (K_eps1 = {k1:e}, K_eps2 = {k2:e})"
        )));
    }
    let calls = |k: f64| -> u128 {
        let s = ceil_snapped(k.powf(1.0 - beta));
        (k as u128 - 1) * s as u128
    };
    Ok(ComplexityEstimate {
        k_eps1: k1 as u64,
        k_eps2: k2 as u64,
        calls_eps1: calls(k1),
        calls_eps2: calls(k2),
    })
}

fn check_tolerances(eps1: f64, eps2: f64) -> Result<()> {
    if !(eps1 > 0.0 && eps1.is_finite()) {
        return Err(invalid("eps1", format!("must be positive, got {eps1}")));
    }
    if !(eps2 > 0.0 && eps2.is_finite()) {
        return Err(invalid("eps2", format!("must be positive, got {eps2}")));
    }
    Ok(())
}

/// Iteration-minimal `(K*, β*)` with `θ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalPlan {
    pub k_total: usize,
    pub beta: f64,
}

impl OptimalPlan {
    pub fn schedule(&self, consts: &ProblemConstants) -> Result<Schedule> {
        theorem_schedule(self.k_total, self.beta, &unit_theta(consts))
    }

    pub fn gradient_calls(&self) -> u128 {
        let s = ceil_snapped((self.k_total as f64).powf(1.0 - self.beta)) as u128;
        (self.k_total as u128 - 1) * s
    }
}

fn unit_theta(c: &ProblemConstants) -> ProblemConstants {
    ProblemConstants { theta: 1.0, ..*c }
}

/// Smallest `K` (and the largest admissible `β` for it) such that `σ ≤ ε1` and the
/// bound of [`bound_rhs`] is at most `ε2`. Requires `ε2 < L0`.
pub fn optimal_plan(eps1: f64, eps2: f64, consts: &ProblemConstants) -> Result<OptimalPlan> {
    check_tolerances(eps1, eps2)?;
    consts.validate()?;
    let c = consts;
    if eps2 >= c.l0 {
        return Err(Error::Infeasible(format!(
            "eps2 = {eps2} is not below L0 = {}: every point is an (eps1, L0)-stationary point",
            c.l0
        )));
    }
    let sd = c.sqrt_d();
    let a = c.l0 * c.delta + c.q;
    let e2 = eps2 * eps2;
    let k_g = floor_snapped(2.0 / e2 * (a + sd * c.l0 * c.l0) + 1.0);
    let k_l = ceil_snapped(2.0 * sd / e2 * (a / eps1 + c.l0 * c.l0));
    let k = k_g.max(k_l);
    if !(k.is_finite() && k < usize::MAX as f64) {
        return Err(Error::Infeasible(format!("K* = {k:e} is not representable")));
    }
    let beta = ((k * e2 - 2.0 * sd * c.l0 * c.l0).ln() - (2.0 * a).ln()) / k.ln();
    let tol = 1e-12;
    if !(beta > -tol && beta < 1.0 + tol) || beta.is_nan() {
        return Err(Error::Infeasible(format!(
            "beta* = {beta} falls outside (0, 1); check the problem constants"
        )));
    }
    Ok(OptimalPlan {
        k_total: k as usize,
        beta: beta.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON),
    })
}

/// Multi-run plan returning an `(ε1, ε2)`-stationary point with probability `1 − γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighProbPlan {
    /// Number of independent runs `𝓡 = ⌈−ln(cγ)⌉`.
    pub runs: usize,
    /// `T`, samples shared by all candidates during selection.
    pub validation_samples: usize,
    pub psi: f64,
    /// `ε2′`, the expected-stationarity target of each run.
    pub eps2_inner: f64,
    pub k_total: usize,
    pub beta: f64,
    pub c: f64,
    pub phi: f64,
    pub gamma: f64,
}

impl HighProbPlan {
    pub fn schedule(&self, consts: &ProblemConstants) -> Result<Schedule> {
        theorem_schedule(self.k_total, self.beta, &unit_theta(consts))
    }

    /// Total gradient calls: every run's `(K−1)S` plus `T` per candidate during selection.
    pub fn gradient_calls(&self) -> u128 {
        let s = ceil_snapped((self.k_total as f64).powf(1.0 - self.beta)) as u128;
        let per_run = (self.k_total as u128 - 1) * s;
        self.runs as u128 * (per_run + self.validation_samples as u128)
    }
}

pub const DEFAULT_C: f64 = 0.5;
pub const DEFAULT_PHI: f64 = 2.0;

pub fn high_prob_plan(
    eps1: f64,
    eps2: f64,
    gamma: f64,
    c: f64,
    phi: f64,
    consts: &ProblemConstants,
) -> Result<HighProbPlan> {
    check_tolerances(eps1, eps2)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(invalid("c", format!("must lie in (0, 1), got {c}")));
    }
    if !(phi > 1.0 && phi.is_finite()) {
        return Err(invalid("phi", format!("must exceed 1, got {phi}")));
    }
    consts.validate()?;
    let runs = ceil_snapped(-(c * gamma).ln()).max(1.0);
    let psi = (runs + 1.0) / ((1.0 - c) * gamma);
    let e2 = eps2 * eps2;
    let t = ceil_snapped(6.0 * phi * psi * consts.q / e2);
    let slack = e2 - 6.0 * psi * consts.q / t;
    if slack <= 0.0 {
        return Err(Error::Infeasible(format!(
            "validation budget leaves no room for the inner tolerance (eps2² − 6ψQ/T = {slack})"
        )));
    }
    let eps2_inner = (slack / (4.0 * std::f64::consts::E)).sqrt();
    let inner = optimal_plan(eps1, eps2_inner, consts).map_err(|e| match e {
        Error::Infeasible(msg) => Error::Infeasible(format!("inner tolerance eps2' = {eps2_inner}: {msg}")),
        other => other,
    })?;
    Ok(HighProbPlan {
        runs: runs as usize,
        validation_samples: t as usize,
        psi,
        eps2_inner,
        k_total: inner.k_total,
        beta: inner.beta,
        c,
        phi,
        gamma,
    })
}

/// `i`-th member of a strictly increasing sequence of runs with fixed `(β, θ)`.
///
/// `K_i = ⌈base_k·growth^{i−1}⌉`, bumped to `K_{i−1} + 1` where rounding would repeat a value.
pub fn asymptotic_schedule(
    i: usize,
    base_k: usize,
    growth: f64,
    beta: f64,
    consts: &ProblemConstants,
    seed: u64,
) -> Result<PisgdConfig> {
    if i == 0 {
        return Err(invalid("i", "indices start at 1"));
    }
    if base_k == 0 {
        return Err(invalid("base_k", "must be at least 1"));
    }
    if !(growth > 1.0 && growth.is_finite()) {
        return Err(invalid("growth", format!("must exceed 1, got {growth}")));
    }
    let mut k = base_k;
    for j in 2..=i {
        let target = ceil_snapped(base_k as f64 * growth.powi(j as i32 - 1));
        if !(target < usize::MAX as f64) {
            return Err(Error::Infeasible(format!("K_{j} overflows")));
        }
        k = (target as usize).max(k + 1);
    }
    let s = theorem_schedule(k, beta, consts)?;
    PisgdConfig::new(k, s.batch, s.step, s.radius, seed)
}
