//! Upper bounds on `dist(0, ∂_σ f(x))`.
//!
//! Two estimators are provided. [`averaged_gradient`] is the norm of the mean of
//! `T` perturbed stochastic gradients, the certificate used for post-selection in
//! the multi-run plan. [`goldstein_upper_bound`] takes the minimum-norm element of
//! the convex hull of perturbed gradients; it is only valid for deterministic
//! objectives, where every sampled gradient lies in `∂_σ f(x)`.
//! Neither computes the distance exactly.

use serde::{Deserialize, Serialize};

use crate::ball::{l2_norm, sample_ball_into};
use crate::error::{invalid, Error, Result};
use crate::objective::{Sample, StochasticObjective};
use crate::rng::{Domain, SeedTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub mean_grad: Vec<f64>,
    pub norm: f64,
    pub samples_used: usize,
    pub radius: f64,
}

/// A fixed draw of `(z_t, ξ_t)`, `t = 1..T`, reusable across candidate points.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    radius: f64,
    perturbations: Vec<Vec<f64>>,
    samples: Vec<Sample>,
}

impl PerturbationSet {
    pub fn draw<O: StochasticObjective + ?Sized>(obj: &O, radius: f64, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(invalid("samples", "must be at least 1"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("radius", format!("must be positive, got {radius}")));
        }
        let tree = SeedTree::new(seed);
        let d = obj.dim();
        let mut perturbations = Vec::with_capacity(count);
        let mut samples = Vec::with_capacity(count);
        for t in 0..count as u64 {
            let mut z = vec![0.0; d];
            sample_ball_into(&mut tree.stream(Domain::Certificate, 0, t), radius, &mut z);
            perturbations.push(z);
            samples.push(obj.sample_xi(&mut tree.stream(Domain::Certificate, 1, t)));
        }
        Ok(Self {
            radius,
            perturbations,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `∇̃F(x + z_t, ξ_t)` for every `t`, in order.
    pub fn gradients<O: StochasticObjective + ?Sized>(&self, obj: &O, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != obj.dim() {
            return Err(Error::DimensionMismatch {
                expected: obj.dim(),
                got: x.len(),
            });
        }
        let mut w = vec![0.0; x.len()];
        Ok(self
            .perturbations
            .iter()
            .zip(&self.samples)
            .map(|(z, &xi)| {
                for j in 0..x.len() {
                    w[j] = x[j] + z[j];
                }
                let mut g = vec![0.0; x.len()];
                obj.approx_grad(&w, xi, &mut g);
                g
            })
            .collect())
    }

    pub fn averaged_gradient<O: StochasticObjective + ?Sized>(&self, obj: &O, x: &[f64]) -> Result<GradientEstimate> {
        let grads = self.gradients(obj, x)?;
        let mut mean = vec![0.0; x.len()];
        for g in &grads {
            for (m, gi) in mean.iter_mut().zip(g) {
                *m += gi;
            }
        }
        let inv = 1.0 / grads.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        Ok(GradientEstimate {
            norm: l2_norm(&mean),
            mean_grad: mean,
            samples_used: grads.len(),
            radius: self.radius,
        })
    }
}

/// `∇̄F_T(x) = (1/T) Σ_t ∇̃F(x + z_t, ξ_t)` with fresh samples from `seed`.
pub fn averaged_gradient<O: StochasticObjective + ?Sized>(
    obj: &O,
    x: &[f64],
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<GradientEstimate> {
    PerturbationSet::draw(obj, radius, samples, seed)?.averaged_gradient(obj, x)
}

/// Candidate with the smallest `‖∇̄F_T‖`, every candidate scored on the same `T` samples.
/// Ties go to the lowest index.
pub fn select_best<O: StochasticObjective + ?Sized>(
    candidates: &[Vec<f64>],
    obj: &O,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<(usize, GradientEstimate)> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidates to select from"));
    }
    let set = PerturbationSet::draw(obj, radius, samples, seed)?;
    let mut best: Option<(usize, GradientEstimate)> = None;
    for (i, x) in candidates.iter().enumerate() {
        let est = set.averaged_gradient(obj, x)?;
        if best.as_ref().map_or(true, |(_, b)| est.norm < b.norm) {
            best = Some((i, est));
        }
    }
    Ok(best.expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinNormPoint {
    pub point: Vec<f64>,
    pub norm: f64,
    /// Convex weights over the input vectors.
    pub weights: Vec<f64>,
    /// Frank–Wolfe duality gap at termination.
    pub gap: f64,
    pub iterations: usize,
}

pub const MIN_NORM_MAX_ITERATIONS: usize = 100_000;

/// Minimum-norm element of `conv{v_1, …, v_n}` by away-step Frank–Wolfe with exact line search.
///
/// Minimizes `½‖Vλ‖²` over the simplex and stops once the duality gap
/// `⟨p, p − v_s⟩` drops to `tol`, where `v_s` minimizes `⟨v, p⟩`.
pub fn min_norm_point(vectors: &[Vec<f64>], tol: f64) -> Result<MinNormPoint> {
    let first = vectors.first().ok_or(Error::Empty("min-norm point of no vectors"))?;
    let d = first.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("must be positive, got {tol}")));
    }
    let n = vectors.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // start at the shortest vertex
    let start = (0..n)
        .min_by(|&a, &b| dot(&vectors[a], &vectors[a]).total_cmp(&dot(&vectors[b], &vectors[b])))
        .expect("non-empty");
    let mut weights = vec![0.0; n];
    weights[start] = 1.0;
    let mut p = vectors[start].clone();
    let mut dir = vec![0.0; d];

    let mut gap = f64::INFINITY;
    for it in 0..MIN_NORM_MAX_ITERATIONS {
        let scores: Vec<f64> = vectors.iter().map(|v| dot(v, &p)).collect();
        let pp = dot(&p, &p);
        let s = (0..n).min_by(|&a, &b| scores[a].total_cmp(&scores[b])).expect("non-empty");
        gap = pp - scores[s];
        if gap <= tol {
            return Ok(finish(p, weights, gap, it));
        }
        let a = (0..n)
            .filter(|&i| weights[i] > 0.0)
            .max_by(|&x, &y| scores[x].total_cmp(&scores[y]))
            .expect("active set non-empty");
        let away_gap = scores[a] - pp;

        // FW: p ← p + γ(v_s − p), γ ∈ [0, 1]; away: p ← p + γ(p − v_a), γ ∈ [0, λ_a/(1−λ_a)]
        let (toward, vertex, gamma_max) = if gap >= away_gap || weights[a] >= 1.0 {
            (true, s, 1.0)
        } else {
            (false, a, weights[a] / (1.0 - weights[a]))
        };
        for j in 0..d {
            dir[j] = if toward {
                vectors[vertex][j] - p[j]
            } else {
                p[j] - vectors[vertex][j]
            };
        }
        let dd = dot(&dir, &dir);
        if dd == 0.0 {
            return Ok(finish(p, weights, gap, it));
        }
        let gamma = (-dot(&p, &dir) / dd).clamp(0.0, gamma_max);
        if gamma == 0.0 {
            // no descent left along either direction at working precision
            return Err(Error::NoConvergence { iterations: it, gap });
        }
        for j in 0..d {
            p[j] += gamma * dir[j];
        }
        if toward {
            weights.iter_mut().for_each(|w| *w *= 1.0 - gamma);
            weights[vertex] += gamma;
        } else {
            weights.iter_mut().for_each(|w| *w *= 1.0 + gamma);
            weights[vertex] -= gamma;
            if gamma >= gamma_max {
                weights[vertex] = 0.0;
            }
        }
        // keep p consistent with the weights to stop drift
        if it % 64 == 63 {
            recompute(vectors, &weights, &mut p);
        }
    }
    Err(Error::NoConvergence {
        iterations: MIN_NORM_MAX_ITERATIONS,
        gap,
    })
}

fn recompute(vectors: &[Vec<f64>], weights: &[f64], p: &mut [f64]) {
    p.fill(0.0);
    for (v, &w) in vectors.iter().zip(weights) {
        if w > 0.0 {
            for (pj, vj) in p.iter_mut().zip(v) {
                *pj += w * vj;
            }
        }
    }
}

fn finish(point: Vec<f64>, weights: Vec<f64>, gap: f64, iterations: usize) -> MinNormPoint {
    MinNormPoint {
        norm: l2_norm(&point),
        point,
        weights,
        gap: gap.max(0.0),
        iterations,
    }
}

pub const DEFAULT_HULL_TOL: f64 = 1e-12;

/// Min-norm point of `S` gradients sampled in `x + B(σ)` for a deterministic objective.
pub fn goldstein_upper_bound<O: StochasticObjective + ?Sized>(
    obj: &O,
    x: &[f64],
    radius: f64,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<f64> {
    let set = PerturbationSet::draw(obj, radius, samples, seed)?;
    goldstein_bound_with(obj, x, &set, tol)
}

/// [`goldstein_upper_bound`] on a given sample set.
pub fn goldstein_bound_with<O: StochasticObjective + ?Sized>(
    obj: &O,
    x: &[f64],
    set: &PerturbationSet,
    tol: f64,
) -> Result<f64> {
    if !obj.is_deterministic() {
        return Err(Error::NotDeterministic("the convex-hull stationarity bound"));
    }
    let grads = set.gradients(obj, x)?;
    Ok(min_norm_point(&grads, tol)?.norm)
}
