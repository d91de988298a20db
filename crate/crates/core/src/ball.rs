//! Uniform sampling on the Euclidean ball `B(σ) ⊂ ℝᵈ` and its analytic constants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};

use crate::error::{invalid, Result};
use crate::rng::{Domain, SeedTree};

/// Seeded stream of points drawn uniformly from `B(radius)`.
#[derive(Debug, Clone)]
pub struct BallSampler {
    dim: usize,
    radius: f64,
    rng: ChaCha8Rng,
}

impl BallSampler {
    pub fn new(dim: usize, radius: f64, seed: u64) -> Result<Self> {
        Self::from_rng(dim, radius, SeedTree::new(seed).stream(Domain::Sampler, 0, 0))
    }

    pub fn from_rng(dim: usize, radius: f64, rng: ChaCha8Rng) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("radius", format!("must be positive and finite, got {radius}")));
        }
        Ok(Self { dim, radius, rng })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn sample(&mut self) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        self.sample_into(&mut z);
        z
    }

    pub fn sample_into(&mut self, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim);
        sample_ball_into(&mut self.rng, self.radius, out);
    }
}

/// Fills `out` with a uniform draw from `B(radius)` in `out.len()` dimensions.
///
/// Gaussian direction scaled by `radius · U^{1/d}`. The returned vector always
/// satisfies `‖z‖₂ ≤ radius` in floating point.
pub fn sample_ball_into<R: Rng + ?Sized>(rng: &mut R, radius: f64, out: &mut [f64]) {
    let d = out.len();
    let norm = loop {
        let mut s = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            s += *v * *v;
        }
        if s > 0.0 {
            break s.sqrt();
        }
    };
    let u: f64 = rng.sample(Open01);
    let r = radius * u.powf(1.0 / d as f64);
    let scale = r / norm;
    for v in out.iter_mut() {
        *v *= scale;
    }
    // rounding can push the norm a few ulps past the radius when U^{1/d} ≈ 1
    while l2_norm(out) > radius {
        for v in out.iter_mut() {
            *v *= 1.0 - f64::EPSILON;
        }
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `E‖z‖₂ = σd/(d+1)` for `z ~ U(B(σ))`.
pub fn expected_norm(dim: usize, radius: f64) -> f64 {
    let d = dim as f64;
    radius * d / (d + 1.0)
}

/// `ln Γ(d/2 + 1)` through the factorial / double-factorial identities.
fn ln_gamma_half_plus_one(dim: usize) -> f64 {
    if dim % 2 == 0 {
        (1..=dim / 2).map(|i| (i as f64).ln()).sum()
    } else {
        let ln_double_fact: f64 = (1..=dim).rev().step_by(2).map(|i| (i as f64).ln()).sum();
        -((dim + 1) as f64 / 2.0) * std::f64::consts::LN_2
            + 0.5 * std::f64::consts::PI.ln()
            + ln_double_fact
    }
}

/// Density of `U(B(σ))` inside the ball, `Γ(d/2+1)/(√π σ)^d`, evaluated in the log domain.
pub fn ball_density_constant(dim: usize, radius: f64) -> f64 {
    assert!(dim >= 1 && radius > 0.0);
    let ln_den = dim as f64 * (std::f64::consts::PI.sqrt() * radius).ln();
    (ln_gamma_half_plus_one(dim) - ln_den).exp()
}

/// `λ(d)·d!!/(d−1)!!` with `λ(d) = 2/π` for even `d` and `1` for odd `d`.
///
/// Built from successive ratios `(j)/(j−1)` so neither double factorial is formed.
pub fn double_factorial_ratio(dim: usize) -> f64 {
    assert!(dim >= 1);
    let (mut ratio, start) = if dim % 2 == 1 {
        (1.0, 3)
    } else {
        (4.0 / std::f64::consts::PI, 4)
    };
    let mut j = start;
    while j <= dim {
        ratio *= j as f64 / (j - 1) as f64;
        j += 2;
    }
    ratio
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ball volume by the two-step recurrence `V_d = V_{d−2}·2πσ²/d`.
    fn volume_by_recurrence(dim: usize, radius: f64) -> f64 {
        let (mut v, mut d) = if dim % 2 == 0 { (1.0, 0) } else { (2.0 * radius, 1) };
        while d < dim {
            d += 2;
            v *= 2.0 * std::f64::consts::PI * radius * radius / d as f64;
        }
        v
    }

    #[test]
    fn expected_norm_values() {
        assert_eq!(expected_norm(1, 1.0), 0.5);
        assert_eq!(expected_norm(2, 3.0), 2.0);
        assert!((expected_norm(10, 0.5) - 5.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn density_constant_values() {
        assert!((ball_density_constant(1, 1.0) - 0.5).abs() < 1e-14);
        assert!((ball_density_constant(2, 1.0) - 1.0 / std::f64::consts::PI).abs() < 1e-14);
        let expected = 3.0 / (32.0 * std::f64::consts::PI);
        assert!((ball_density_constant(3, 2.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn density_times_volume_is_one() {
        for d in 1..=60 {
            for r in [0.3, 1.0, 1.7] {
                let p = ball_density_constant(d, r) * volume_by_recurrence(d, r);
                assert!((p - 1.0).abs() < 1e-12, "d={d} r={r} p={p}");
            }
        }
    }

    #[test]
    fn density_survives_large_dimension() {
        let p = ball_density_constant(400, 1.0);
        assert!(p.is_finite() && p > 0.0);
    }

    #[test]
    fn ratio_small_values() {
        assert_eq!(double_factorial_ratio(1), 1.0);
        assert!((double_factorial_ratio(2) - 4.0 / std::f64::consts::PI).abs() < 1e-15);
        assert!((double_factorial_ratio(3) - 1.5).abs() < 1e-15);
        // λ(4)·8/3 = (2/π)·8/3
        assert!((double_factorial_ratio(4) - 16.0 / (3.0 * std::f64::consts::PI)).abs() < 1e-14);
    }

    #[test]
    fn ratio_bounded_by_sqrt_d() {
        for d in 1..=200 {
            assert!(double_factorial_ratio(d) <= (d as f64).sqrt(), "d={d}");
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BallSampler::new(0, 1.0, 1).is_err());
        assert!(BallSampler::new(2, 0.0, 1).is_err());
        assert!(BallSampler::new(2, -1.0, 1).is_err());
        assert!(BallSampler::new(2, f64::NAN, 1).is_err());
    }

    #[test]
    fn samples_stay_inside_and_repeat() {
        let mut a = BallSampler::new(5, 0.7, 9).unwrap();
        let mut b = BallSampler::new(5, 0.7, 9).unwrap();
        for _ in 0..10_000 {
            let z = a.sample();
            assert!(l2_norm(&z) <= 0.7);
            assert_eq!(z, b.sample());
        }
    }

    #[test]
    fn one_dimensional_mean_abs() {
        let mut s = BallSampler::new(1, 1.0, 3).unwrap();
        let n = 200_000;
        let m: f64 = (0..n).map(|_| s.sample()[0].abs()).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn coordinates_are_centered() {
        let d = 4;
        let n = 200_000;
        let mut s = BallSampler::new(d, 1.0, 11).unwrap();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..n {
            for (j, v) in s.sample().into_iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        for j in 0..d {
            let mean = sum[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            assert!(mean.abs() <= 4.0 * (var / n as f64).sqrt(), "coord {j} mean {mean}");
        }
    }
}
