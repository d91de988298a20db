//! Stochastic objectives `F(w, ξ)` with approximate gradients and Lipschitz metadata.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// A draw of the random argument `ξ`. For every objective in this crate it is
/// an index into a finite collection; deterministic objectives always draw `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sample(pub usize);

/// `F(w, ξ)` together with what the optimizer and planner need to know about it.
pub trait StochasticObjective: Send + Sync {
    fn dim(&self) -> usize;

    fn sample_xi(&self, rng: &mut ChaCha8Rng) -> Sample;

    fn value(&self, w: &[f64], xi: Sample) -> f64;

    /// Approximate stochastic gradient; equals `∇_w F(w, ξ)` wherever it exists.
    fn approx_grad(&self, w: &[f64], xi: Sample, out: &mut [f64]);

    /// `C(ξ)`, the Lipschitz constant of `F(·, ξ)`.
    fn lipschitz_of(&self, xi: Sample) -> f64;

    /// `L0 = E[C(ξ)]`.
    fn l0(&self) -> f64;

    /// `Q = E[C(ξ)²]`.
    fn q(&self) -> f64;

    /// `f(w) = E[F(w, ξ)]`.
    fn full_value(&self, w: &[f64]) -> f64;

    /// True when `ξ` carries no randomness, i.e. `F(w, ξ) = f(w)`.
    fn is_deterministic(&self) -> bool;
}

/// One term of a finite sum.
pub trait Component: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &[f64]) -> f64;
    fn grad(&self, w: &[f64], out: &mut [f64]);
    fn lipschitz(&self) -> f64;
}

/// Empirical objective `(1/n) Σ F_i(w)` with `ξ` uniform over the items.
#[derive(Debug, Clone)]
pub struct FiniteSum<C> {
    items: Vec<C>,
    l0: f64,
    q: f64,
}

pub fn finite_sum_objective<C: Component>(items: Vec<C>) -> Result<FiniteSum<C>> {
    FiniteSum::new(items)
}

impl<C: Component> FiniteSum<C> {
    pub fn new(items: Vec<C>) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("finite sum needs at least one item"))?;
        let dim = first.dim();
        if let Some(bad) = items.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        let n = items.len() as f64;
        let l0 = items.iter().map(|c| c.lipschitz()).sum::<f64>() / n;
        let q = items.iter().map(|c| c.lipschitz().powi(2)).sum::<f64>() / n;
        check_moments(l0, q)?;
        Ok(Self { items, l0, q })
    }

    pub fn items(&self) -> &[C] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Jensen: `Q ≥ L0²`. Infinite constants are accepted (unbounded test objectives).
pub(crate) fn check_moments(l0: f64, q: f64) -> Result<()> {
    if l0.is_nan() || q.is_nan() || l0 < 0.0 {
        return Err(invalid("l0", format!("invalid Lipschitz moments l0={l0}, q={q}")));
    }
    if q < l0 * l0 * (1.0 - 1e-12) {
        return Err(invalid("q", format!("q={q} is below l0²={}", l0 * l0)));
    }
    Ok(())
}

impl<C: Component> StochasticObjective for FiniteSum<C> {
    fn dim(&self) -> usize {
        self.items[0].dim()
    }

    fn sample_xi(&self, rng: &mut ChaCha8Rng) -> Sample {
        Sample(rng.gen_range(0..self.items.len()))
    }

    fn value(&self, w: &[f64], xi: Sample) -> f64 {
        self.items[xi.0].value(w)
    }

    fn approx_grad(&self, w: &[f64], xi: Sample, out: &mut [f64]) {
        self.items[xi.0].grad(w, out)
    }

    fn lipschitz_of(&self, xi: Sample) -> f64 {
        self.items[xi.0].lipschitz()
    }

    fn l0(&self) -> f64 {
        self.l0
    }

    fn q(&self) -> f64 {
        self.q
    }

    fn full_value(&self, w: &[f64]) -> f64 {
        self.items.iter().map(|c| c.value(w)).sum::<f64>() / self.items.len() as f64
    }

    fn is_deterministic(&self) -> bool {
        self.items.len() == 1
    }
}

/// `c·|w₀ − shift|` on ℝ¹. The kink gets derivative `0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledAbs {
    pub scale: f64,
    pub shift: f64,
}

impl Component for ScaledAbs {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, w: &[f64]) -> f64 {
        self.scale * (w[0] - self.shift).abs()
    }

    fn grad(&self, w: &[f64], out: &mut [f64]) {
        let t = w[0] - self.shift;
        out[0] = if t > 0.0 {
            self.scale
        } else if t < 0.0 {
            -self.scale
        } else {
            0.0
        };
    }

    fn lipschitz(&self) -> f64 {
        self.scale.abs()
    }
}

/// `max_j w_j`. Ties resolve to the lowest index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxCoordinate {
    pub dim: usize,
}

impl Component for MaxCoordinate {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &[f64]) -> f64 {
        w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn grad(&self, w: &[f64], out: &mut [f64]) {
        let mut best = 0;
        for j in 1..w.len() {
            if w[j] > w[best] {
                best = j;
            }
        }
        out.fill(0.0);
        out[best] = 1.0;
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }
}

/// `½‖w‖²`. Not globally Lipschitz; reports an infinite constant. Test use only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSquaredNorm {
    pub dim: usize,
}

impl Component for HalfSquaredNorm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &[f64]) -> f64 {
        0.5 * w.iter().map(|x| x * x).sum::<f64>()
    }

    fn grad(&self, w: &[f64], out: &mut [f64]) {
        out.copy_from_slice(w);
    }

    fn lipschitz(&self) -> f64 {
        f64::INFINITY
    }
}

/// `f(w) = |w|` on ℝ¹, with `L0 = Q = 1` and minimizer `0`.
pub fn abs_value_objective() -> FiniteSum<ScaledAbs> {
    FiniteSum::new(vec![ScaledAbs {
        scale: 1.0,
        shift: 0.0,
    }])
    .expect("single valid item")
}

/// `f(w) = max_j w_j` on ℝᵈ.
pub fn max_coordinate_objective(dim: usize) -> Result<FiniteSum<MaxCoordinate>> {
    if dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    FiniteSum::new(vec![MaxCoordinate { dim }])
}

/// `L0 = 2R + L1·d/2` for a function bounded by `R` with `L1`-Lipschitz gradient.
pub fn bounded_smooth_l0(bound: f64, grad_lipschitz: f64, dim: usize) -> f64 {
    2.0 * bound + grad_lipschitz * dim as f64 / 2.0
}

/// Central differences of `F(·, ξ)` at `w`, one coordinate at a time.
pub fn finite_difference_grad<O: StochasticObjective + ?Sized>(
    obj: &O,
    w: &[f64],
    xi: Sample,
    h: f64,
) -> Vec<f64> {
    assert!(h > 0.0);
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|j| {
            probe[j] = w[j] + h;
            let up = obj.value(&probe, xi);
            probe[j] = w[j] - h;
            let down = obj.value(&probe, xi);
            probe[j] = w[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the full objective `f`.
pub fn finite_difference_full_grad<O: StochasticObjective + ?Sized>(obj: &O, w: &[f64], h: f64) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|j| {
            probe[j] = w[j] + h;
            let up = obj.full_value(&probe);
            probe[j] = w[j] - h;
            let down = obj.full_value(&probe);
            probe[j] = w[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}
