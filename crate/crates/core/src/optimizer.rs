//! Perturbed iterate SGD and its unperturbed baseline.
//!
//! The stop index `R ~ U{1..K}` is drawn before the loop and exactly `R − 1`
//! updates are applied. The `S` inner gradients of iteration `k` use the
//! streams `(Perturbation, k, l)` and `(Sample, k, l)`, so the result does not
//! depend on how many threads evaluate them.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ball::{l2_norm, sample_ball_into, BallSampler};
use crate::error::{invalid, Error, Result};
use crate::objective::StochasticObjective;
use crate::rng::{Domain, SeedTree};

/// Below this many scalar gradient entries per iteration the inner loop stays on one thread.
const PARALLEL_WORK: usize = 4096;

/// Relative slack on the `‖∇̃F(w, ξ)‖ ≤ C(ξ)` runtime check.
const GRAD_BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Trace {
    #[default]
    Off,
    /// Record `f(x^k)` for `k = 1..=R`, every `stride` iterations (plus `k = R`).
    UntilStop { stride: usize },
    /// Keep iterating to `K` for plotting; `output` is still `x^R`.
    AllIterations { stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PisgdConfig {
    /// `K`
    pub k_total: usize,
    /// `S`
    pub batch: usize,
    /// `η`
    pub step: f64,
    /// `σ`; zero turns the method into plain mini-batch SGD.
    pub radius: f64,
    pub seed: u64,
    #[serde(default)]
    pub trace: Trace,
}

impl PisgdConfig {
    pub fn new(k_total: usize, batch: usize, step: f64, radius: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            k_total,
            batch,
            step,
            radius,
            seed,
            trace: Trace::Off,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_trace(mut self, trace: Trace) -> Self {
        self.trace = trace;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_total == 0 {
            return Err(invalid("k_total", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(invalid("batch", "must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid("step", format!("must be positive, got {}", self.step)));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(invalid("radius", format!("must be nonnegative, got {}", self.radius)));
        }
        match self.trace {
            Trace::UntilStop { stride: 0 } | Trace::AllIterations { stride: 0 } => {
                Err(invalid("trace stride", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// `f(x^k)` on the full objective.
    pub loss: f64,
    /// Norm of the averaged step direction taken from `x^k`; `None` at the last iterate.
    pub step_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// `R ∈ [1, K]`
    pub stop_index: usize,
    /// `x^R`
    pub output: Vec<f64>,
    pub trace: Vec<TracePoint>,
    /// Gradient evaluations spent reaching `x^R`, always `(R − 1)·S`.
    pub gradient_calls: u64,
    /// Gradient evaluations actually performed (larger under [`Trace::AllIterations`]).
    pub total_gradient_calls: u64,
}

impl RunRecord {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|p| p.loss).collect()
    }

    pub fn grad_norm_trace(&self) -> Vec<f64> {
        self.trace.iter().filter_map(|p| p.step_norm).collect()
    }
}

/// Algorithm 1 with `R` drawn from the seeded stream.
pub fn pisgd_run<O: StochasticObjective + ?Sized>(obj: &O, x1: &[f64], cfg: &PisgdConfig) -> Result<RunRecord> {
    run(obj, x1, cfg, true, None)
}

/// Same as [`pisgd_run`] with the gradient taken at the iterate itself.
pub fn sgd_run<O: StochasticObjective + ?Sized>(obj: &O, x1: &[f64], cfg: &PisgdConfig) -> Result<RunRecord> {
    run(obj, x1, cfg, false, None)
}

/// [`pisgd_run`] with a caller-chosen stop index instead of a random one.
pub fn pisgd_run_to<O: StochasticObjective + ?Sized>(
    obj: &O,
    x1: &[f64],
    cfg: &PisgdConfig,
    stop_index: usize,
) -> Result<RunRecord> {
    run(obj, x1, cfg, true, Some(stop_index))
}

pub fn sgd_run_to<O: StochasticObjective + ?Sized>(
    obj: &O,
    x1: &[f64],
    cfg: &PisgdConfig,
    stop_index: usize,
) -> Result<RunRecord> {
    run(obj, x1, cfg, false, Some(stop_index))
}

/// The stop index `pisgd_run` will use for this seed and `K`.
pub fn draw_stop_index(seed: u64, k_total: usize) -> usize {
    SeedTree::new(seed)
        .stream(Domain::StopIndex, 0, 0)
        .gen_range(1..=k_total)
}

fn run<O: StochasticObjective + ?Sized>(
    obj: &O,
    x1: &[f64],
    cfg: &PisgdConfig,
    perturb: bool,
    stop: Option<usize>,
) -> Result<RunRecord> {
    cfg.validate()?;
    if x1.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x1.len(),
        });
    }
    let tree = SeedTree::new(cfg.seed);
    let stop_index = match stop {
        Some(r) if (1..=cfg.k_total).contains(&r) => r,
        Some(r) => return Err(invalid("stop_index", format!("{r} outside [1, {}]", cfg.k_total))),
        None => draw_stop_index(cfg.seed, cfg.k_total),
    };
    let perturb = perturb && cfg.radius > 0.0;
    let (last, stride) = match cfg.trace {
        Trace::Off => (stop_index, None),
        Trace::UntilStop { stride } => (stop_index, Some(stride)),
        Trace::AllIterations { stride } => (cfg.k_total, Some(stride)),
    };

    let mut x = x1.to_vec();
    let mut output = None;
    let mut trace = Vec::new();
    let mut direction = vec![0.0; x.len()];
    for k in 1..=last {
        if k == stop_index {
            output = Some(x.clone());
        }
        let record = stride.is_some_and(|s| (k - 1) % s == 0 || k == last || k == stop_index);
        if k == last {
            if record {
                trace.push(TracePoint {
                    iteration: k,
                    loss: obj.full_value(&x),
                    step_norm: None,
                });
            }
            break;
        }
        batch_direction(obj, &x, k, cfg, perturb, &tree, &mut direction)?;
        if record {
            trace.push(TracePoint {
                iteration: k,
                loss: obj.full_value(&x),
                step_norm: Some(l2_norm(&direction)),
            });
        }
        for (xi, di) in x.iter_mut().zip(&direction) {
            *xi -= cfg.step * di;
        }
    }

    let s = cfg.batch as u64;
    Ok(RunRecord {
        stop_index,
        output: output.expect("stop index lies in 1..=last"),
        trace,
        gradient_calls: (stop_index as u64 - 1) * s,
        total_gradient_calls: (last as u64 - 1) * s,
    })
}

/// `(1/S) Σ_l ∇̃F(x + z_l, ξ_l)` summed in index order.
fn batch_direction<O: StochasticObjective + ?Sized>(
    obj: &O,
    x: &[f64],
    k: usize,
    cfg: &PisgdConfig,
    perturb: bool,
    tree: &SeedTree,
    out: &mut [f64],
) -> Result<()> {
    let d = x.len();
    let eval = |l: usize, w: &mut [f64], g: &mut [f64]| -> Result<()> {
        w.copy_from_slice(x);
        if perturb {
            let mut rng = tree.stream(Domain::Perturbation, k as u64, l as u64);
            sample_ball_into(&mut rng, cfg.radius, g);
            for (wi, zi) in w.iter_mut().zip(g.iter()) {
                *wi += zi;
            }
        }
        let xi = obj.sample_xi(&mut tree.stream(Domain::Sample, k as u64, l as u64));
        obj.approx_grad(w, xi, g);
        check_gradient(obj, g, xi, k, l)
    };

    out.fill(0.0);
    if cfg.batch * d >= PARALLEL_WORK && cfg.batch > 1 {
        let grads = (0..cfg.batch)
            .into_par_iter()
            .map(|l| {
                let mut w = vec![0.0; d];
                let mut g = vec![0.0; d];
                eval(l, &mut w, &mut g).map(|_| g)
            })
            .collect::<Result<Vec<_>>>()?;
        for g in &grads {
            for (o, gi) in out.iter_mut().zip(g) {
                *o += gi;
            }
        }
    } else {
        let mut w = vec![0.0; d];
        let mut g = vec![0.0; d];
        for l in 0..cfg.batch {
            eval(l, &mut w, &mut g)?;
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += gi;
            }
        }
    }
    let inv = 1.0 / cfg.batch as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    Ok(())
}

fn check_gradient<O: StochasticObjective + ?Sized>(
    obj: &O,
    g: &[f64],
    xi: crate::objective::Sample,
    iteration: usize,
    sample: usize,
) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            iteration,
            sample,
        });
    }
    let norm = l2_norm(g);
    let bound = obj.lipschitz_of(xi);
    if norm > bound * (1.0 + GRAD_BOUND_SLACK) {
        return Err(Error::GradientBound {
            norm,
            bound,
            iteration,
            sample,
        });
    }
    Ok(())
}

/// One update of the deterministic variant: `x − (η/S) Σ ∇̃f(x + z_l)`.
pub fn deterministic_step<G>(grad: G, x: &[f64], sampler: &mut BallSampler, batch: usize, step: f64) -> Vec<f64>
where
    G: Fn(&[f64], &mut [f64]),
{
    assert!(batch >= 1);
    assert_eq!(sampler.dim(), x.len());
    let d = x.len();
    let mut sum = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut g = vec![0.0; d];
    for _ in 0..batch {
        sampler.sample_into(&mut g);
        for j in 0..d {
            w[j] = x[j] + g[j];
        }
        grad(&w, &mut g);
        for j in 0..d {
            sum[j] += g[j];
        }
    }
    x.iter()
        .zip(&sum)
        .map(|(xi, si)| xi - step / batch as f64 * si)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{abs_value_objective, Component, FiniteSum, HalfSquaredNorm, ScaledAbs};

    #[test]
    fn single_iteration_budget_returns_start() {
        let o = abs_value_objective();
        let cfg = PisgdConfig::new(1, 5, 0.1, 0.5, 3).unwrap();
        let r = pisgd_run(&o, &[2.5], &cfg).unwrap();
        assert_eq!(r.stop_index, 1);
        assert_eq!(r.output, vec![2.5]);
        assert_eq!(r.gradient_calls, 0);
        let r = sgd_run(&o, &[2.5], &cfg).unwrap();
        assert_eq!(r.output, vec![2.5]);
    }

    #[test]
    fn quadratic_two_updates() {
        let o = FiniteSum::new(vec![HalfSquaredNorm { dim: 1 }]).unwrap();
        let cfg = PisgdConfig::new(10, 1, 0.1, 0.0, 0).unwrap();
        let r = sgd_run_to(&o, &[1.0], &cfg, 3).unwrap();
        assert!((r.output[0] - 0.81).abs() < 1e-15);
        assert_eq!(r.gradient_calls, 2);
    }

    #[test]
    fn zero_radius_matches_sgd_bitwise() {
        let o = FiniteSum::new(vec![
            ScaledAbs { scale: 1.0, shift: 0.3 },
            ScaledAbs { scale: 2.0, shift: -1.0 },
            ScaledAbs { scale: 0.5, shift: 2.0 },
        ])
        .unwrap();
        for seed in 0..20 {
            let cfg = PisgdConfig::new(300, 4, 0.05, 0.0, seed)
                .unwrap()
                .with_trace(Trace::UntilStop { stride: 1 });
            let a = pisgd_run(&o, &[3.0], &cfg).unwrap();
            let b = sgd_run(&o, &[3.0], &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn call_accounting_and_trace_length() {
        let o = abs_value_objective();
        for seed in 0..30 {
            let cfg = PisgdConfig::new(50, 3, 0.01, 0.1, seed)
                .unwrap()
                .with_trace(Trace::UntilStop { stride: 1 });
            let r = pisgd_run(&o, &[1.0], &cfg).unwrap();
            assert_eq!(r.gradient_calls, (r.stop_index as u64 - 1) * 3);
            assert_eq!(r.trace.len(), r.stop_index);
            assert_eq!(r.grad_norm_trace().len(), r.stop_index - 1);
        }
    }

    #[test]
    fn full_trace_keeps_output_at_stop() {
        let o = abs_value_objective();
        let cfg = PisgdConfig::new(40, 2, 0.01, 0.1, 8).unwrap();
        let plain = pisgd_run(&o, &[1.0], &cfg).unwrap();
        let full = pisgd_run(&o, &[1.0], &cfg.with_trace(Trace::AllIterations { stride: 1 })).unwrap();
        assert_eq!(plain.output, full.output);
        assert_eq!(plain.stop_index, full.stop_index);
        assert_eq!(full.trace.len(), 40);
        assert_eq!(full.total_gradient_calls, 39 * 2);
        assert_eq!(full.gradient_calls, plain.gradient_calls);
    }

    #[test]
    fn strided_trace() {
        let o = abs_value_objective();
        let cfg = PisgdConfig::new(100, 1, 0.01, 0.1, 1)
            .unwrap()
            .with_trace(Trace::AllIterations { stride: 10 });
        let r = pisgd_run(&o, &[1.0], &cfg).unwrap();
        let its: Vec<usize> = r.trace.iter().map(|p| p.iteration).collect();
        for k in (1..=100).step_by(10) {
            assert!(its.contains(&k));
        }
        assert_eq!(*its.last().unwrap(), 100);
        assert!(its.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn config_validation() {
        assert!(PisgdConfig::new(0, 1, 0.1, 0.0, 0).is_err());
        assert!(PisgdConfig::new(1, 0, 0.1, 0.0, 0).is_err());
        assert!(PisgdConfig::new(1, 1, 0.0, 0.0, 0).is_err());
        assert!(PisgdConfig::new(1, 1, 0.1, -1.0, 0).is_err());
        let o = abs_value_objective();
        let cfg = PisgdConfig::new(3, 1, 0.1, 0.0, 0).unwrap();
        assert!(matches!(pisgd_run(&o, &[1.0, 2.0], &cfg), Err(Error::DimensionMismatch { .. })));
        assert!(pisgd_run_to(&o, &[1.0], &cfg, 4).is_err());
    }

    struct NanAfter;
    impl Component for NanAfter {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, w: &[f64]) -> f64 {
            w[0]
        }
        fn grad(&self, w: &[f64], out: &mut [f64]) {
            out[0] = if w[0] < 0.55 { f64::NAN } else { 1.0 };
        }
        fn lipschitz(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn non_finite_gradient_aborts_with_location() {
        let o = FiniteSum::new(vec![NanAfter]).unwrap();
        let cfg = PisgdConfig::new(100, 2, 0.1, 0.0, 0).unwrap();
        let err = sgd_run_to(&o, &[1.0], &cfg, 100).unwrap_err();
        match err {
            Error::NonFinite { iteration, sample, .. } => {
                assert_eq!(iteration, 6);
                assert_eq!(sample, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    struct Liar;
    impl Component for Liar {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, w: &[f64]) -> f64 {
            3.0 * w[0]
        }
        fn grad(&self, _: &[f64], out: &mut [f64]) {
            out[0] = 3.0;
        }
        fn lipschitz(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn gradient_bound_violation_is_reported() {
        let o = FiniteSum::new(vec![Liar]).unwrap();
        let cfg = PisgdConfig::new(5, 1, 0.1, 0.0, 0).unwrap();
        assert!(matches!(sgd_run_to(&o, &[0.0], &cfg, 5), Err(Error::GradientBound { .. })));
    }

    #[test]
    fn deterministic_step_examples() {
        let abs = |w: &[f64], g: &mut [f64]| g[0] = w[0].signum();
        let mut s = BallSampler::new(1, 1.0, 4).unwrap();
        assert_eq!(deterministic_step(abs, &[5.0], &mut s, 1, 0.1), vec![5.0 - 0.1]);
        assert_eq!(deterministic_step(abs, &[5.0], &mut s, 3, 0.0), vec![5.0]);

        let quad = |w: &[f64], g: &mut [f64]| g.copy_from_slice(w);
        let mut s = BallSampler::new(2, 1.0, 4).unwrap();
        let x = [2.0, -1.0];
        let next = deterministic_step(quad, &x, &mut s, 100_000, 0.5);
        // E[z] = 0 so the step is −η·x up to Monte Carlo error (coordinate sd ≈ 0.5/√S)
        assert!((next[0] - 1.0).abs() < 0.01);
        assert!((next[1] + 0.5).abs() < 0.01);
    }
}
