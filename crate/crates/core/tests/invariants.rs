use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pisgd::ball::sample_ball_into;
use pisgd::nn::{build_nn_objective, synthetic_blobs, BlobConfig, NetworkSpec};
use pisgd::objective::{
    abs_value_objective, finite_difference_full_grad, finite_sum_objective, max_coordinate_objective, Sample,
    ScaledAbs, StochasticObjective,
};
use pisgd::optimizer::{pisgd_run, sgd_run, PisgdConfig, Trace};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scaled_abs() -> impl StochasticObjective {
    finite_sum_objective(
        [(1.0, 0.0), (3.0, 0.5), (0.5, -1.0), (2.0, 0.25)]
            .iter()
            .map(|&(scale, shift)| ScaledAbs { scale, shift })
            .collect(),
    )
    .unwrap()
}

fn small_nn() -> impl StochasticObjective {
    let data = synthetic_blobs(&BlobConfig {
        samples: 120,
        dim: 5,
        classes: 3,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    build_nn_objective(NetworkSpec::new([5, 4, 3], 1.0).unwrap(), data).unwrap()
}

fn check_gradbound<O: StochasticObjective>(obj: &O, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = vec![0.0; obj.dim()];
    for _ in 0..1000 {
        let w: Vec<f64> = (0..obj.dim()).map(|_| rng.gen_range(-scale..scale)).collect();
        let xi = obj.sample_xi(&mut rng);
        obj.approx_grad(&w, xi, &mut g);
        assert!(norm(&g) <= obj.lipschitz_of(xi) * (1.0 + 1e-12));
    }
}

#[test]
fn approximate_gradients_respect_sample_lipschitz_constants() {
    check_gradbound(&abs_value_objective(), 2.0, 1);
    check_gradbound(&scaled_abs(), 2.0, 2);
    check_gradbound(&max_coordinate_objective(4).unwrap(), 2.0, 3);
    check_gradbound(&small_nn(), 3.0, 4);
}

#[test]
fn sample_mean_of_gradients_matches_full_gradient() {
    let obj = small_nn();
    let spec = NetworkSpec::new([5, 4, 3], 1.0).unwrap();
    let w = spec.init_params(21);
    let d = obj.dim();
    let n = 120;
    let mut mean = vec![0.0; d];
    let mut g = vec![0.0; d];
    for i in 0..n {
        obj.approx_grad(&w, Sample(i), &mut g);
        for (m, gi) in mean.iter_mut().zip(&g) {
            *m += gi / n as f64;
        }
    }
    let fd = finite_difference_full_grad(&obj, &w, 1e-6);
    let diff: Vec<f64> = mean.iter().zip(&fd).map(|(a, b)| a - b).collect();
    assert!(norm(&diff) <= 1e-6 * norm(&fd).max(1.0), "{}", norm(&diff));

    // uniform sampling of ξ is unbiased for that mean
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reps = 40_000;
    let mut est = vec![0.0; d];
    for _ in 0..reps {
        let xi = obj.sample_xi(&mut rng);
        obj.approx_grad(&w, xi, &mut g);
        for (m, gi) in est.iter_mut().zip(&g) {
            *m += gi / reps as f64;
        }
    }
    let diff: Vec<f64> = est.iter().zip(&mean).map(|(a, b)| a - b).collect();
    // generous: 5 standard errors of a norm bounded by sqrt(Q / reps)
    assert!(norm(&diff) <= 5.0 * (obj.q() / reps as f64).sqrt());
}

#[test]
fn averaged_gradient_variance_scales_inversely_with_batch() {
    let obj = scaled_abs();
    let q = obj.q();
    let x = [0.1];
    let reps = 20_000;
    let mut points = Vec::new();
    for &s in &[1usize, 4, 16, 64] {
        let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
        let mut z = [0.0];
        let mut g = [0.0];
        let vals: Vec<f64> = (0..reps)
            .map(|_| {
                (0..s)
                    .map(|_| {
                        sample_ball_into(&mut rng, 0.2, &mut z);
                        let xi = obj.sample_xi(&mut rng);
                        obj.approx_grad(&[x[0] + z[0]], xi, &mut g);
                        g[0]
                    })
                    .sum::<f64>()
                    / s as f64
            })
            .collect();
        let m = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (reps as f64 - 1.0);
        assert!(var <= q / s as f64 * 1.05, "S={s}: {var} vs {}", q / s as f64);
        points.push((1.0 / s as f64, var));
    }
    // least squares through the origin: var ≈ slope / S with slope ≤ Q
    let slope = points.iter().map(|(a, b)| a * b).sum::<f64>() / points.iter().map(|(a, _)| a * a).sum::<f64>();
    assert!(slope <= q);
    for (inv_s, var) in points {
        assert!((var - slope * inv_s).abs() <= 0.1 * slope * inv_s, "{var} vs {}", slope * inv_s);
    }
}

/// Counts gradient evaluations landing exactly on the kink of `|w|`.
struct KinkCounter {
    inner: pisgd::objective::FiniteSum<ScaledAbs>,
    hits: AtomicU64,
    calls: AtomicU64,
}

impl StochasticObjective for KinkCounter {
    fn dim(&self) -> usize {
        1
    }
    fn sample_xi(&self, rng: &mut ChaCha8Rng) -> Sample {
        self.inner.sample_xi(rng)
    }
    fn value(&self, w: &[f64], xi: Sample) -> f64 {
        self.inner.value(w, xi)
    }
    fn approx_grad(&self, w: &[f64], xi: Sample, out: &mut [f64]) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if w[0] == 0.0 {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        self.inner.approx_grad(w, xi, out)
    }
    fn lipschitz_of(&self, xi: Sample) -> f64 {
        self.inner.lipschitz_of(xi)
    }
    fn l0(&self) -> f64 {
        self.inner.l0()
    }
    fn q(&self) -> f64 {
        self.inner.q()
    }
    fn full_value(&self, w: &[f64]) -> f64 {
        self.inner.full_value(w)
    }
    fn is_deterministic(&self) -> bool {
        true
    }
}

#[test]
fn perturbed_iterates_never_evaluate_at_the_kink() {
    let obj = KinkCounter {
        inner: abs_value_objective(),
        hits: AtomicU64::new(0),
        calls: AtomicU64::new(0),
    };
    // start on the kink with a step that keeps returning to it without perturbation
    let cfg = PisgdConfig::new(100_001, 10, 0.25, 0.1, 17)
        .unwrap()
        .with_trace(Trace::AllIterations { stride: 100_000 });
    pisgd_run(&obj, &[0.0], &cfg).unwrap();
    assert_eq!(obj.calls.load(Ordering::Relaxed), 1_000_000);
    assert_eq!(obj.hits.load(Ordering::Relaxed), 0);

    // plain SGD from the kink sits on it
    let cfg = PisgdConfig::new(11, 1, 0.25, 0.0, 17)
        .unwrap()
        .with_trace(Trace::AllIterations { stride: 100 });
    obj.hits.store(0, Ordering::Relaxed);
    sgd_run(&obj, &[0.0], &cfg).unwrap();
    assert_eq!(obj.hits.load(Ordering::Relaxed), 10);
}

#[test]
fn network_training_run_avoids_indicator_boundaries() {
    let data = synthetic_blobs(&BlobConfig {
        samples: 300,
        dim: 6,
        classes: 3,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let spec = NetworkSpec::new([6, 5, 3], 1.0).unwrap();
    let obj = build_nn_objective(spec, data).unwrap();
    let x1 = spec.init_params(3);
    let cfg = PisgdConfig::new(500, 8, 0.05, 0.05, 9)
        .unwrap()
        .with_trace(Trace::AllIterations { stride: 50 });
    let rec = pisgd_run(&obj, &x1, &cfg).unwrap();
    assert_eq!(obj.boundary_hits(), 0);
    let first = rec.trace.first().unwrap().loss;
    let last = rec.trace.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
    assert!(obj.accuracy(&rec.output) > 0.5);
}

#[test]
fn averaged_gradient_norm_dominates_hull_bound() {
    use pisgd::stationarity::{goldstein_bound_with, PerturbationSet};
    let obj = max_coordinate_objective(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let set = PerturbationSet::draw(&obj, 0.4, 16, seed).unwrap();
        let avg = set.averaged_gradient(&obj, &x).unwrap().norm;
        let hull = goldstein_bound_with(&obj, &x, &set, 1e-12).unwrap();
        assert!(hull <= avg + 1e-9, "{hull} > {avg}");
    }
}

#[test]
fn max_of_two_coordinates_hull_bound_at_origin() {
    use pisgd::stationarity::goldstein_upper_bound;
    // gradients are e1 or e2; once both appear the hull bound is dist(0, [e1, e2]) = √0.5
    let obj = max_coordinate_objective(2).unwrap();
    let target = 0.5f64.sqrt();
    let runs = 200;
    let close = (0..runs)
        .filter(|&seed| {
            let b = goldstein_upper_bound(&obj, &[0.0, 0.0], 1.0, 50, seed, 1e-12).unwrap();
            (b - target).abs() <= 0.15
        })
        .count();
    assert!(close as f64 >= 0.95 * runs as f64, "{close}/{runs}");
}

#[test]
fn certificate_squares_bound_hull_squares_on_abs() {
    use pisgd::stationarity::{goldstein_bound_with, PerturbationSet};
    let obj = abs_value_objective();
    let (mut avg_sq, mut hull_sq) = (0.0, 0.0);
    for seed in 0..50u64 {
        let cfg = PisgdConfig::new(400, 20, 0.05, 0.05, seed).unwrap();
        let rec = pisgd_run(&obj, &[1.0], &cfg).unwrap();
        let set = PerturbationSet::draw(&obj, 0.05, 20, 500 + seed).unwrap();
        avg_sq += set.averaged_gradient(&obj, &rec.output).unwrap().norm.powi(2) / 50.0;
        hull_sq += goldstein_bound_with(&obj, &rec.output, &set, 1e-12).unwrap().powi(2) / 50.0;
    }
    assert!(hull_sq <= avg_sq, "{hull_sq} > {avg_sq}");
}
