//! One-hidden-layer classifier with ReLU-m hidden units, hard-tanh–clamped output
//! weights and softmax cross-entropy, trained as a finite-sum objective.
//!
//! Parameters are kept flat. Layer 2 comes first, then layer 3; inside a layer
//! each weight row is followed by its bias:
//! `[W²₁, b²₁, …, W²_{N2}, b²_{N2}, W³₁, b³₁, …, W³_{N3}, b³_{N3}]`.

mod data;
mod pca;

pub use data::{
    load_dataset, read_matrix_csv, synthetic_blobs, write_dataset, BlobConfig, LabeledSample,
};
pub use pca::{load_projection, pca_reduce, save_projection, Pca};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::objective::{check_moments, Sample, StochasticObjective};
use crate::rng::{Domain, SeedTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[N1, N2, N3]`: inputs, hidden units, classes.
    pub layer_sizes: [usize; 3],
    /// Cap `m` of the ReLU-m activation.
    #[serde(default = "default_relu_cap")]
    pub relu_cap: f64,
}

fn default_relu_cap() -> f64 {
    1.0
}

impl NetworkSpec {
    pub fn new(layer_sizes: [usize; 3], relu_cap: f64) -> Result<Self> {
        let s = Self { layer_sizes, relu_cap };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.contains(&0) {
            return Err(invalid("layer_sizes", format!("all sizes must be positive, got {:?}", self.layer_sizes)));
        }
        if !(self.relu_cap > 0.0 && self.relu_cap.is_finite()) {
            return Err(invalid("relu_cap", format!("must be positive, got {}", self.relu_cap)));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn hidden(&self) -> usize {
        self.layer_sizes[1]
    }

    pub fn classes(&self) -> usize {
        self.layer_sizes[2]
    }

    /// `d = N2(N1+1) + N3(N2+1)`
    pub fn num_params(&self) -> usize {
        let [n1, n2, n3] = self.layer_sizes;
        n2 * (n1 + 1) + n3 * (n2 + 1)
    }

    fn layer3_offset(&self) -> usize {
        self.hidden() * (self.inputs() + 1)
    }

    /// Uniform on `[−1/√fan_in, 1/√fan_in]` per layer, biases included.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = SeedTree::new(seed).stream(Domain::Init, 0, 0);
        let [n1, n2, n3] = self.layer_sizes;
        let mut out = Vec::with_capacity(self.num_params());
        let a2 = 1.0 / (n1 as f64).sqrt();
        for _ in 0..n2 * (n1 + 1) {
            out.push(rng.gen_range(-a2..=a2));
        }
        let a3 = 1.0 / (n2 as f64).sqrt();
        for _ in 0..n3 * (n2 + 1) {
            out.push(rng.gen_range(-a3..=a3));
        }
        out
    }
}

/// Structured view of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// `N2 × N1`, row-major
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// `N3 × N2`, row-major
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let [n1, n2, n3] = spec.layer_sizes;
        Self {
            w2: vec![0.0; n2 * n1],
            b2: vec![0.0; n2],
            w3: vec![0.0; n3 * n2],
            b3: vec![0.0; n3],
        }
    }

    pub fn unflatten(spec: &NetworkSpec, flat: &[f64]) -> Result<Self> {
        check_len(spec, flat)?;
        let [n1, n2, n3] = spec.layer_sizes;
        let mut p = Self::zeros(spec);
        let mut it = flat.iter().copied();
        for j in 0..n2 {
            for k in 0..n1 {
                p.w2[j * n1 + k] = it.next().expect("length checked");
            }
            p.b2[j] = it.next().expect("length checked");
        }
        for j in 0..n3 {
            for k in 0..n2 {
                p.w3[j * n2 + k] = it.next().expect("length checked");
            }
            p.b3[j] = it.next().expect("length checked");
        }
        Ok(p)
    }

    pub fn flatten(&self, spec: &NetworkSpec) -> Vec<f64> {
        let [n1, n2, n3] = spec.layer_sizes;
        let mut out = Vec::with_capacity(spec.num_params());
        for j in 0..n2 {
            out.extend_from_slice(&self.w2[j * n1..(j + 1) * n1]);
            out.push(self.b2[j]);
        }
        for j in 0..n3 {
            out.extend_from_slice(&self.w3[j * n2..(j + 1) * n2]);
            out.push(self.b3[j]);
        }
        out
    }
}

fn check_len(spec: &NetworkSpec, flat: &[f64]) -> Result<()> {
    if flat.len() != spec.num_params() {
        return Err(Error::DimensionMismatch {
            expected: spec.num_params(),
            got: flat.len(),
        });
    }
    Ok(())
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardCache {
    /// Hidden pre-activations `z²`.
    pub z2: Vec<f64>,
    /// Hidden activations `α²`.
    pub a2: Vec<f64>,
    /// Output logits `z³`.
    pub z3: Vec<f64>,
    /// Softmax probabilities `α³`.
    pub a3: Vec<f64>,
}

#[inline]
fn relu_cap(t: f64, m: f64) -> f64 {
    t.max(0.0).min(m)
}

#[inline]
fn hard_tanh(t: f64) -> f64 {
    t.clamp(-1.0, 1.0)
}

/// Cross-entropy loss of one sample at flat parameters `w`.
pub fn forward(spec: &NetworkSpec, w: &[f64], sample: &LabeledSample) -> (f64, ForwardCache) {
    let mut cache = ForwardCache::default();
    let loss = forward_into(spec, w, sample, &mut cache);
    (loss, cache)
}

fn forward_into(spec: &NetworkSpec, w: &[f64], sample: &LabeledSample, c: &mut ForwardCache) -> f64 {
    let [n1, n2, n3] = spec.layer_sizes;
    debug_assert_eq!(w.len(), spec.num_params());
    debug_assert_eq!(sample.features.len(), n1);
    let m = spec.relu_cap;
    c.z2.resize(n2, 0.0);
    c.a2.resize(n2, 0.0);
    c.z3.resize(n3, 0.0);
    c.a3.resize(n3, 0.0);
    for j in 0..n2 {
        let row = &w[j * (n1 + 1)..(j + 1) * (n1 + 1)];
        let z = row[..n1].iter().zip(&sample.features).map(|(a, b)| a * b).sum::<f64>() + row[n1];
        c.z2[j] = z;
        c.a2[j] = relu_cap(z, m);
    }
    let off = spec.layer3_offset();
    for j in 0..n3 {
        let row = &w[off + j * (n2 + 1)..off + (j + 1) * (n2 + 1)];
        c.z3[j] = row[..n2].iter().zip(&c.a2).map(|(a, b)| hard_tanh(*a) * b).sum::<f64>() + row[n2];
    }
    let max = c.z3.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for j in 0..n3 {
        c.a3[j] = (c.z3[j] - max).exp();
        total += c.a3[j];
    }
    for p in c.a3.iter_mut() {
        *p /= total;
    }
    // −log softmax(z³)_y = logsumexp(z³) − z³_y
    max + total.ln() - c.z3[sample.class]
}

/// Approximate gradient of the loss at `params + perturbation`.
pub fn backprop_grad(
    spec: &NetworkSpec,
    params: &[f64],
    perturbation: &[f64],
    sample: &LabeledSample,
) -> Result<Vec<f64>> {
    check_len(spec, params)?;
    check_len(spec, perturbation)?;
    let w: Vec<f64> = params.iter().zip(perturbation).map(|(a, b)| a + b).collect();
    let mut g = vec![0.0; w.len()];
    let mut cache = ForwardCache::default();
    grad_into(spec, &w, sample, &mut cache, &mut g);
    Ok(g)
}

/// Chain-rule gradient at `w`; indicator derivatives use closed intervals
/// `1{−1 ≤ t ≤ 1}` for the clamp and `1{0 ≤ t ≤ m}` for ReLU-m. Returns the loss.
fn grad_into(spec: &NetworkSpec, w: &[f64], sample: &LabeledSample, c: &mut ForwardCache, g: &mut [f64]) -> f64 {
    let [n1, n2, n3] = spec.layer_sizes;
    let m = spec.relu_cap;
    let loss = forward_into(spec, w, sample, c);
    let off = spec.layer3_offset();
    // δ³ = α³ − y, reused in place of a3
    let mut delta2 = vec![0.0; n2];
    for j in 0..n3 {
        let d3 = c.a3[j] - if j == sample.class { 1.0 } else { 0.0 };
        let base = off + j * (n2 + 1);
        for k in 0..n2 {
            let wjk = w[base + k];
            let dh = if (-1.0..=1.0).contains(&wjk) { 1.0 } else { 0.0 };
            g[base + k] = d3 * c.a2[k] * dh;
            delta2[k] += d3 * hard_tanh(wjk);
        }
        g[base + n2] = d3;
    }
    for j in 0..n2 {
        let da = if (0.0..=m).contains(&c.z2[j]) { 1.0 } else { 0.0 };
        let db = delta2[j] * da;
        let base = j * (n1 + 1);
        for k in 0..n1 {
            g[base + k] = db * sample.features[k];
        }
        g[base + n1] = db;
    }
    loss
}

/// Number of indicator evaluations that land exactly on a kink at `w`.
pub fn boundary_hits(spec: &NetworkSpec, w: &[f64], sample: &LabeledSample) -> usize {
    let (_, c) = forward(spec, w, sample);
    let m = spec.relu_cap;
    let [_, n2, n3] = spec.layer_sizes;
    let off = spec.layer3_offset();
    let on_clamp = (0..n3)
        .flat_map(|j| (0..n2).map(move |k| off + j * (n2 + 1) + k))
        .filter(|&i| w[i].abs() == 1.0)
        .count();
    let on_relu = c.z2.iter().filter(|&&z| z == 0.0 || z == m).count();
    on_clamp + on_relu
}

/// `L_i = 2·max(√(N2·N3)·‖[vᵀ, 1]‖₂, √(N2·m² + 1))`.
pub fn sample_lipschitz(spec: &NetworkSpec, features: &[f64]) -> f64 {
    let n2 = spec.hidden() as f64;
    let n3 = spec.classes() as f64;
    let m = spec.relu_cap;
    let v_norm = (features.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt();
    2.0 * ((n2 * n3).sqrt() * v_norm).max((n2 * m * m + 1.0).sqrt())
}

/// Mean cross-entropy over a dataset, one sample drawn uniformly per `ξ`.
#[derive(Debug)]
pub struct NnObjective {
    spec: NetworkSpec,
    data: Vec<LabeledSample>,
    lipschitz: Vec<f64>,
    l0: f64,
    q: f64,
    boundary_hits: AtomicU64,
}

pub fn build_nn_objective(spec: NetworkSpec, data: Vec<LabeledSample>) -> Result<NnObjective> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("dataset has no samples"));
    }
    for s in &data {
        if s.features.len() != spec.inputs() {
            return Err(Error::DimensionMismatch {
                expected: spec.inputs(),
                got: s.features.len(),
            });
        }
        if s.label.len() != spec.classes() {
            return Err(Error::DimensionMismatch {
                expected: spec.classes(),
                got: s.label.len(),
            });
        }
    }
    let lipschitz: Vec<f64> = data.iter().map(|s| sample_lipschitz(&spec, &s.features)).collect();
    let n = lipschitz.len() as f64;
    let l0 = lipschitz.iter().sum::<f64>() / n;
    let q = lipschitz.iter().map(|l| l * l).sum::<f64>() / n;
    check_moments(l0, q)?;
    Ok(NnObjective {
        spec,
        data,
        lipschitz,
        l0,
        q,
        boundary_hits: AtomicU64::new(0),
    })
}

impl NnObjective {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn data(&self) -> &[LabeledSample] {
        &self.data
    }

    pub fn sample_lipschitz_constants(&self) -> &[f64] {
        &self.lipschitz
    }

    /// Gradient evaluations so far that hit an indicator boundary exactly.
    pub fn boundary_hits(&self) -> u64 {
        self.boundary_hits.load(Ordering::Relaxed)
    }

    /// Fraction of samples whose most probable class is the label.
    pub fn accuracy(&self, w: &[f64]) -> f64 {
        let mut cache = ForwardCache::default();
        let hits = self
            .data
            .iter()
            .filter(|s| {
                forward_into(&self.spec, w, s, &mut cache);
                let best = (0..cache.a3.len())
                    .max_by(|&a, &b| cache.a3[a].total_cmp(&cache.a3[b]))
                    .expect("at least one class");
                best == s.class
            })
            .count();
        hits as f64 / self.data.len() as f64
    }
}

impl StochasticObjective for NnObjective {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn sample_xi(&self, rng: &mut ChaCha8Rng) -> Sample {
        Sample(rng.gen_range(0..self.data.len()))
    }

    fn value(&self, w: &[f64], xi: Sample) -> f64 {
        forward(&self.spec, w, &self.data[xi.0]).0
    }

    fn approx_grad(&self, w: &[f64], xi: Sample, out: &mut [f64]) {
        let sample = &self.data[xi.0];
        let mut cache = ForwardCache::default();
        grad_into(&self.spec, w, sample, &mut cache, out);
        let m = self.spec.relu_cap;
        let [_, n2, n3] = self.spec.layer_sizes;
        let off = self.spec.layer3_offset();
        let mut hits = cache.z2.iter().filter(|&&z| z == 0.0 || z == m).count();
        for j in 0..n3 {
            hits += w[off + j * (n2 + 1)..off + j * (n2 + 1) + n2]
                .iter()
                .filter(|v| v.abs() == 1.0)
                .count();
        }
        if hits > 0 {
            self.boundary_hits.fetch_add(hits as u64, Ordering::Relaxed);
        }
    }

    fn lipschitz_of(&self, xi: Sample) -> f64 {
        self.lipschitz[xi.0]
    }

    fn l0(&self) -> f64 {
        self.l0
    }

    fn q(&self) -> f64 {
        self.q
    }

    fn full_value(&self, w: &[f64]) -> f64 {
        let mut cache = ForwardCache::default();
        let total: f64 = self
            .data
            .iter()
            .map(|s| forward_into(&self.spec, w, s, &mut cache))
            .sum();
        total / self.data.len() as f64
    }

    fn is_deterministic(&self) -> bool {
        self.data.len() == 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::finite_difference_grad;
    use rand::SeedableRng;

    fn sample(features: Vec<f64>, class: usize, classes: usize) -> LabeledSample {
        LabeledSample::new(features, class, classes).unwrap()
    }

    #[test]
    fn param_count_and_roundtrip() {
        let spec = NetworkSpec::new([68, 9, 3], 1.0).unwrap();
        assert_eq!(spec.num_params(), 9 * 69 + 3 * 10);
        let flat = spec.init_params(4);
        let p = NetworkParams::unflatten(&spec, &flat).unwrap();
        assert_eq!(p.flatten(&spec), flat);
        assert!(NetworkParams::unflatten(&spec, &flat[1..]).is_err());
    }

    #[test]
    fn flat_layout_puts_bias_after_row() {
        let spec = NetworkSpec::new([2, 2, 2], 1.0).unwrap();
        let p = NetworkParams {
            w2: vec![1.0, 2.0, 3.0, 4.0],
            b2: vec![10.0, 20.0],
            w3: vec![5.0, 6.0, 7.0, 8.0],
            b3: vec![30.0, 40.0],
        };
        assert_eq!(
            p.flatten(&spec),
            vec![1.0, 2.0, 10.0, 3.0, 4.0, 20.0, 5.0, 6.0, 30.0, 7.0, 8.0, 40.0]
        );
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let spec = NetworkSpec::new([4, 3, 3], 1.0).unwrap();
        let w = vec![0.0; spec.num_params()];
        let (loss, c) = forward(&spec, &w, &sample(vec![1.0, -2.0, 0.5, 3.0], 1, 3));
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        for p in c.a3 {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_cap_and_weight_clamp() {
        let spec = NetworkSpec::new([1, 1, 2], 1.0).unwrap();
        // w2 = 2, b2 = 0, v = 1 → z² = 2 = 2m → α² = 1
        // w3 row 0 = 5 → H = 1; row 1 = 0
        let w = vec![2.0, 0.0, 5.0, 0.0, 0.0, 0.0];
        let (_, c) = forward(&spec, &w, &sample(vec![1.0], 0, 2));
        assert_eq!(c.a2, vec![1.0]);
        assert_eq!(c.z3, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let spec = NetworkSpec::new([1, 1, 2], 1.0).unwrap();
        let w = vec![0.0, 0.0, 0.0, 1e4, 0.0, -1e4];
        let (loss, c) = forward(&spec, &w, &sample(vec![1.0], 1, 2));
        assert!(loss.is_finite());
        assert!((loss - 2e4).abs() < 1e-6);
        assert!((c.a3.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_output_zeroes_output_bias_gradient() {
        let spec = NetworkSpec::new([1, 1, 2], 1.0).unwrap();
        let w = vec![0.0, 0.0, 0.0, 800.0, 0.0, -800.0];
        let z = vec![0.0; 6];
        let g = backprop_grad(&spec, &w, &z, &sample(vec![1.0], 0, 2)).unwrap();
        assert_eq!(g[3], 0.0);
        assert_eq!(g[5], 0.0);
    }

    #[test]
    fn dead_hidden_unit_has_zero_incoming_gradient() {
        let spec = NetworkSpec::new([3, 2, 3], 1.0).unwrap();
        let mut w = spec.init_params(1);
        // hidden unit 1: weights 0, bias −5 → z² < 0
        for k in 0..3 {
            w[4 + k] = 0.0;
        }
        w[4 + 3] = -5.0;
        let z = vec![0.0; w.len()];
        let g = backprop_grad(&spec, &w, &z, &sample(vec![0.3, -1.0, 2.0], 2, 3)).unwrap();
        assert!(g[4..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let spec = NetworkSpec::new([5, 4, 3], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<_> = (0..4)
            .map(|i| sample((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(), i % 3, 3))
            .collect();
        let obj = build_nn_objective(spec, data).unwrap();
        for trial in 0..20 {
            let w: Vec<f64> = (0..spec.num_params()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let xi = Sample(trial % 4);
            let mut g = vec![0.0; w.len()];
            obj.approx_grad(&w, xi, &mut g);
            let fd = finite_difference_grad(&obj, &w, xi, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn lipschitz_examples() {
        let spec = NetworkSpec::new([2, 9, 3], 1.0).unwrap();
        assert!((sample_lipschitz(&spec, &[0.0, 0.0]) - 2.0 * 27f64.sqrt()).abs() < 1e-12);
        let spec = NetworkSpec::new([1, 1, 1], 1.0).unwrap();
        assert!((sample_lipschitz(&spec, &[0.0]) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        let spec = NetworkSpec::new([2, 3, 2], 0.5).unwrap();
        let mut last = 0.0;
        for t in [1.0, 1.5, 3.0, 10.0] {
            let l = sample_lipschitz(&spec, &[0.2 * t, -0.1 * t]);
            assert!(l >= last);
            last = l;
        }
    }

    #[test]
    fn objective_moments() {
        let spec = NetworkSpec::new([1, 1, 1], 1.0).unwrap();
        // L = 2·max(‖[v,1]‖, √2)
        let one = build_nn_objective(spec, vec![sample(vec![3.0], 0, 1)]).unwrap();
        let l1 = 2.0 * 10f64.sqrt();
        assert!((one.l0() - l1).abs() < 1e-12 && (one.q() - l1 * l1).abs() < 1e-9);

        // v = 0 → L = 2√2; v = √7 → ‖[v,1]‖ = √8 → L = 4√2. Scaled: L ∈ {2√2, 4√2}.
        let two = build_nn_objective(spec, vec![sample(vec![0.0], 0, 1), sample(vec![7f64.sqrt()], 0, 1)]).unwrap();
        let r = 2f64.sqrt();
        assert!((two.l0() - 3.0 * r).abs() < 1e-12);
        assert!((two.q() - 10.0 * 2.0).abs() < 1e-9);
    }

    #[test]
    fn full_value_at_zero_is_log_classes() {
        let spec = NetworkSpec::new([2, 3, 4], 1.0).unwrap();
        let data = vec![sample(vec![1.0, 2.0], 0, 4), sample(vec![-3.0, 0.5], 3, 4)];
        let obj = build_nn_objective(spec, data).unwrap();
        assert!((obj.full_value(&vec![0.0; spec.num_params()]) - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn objective_rejects_bad_data() {
        let spec = NetworkSpec::new([2, 3, 3], 1.0).unwrap();
        assert!(matches!(build_nn_objective(spec, vec![]), Err(Error::Empty(_))));
        let r = build_nn_objective(spec, vec![sample(vec![1.0], 0, 3)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        assert!(NetworkSpec::new([0, 1, 1], 1.0).is_err());
        assert!(NetworkSpec::new([1, 1, 1], 0.0).is_err());
    }

    #[test]
    fn boundary_counter() {
        let spec = NetworkSpec::new([1, 1, 2], 1.0).unwrap();
        let obj = build_nn_objective(spec, vec![sample(vec![1.0], 0, 2)]).unwrap();
        // z² = 0 exactly, and one output weight exactly at 1
        let w = vec![0.0, 0.0, 1.0, 0.0, 0.3, 0.0];
        let mut g = vec![0.0; 6];
        obj.approx_grad(&w, Sample(0), &mut g);
        assert_eq!(obj.boundary_hits(), 2);
        assert_eq!(boundary_hits(&spec, &w, &obj.data()[0]), 2);
    }
}
