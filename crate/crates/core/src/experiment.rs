//! Configuration-driven experiments: repeated PISGD / SGD runs with CSV traces and a
//! JSON summary, planner reports and stationarity audits of saved iterates.
//!
//! Output files in the run directory:
//!
//! | file                         | contents                                         |
//! |------------------------------|--------------------------------------------------|
//! | `<alg>_run<r>.csv`           | `iteration,loss,grad_norm` for repeat `r`        |
//! | `<alg>_mean.csv`             | pointwise mean over repeats, plus a `runs` count |
//! | `<alg>_run<r>_output.csv`    | the returned iterate `x^R`, one `value` per line |
//! | `summary.json`               | config echo, derived schedule, per-run results   |
//!
//! Every CSV starts with a `# pisgd-<kind> v1` comment line naming its schema.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{build_nn_objective, load_dataset, synthetic_blobs, BlobConfig, NetworkSpec, NnObjective};
use crate::objective::{abs_value_objective, max_coordinate_objective, FiniteSum, MaxCoordinate, ScaledAbs};
use crate::objective::StochasticObjective;
use crate::optimizer::{pisgd_run, sgd_run, PisgdConfig, RunRecord, Trace};
use crate::planner::{
    bound_rhs, ceil_snapped, high_prob_plan, optimal_plan, HighProbPlan, OptimalPlan, ProblemConstants, Schedule,
};
use crate::stationarity::{goldstein_bound_with, GradientEstimate, PerturbationSet, DEFAULT_HULL_TOL};

pub const TRACE_SCHEMA: &str = "# pisgd-trace v1";
pub const MEAN_TRACE_SCHEMA: &str = "# pisgd-mean-trace v1";
pub const CHECKPOINT_SCHEMA: &str = "# pisgd-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// `f(w) = |w|` started from `x1`.
    Abs {
        #[serde(default = "default_abs_start")]
        x1: f64,
    },
    /// `f(w) = max_j w_j` started from `x1` (zeros by default).
    Max {
        dim: usize,
        #[serde(default)]
        x1: Option<Vec<f64>>,
    },
    /// Classifier on a CSV dataset or on generated blobs.
    Nn {
        layers: [usize; 3],
        #[serde(default = "default_relu_cap")]
        relu_cap: f64,
        #[serde(default)]
        dataset: Option<PathBuf>,
        #[serde(default)]
        synthetic: Option<BlobConfig>,
    },
}

fn default_abs_start() -> f64 {
    1.0
}

fn default_relu_cap() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pisgd,
    Sgd,
    Both,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pisgd" => Ok(Self::Pisgd),
            "sgd" => Ok(Self::Sgd),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!(
                "algorithm.name: unknown algorithm `{other}` (expected pisgd, sgd or both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: Algorithm,
    pub k_total: usize,
    /// Derive `S = ⌈K^{1−β}⌉` and `(σ, η)` from `θ` or from a given `η`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
    /// Explicit mode: `batch`, `radius` and `step` all given, no `beta`.
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub radius: Option<f64>,
    /// `Δ` used for the reported bound; defaults to `f(x¹)` (valid for nonnegative losses).
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceExtent {
    /// Run all `K` iterations for plotting; `x^R` is still what each run returns.
    #[default]
    Full,
    /// Stop at `R`.
    UntilStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-repeat seeds; overrides `seed + r` when given.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_stride")]
    pub trace_stride: usize,
    #[serde(default)]
    pub trace: TraceExtent,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_repeats() -> usize {
    1
}

fn default_stride() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("pisgd-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            repeats: default_repeats(),
            seed: 0,
            seeds: None,
            trace_stride: default_stride(),
            trace: TraceExtent::default(),
            output_dir: default_output(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.algorithm;
        let cfg_err = |m: String| Err(Error::Config(m));
        if a.k_total == 0 {
            return cfg_err("algorithm.k_total must be at least 1".into());
        }
        match a.beta {
            Some(beta) => {
                if !(beta > 0.0 && beta < 1.0) {
                    return cfg_err(format!("algorithm.beta must lie in (0, 1), got {beta}"));
                }
                if a.batch.is_some() || a.radius.is_some() {
                    return cfg_err(
                        "algorithm.beta derives batch and radius; remove algorithm.batch / algorithm.radius".into(),
                    );
                }
                if a.theta.is_some() && a.step.is_some() {
                    return cfg_err("give at most one of algorithm.theta and algorithm.step with algorithm.beta".into());
                }
            }
            None => {
                let missing: Vec<&str> = [
                    ("algorithm.batch", a.batch.is_none()),
                    ("algorithm.radius", a.radius.is_none()),
                    ("algorithm.step", a.step.is_none()),
                ]
                .iter()
                .filter(|(_, m)| *m)
                .map(|(n, _)| *n)
                .collect();
                if !missing.is_empty() {
                    return cfg_err(format!(
                        "provide either algorithm.beta or all of batch, radius and step (missing {})",
                        missing.join(", ")
                    ));
                }
                if a.theta.is_some() {
                    return cfg_err("algorithm.theta only applies together with algorithm.beta".into());
                }
            }
        }
        if let Some(t) = a.theta {
            if !(t > 0.0 && t.is_finite()) {
                return cfg_err(format!("algorithm.theta must be positive, got {t}"));
            }
        }
        if let Some(s) = a.step {
            if !(s > 0.0 && s.is_finite()) {
                return cfg_err(format!("algorithm.step must be positive, got {s}"));
            }
        }
        if let Some(r) = a.radius {
            if !(r >= 0.0 && r.is_finite()) {
                return cfg_err(format!("algorithm.radius must be nonnegative, got {r}"));
            }
        }
        if a.batch == Some(0) {
            return cfg_err("algorithm.batch must be at least 1".into());
        }
        if let Some(d) = a.delta {
            if !(d > 0.0 && d.is_finite()) {
                return cfg_err(format!("algorithm.delta must be positive, got {d}"));
            }
        }
        let r = &self.run;
        if r.repeats == 0 {
            return cfg_err("run.repeats must be at least 1".into());
        }
        if r.trace_stride == 0 {
            return cfg_err("run.trace_stride must be at least 1".into());
        }
        if let Some(seeds) = &r.seeds {
            if seeds.len() != r.repeats {
                return cfg_err(format!(
                    "run.seeds has {} entries but run.repeats is {}",
                    seeds.len(),
                    r.repeats
                ));
            }
        }
        match &self.objective {
            ObjectiveConfig::Nn {
                dataset, synthetic, ..
            } => {
                if dataset.is_some() == synthetic.is_some() {
                    return cfg_err("objective: give exactly one of objective.dataset and objective.synthetic".into());
                }
            }
            ObjectiveConfig::Max { dim, x1 } => {
                if *dim == 0 {
                    return cfg_err("objective.dim must be at least 1".into());
                }
                if x1.as_ref().is_some_and(|x| x.len() != *dim) {
                    return cfg_err("objective.x1 length must equal objective.dim".into());
                }
            }
            ObjectiveConfig::Abs { .. } => {}
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.run.seeds {
            Some(s) => s.clone(),
            None => (0..self.run.repeats as u64).map(|r| self.run.seed.wrapping_add(r)).collect(),
        }
    }
}

/// An objective built from an [`ObjectiveConfig`].
#[derive(Debug)]
pub enum BuiltObjective {
    Abs { objective: FiniteSum<ScaledAbs>, x1: f64 },
    Max { objective: FiniteSum<MaxCoordinate>, x1: Vec<f64> },
    Nn(NnObjective),
}

impl BuiltObjective {
    pub fn build(cfg: &ObjectiveConfig) -> Result<Self> {
        match cfg {
            ObjectiveConfig::Abs { x1 } => Ok(Self::Abs {
                objective: abs_value_objective(),
                x1: *x1,
            }),
            ObjectiveConfig::Max { dim, x1 } => Ok(Self::Max {
                objective: max_coordinate_objective(*dim)?,
                x1: x1.clone().unwrap_or_else(|| vec![0.0; *dim]),
            }),
            ObjectiveConfig::Nn {
                layers,
                relu_cap,
                dataset,
                synthetic,
            } => {
                let spec = NetworkSpec::new(*layers, *relu_cap)?;
                let data = match (dataset, synthetic) {
                    (Some(path), None) => load_dataset(path, spec.classes())?,
                    (None, Some(blobs)) => synthetic_blobs(blobs)?,
                    _ => {
                        return Err(Error::Config(
                            "objective: give exactly one of objective.dataset and objective.synthetic".into(),
                        ))
                    }
                };
                Ok(Self::Nn(build_nn_objective(spec, data)?))
            }
        }
    }

    pub fn as_dyn(&self) -> &dyn StochasticObjective {
        match self {
            Self::Abs { objective, .. } => objective,
            Self::Max { objective, .. } => objective,
            Self::Nn(o) => o,
        }
    }

    /// Starting point of the run seeded with `seed`.
    pub fn initial_point(&self, seed: u64) -> Vec<f64> {
        match self {
            Self::Abs { x1, .. } => vec![*x1],
            Self::Max { x1, .. } => x1.clone(),
            Self::Nn(o) => o.spec().init_params(seed),
        }
    }
}

/// Schedule actually used, with where each value came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedSchedule {
    pub dim: usize,
    pub l0: f64,
    pub q: f64,
    pub k_total: usize,
    pub batch: usize,
    pub radius: f64,
    pub step: f64,
    pub beta: Option<f64>,
    pub theta: Option<f64>,
    pub delta: f64,
    /// Guaranteed `E[dist(0, ∂_σ f(x^R))]` level; only defined in β mode.
    pub bound_rhs: Option<f64>,
}

/// Resolves `(S, σ, η)` for an objective; `delta` is the `Δ` to report.
pub fn derive_schedule(alg: &AlgorithmConfig, obj: &dyn StochasticObjective, delta: f64) -> Result<DerivedSchedule> {
    let d = obj.dim();
    let (l0, q) = (obj.l0(), obj.q());
    let k = alg.k_total;
    let kf = k as f64;
    match alg.beta {
        Some(beta) => {
            if !(l0.is_finite() && l0 > 0.0) {
                return Err(Error::Config(format!(
                    "algorithm.beta needs a finite positive L0, the objective reports {l0}"
                )));
            }
            let theta = match (alg.theta, alg.step) {
                (Some(t), None) => t,
                (None, Some(step)) => l0 * step * kf.powf(beta),
                (None, None) => 1.0,
                (Some(_), Some(_)) => {
                    return Err(Error::Config(
                        "give at most one of algorithm.theta and algorithm.step with algorithm.beta".into(),
                    ))
                }
            };
            let shrink = kf.powf(-beta);
            let step = alg.step.unwrap_or(theta / l0 * shrink);
            // σ = θ√d·K^{−β}; with η given this is η·L0·√d
            let radius = match alg.step {
                Some(step) => step * l0 * (d as f64).sqrt(),
                None => theta * (d as f64).sqrt() * shrink,
            };
            let consts = ProblemConstants::new(l0, q, delta, d)?.with_theta(theta)?;
            Ok(DerivedSchedule {
                dim: d,
                l0,
                q,
                k_total: k,
                batch: ceil_snapped(kf.powf(1.0 - beta)) as usize,
                radius,
                step,
                beta: Some(beta),
                theta: Some(theta),
                delta,
                bound_rhs: Some(bound_rhs(k, beta, &consts)?),
            })
        }
        None => Ok(DerivedSchedule {
            dim: d,
            l0,
            q,
            k_total: k,
            batch: alg.batch.ok_or_else(|| Error::Config("algorithm.batch missing".into()))?,
            radius: alg.radius.ok_or_else(|| Error::Config("algorithm.radius missing".into()))?,
            step: alg.step.ok_or_else(|| Error::Config("algorithm.step missing".into()))?,
            beta: None,
            theta: None,
            delta,
            bound_rhs: None,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub repeat: usize,
    pub seed: u64,
    pub stop_index: usize,
    pub gradient_calls: u64,
    pub total_gradient_calls: u64,
    pub initial_loss: f64,
    /// Loss at the last traced iterate.
    pub final_loss: f64,
    /// Loss at the returned iterate `x^R`.
    pub output_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub name: String,
    pub runs: Vec<RunSummary>,
    pub mean_initial_loss: f64,
    pub mean_final_loss: f64,
    pub mean_output_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Mean final loss of PISGD divided by that of SGD.
    pub final_loss_ratio: f64,
    pub pisgd_mean_final_loss: f64,
    pub sgd_mean_final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub format: String,
    pub config: ExperimentConfig,
    pub schedule: DerivedSchedule,
    pub algorithms: Vec<AlgorithmSummary>,
    pub comparison: Option<Comparison>,
    /// Exact kink evaluations observed by the network objective (expected 0).
    pub boundary_hits: Option<u64>,
    pub wall_seconds: f64,
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    /// `(algorithm name, records in repeat order)`
    pub records: Vec<(String, Vec<RunRecord>)>,
    pub files: Vec<PathBuf>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let built = BuiltObjective::build(&cfg.objective)?;
    let obj = built.as_dyn();
    let seeds = cfg.seeds();
    let delta = match cfg.algorithm.delta {
        Some(d) => d,
        None => obj.full_value(&built.initial_point(seeds[0])).max(f64::MIN_POSITIVE),
    };
    let schedule = derive_schedule(&cfg.algorithm, obj, delta)?;
    let trace = match cfg.run.trace {
        TraceExtent::Full => Trace::AllIterations {
            stride: cfg.run.trace_stride,
        },
        TraceExtent::UntilStop => Trace::UntilStop {
            stride: cfg.run.trace_stride,
        },
    };

    let algorithms: Vec<(&str, bool)> = match cfg.algorithm.name {
        Algorithm::Pisgd => vec![("pisgd", true)],
        Algorithm::Sgd => vec![("sgd", false)],
        Algorithm::Both => vec![("pisgd", true), ("sgd", false)],
    };

    fs::create_dir_all(&cfg.run.output_dir)?;
    let mut files = Vec::new();
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (name, perturbed) in algorithms {
        let results = seeds
            .par_iter()
            .enumerate()
            .map(|(r, &seed)| -> Result<(RunRecord, RunSummary)> {
                let t0 = Instant::now();
                let x1 = built.initial_point(seed);
                let radius = if perturbed { schedule.radius } else { 0.0 };
                let pcfg = PisgdConfig::new(schedule.k_total, schedule.batch, schedule.step, radius, seed)?
                    .with_trace(trace);
                let rec = if perturbed {
                    pisgd_run(obj, &x1, &pcfg)?
                } else {
                    sgd_run(obj, &x1, &pcfg)?
                };
                let summary = RunSummary {
                    repeat: r,
                    seed,
                    stop_index: rec.stop_index,
                    gradient_calls: rec.gradient_calls,
                    total_gradient_calls: rec.total_gradient_calls,
                    initial_loss: rec.trace.first().map_or_else(|| obj.full_value(&x1), |p| p.loss),
                    final_loss: rec.trace.last().map_or_else(|| obj.full_value(&rec.output), |p| p.loss),
                    output_loss: obj.full_value(&rec.output),
                    wall_seconds: t0.elapsed().as_secs_f64(),
                };
                Ok((rec, summary))
            })
            .collect::<Result<Vec<_>>>()?;
        let (recs, runs): (Vec<RunRecord>, Vec<RunSummary>) = results.into_iter().unzip();

        for (r, rec) in recs.iter().enumerate() {
            let path = cfg.run.output_dir.join(format!("{name}_run{r}.csv"));
            write_trace(&path, rec)?;
            files.push(path);
            let path = cfg.run.output_dir.join(format!("{name}_run{r}_output.csv"));
            write_checkpoint(&path, &rec.output)?;
            files.push(path);
        }
        let path = cfg.run.output_dir.join(format!("{name}_mean.csv"));
        write_mean_trace(&path, &recs)?;
        files.push(path);

        let mean = |f: fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
        summaries.push(AlgorithmSummary {
            name: name.to_string(),
            mean_initial_loss: mean(|r| r.initial_loss),
            mean_final_loss: mean(|r| r.final_loss),
            mean_output_loss: mean(|r| r.output_loss),
            runs,
        });
        records.push((name.to_string(), recs));
    }

    let comparison = match summaries.as_slice() {
        [p, s] => Some(Comparison {
            final_loss_ratio: p.mean_final_loss / s.mean_final_loss,
            pisgd_mean_final_loss: p.mean_final_loss,
            sgd_mean_final_loss: s.mean_final_loss,
        }),
        _ => None,
    };
    let summary = ExperimentSummary {
        format: "pisgd-summary v1".into(),
        config: cfg.clone(),
        schedule,
        algorithms: summaries,
        comparison,
        boundary_hits: match &built {
            BuiltObjective::Nn(o) => Some(o.boundary_hits()),
            _ => None,
        },
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let path = cfg.run.output_dir.join("summary.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    files.push(path);
    Ok(ExperimentOutcome {
        summary,
        records,
        files,
    })
}

fn write_trace(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRACE_SCHEMA}")?;
    writeln!(w, "iteration,loss,grad_norm")?;
    for p in &rec.trace {
        match p.step_norm {
            Some(g) => writeln!(w, "{},{},{}", p.iteration, p.loss, g)?,
            None => writeln!(w, "{},{},", p.iteration, p.loss)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Pointwise mean over the runs that recorded each iteration.
fn write_mean_trace(path: &Path, recs: &[RunRecord]) -> Result<()> {
    // iteration -> (loss sum, loss count, grad sum, grad count)
    let mut acc: BTreeMap<usize, (f64, usize, f64, usize)> = BTreeMap::new();
    for rec in recs {
        for p in &rec.trace {
            let e = acc.entry(p.iteration).or_default();
            e.0 += p.loss;
            e.1 += 1;
            if let Some(g) = p.step_norm {
                e.2 += g;
                e.3 += 1;
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MEAN_TRACE_SCHEMA}")?;
    writeln!(w, "iteration,loss,grad_norm,runs")?;
    for (it, (ls, lc, gs, gc)) in acc {
        if gc > 0 {
            writeln!(w, "{it},{},{},{lc}", ls / lc as f64, gs / gc as f64)?;
        } else {
            writeln!(w, "{it},{},,{lc}", ls / lc as f64)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(path: &Path, x: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CHECKPOINT_SCHEMA}")?;
    writeln!(w, "value")?;
    for v in x {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a flattened parameter vector: one number per line, optional `value` header.
pub fn read_checkpoint(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (out.is_empty() && line == "value") {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: format!("`{line}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "non-finite value".into(),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: "checkpoint has no values".into(),
        });
    }
    Ok(out)
}

/// Output of a planner query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub constants: ProblemConstants,
    pub eps1: f64,
    pub eps2: f64,
    pub optimal: OptimalPlan,
    pub schedule: Schedule,
    pub gradient_calls: u128,
    pub bound: f64,
    pub high_probability: Option<HighProbPlan>,
    pub high_probability_schedule: Option<Schedule>,
}

/// Problem constants from a TOML file with keys `l0`, `q`, `delta`, `dim` and optional `theta`.
pub fn load_constants(path: &Path) -> Result<ProblemConstants> {
    let text = fs::read_to_string(path)?;
    let c: ProblemConstants =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    c.validate()?;
    Ok(c)
}

pub fn plan(
    eps1: f64,
    eps2: f64,
    gamma: Option<f64>,
    c: f64,
    phi: f64,
    consts: &ProblemConstants,
) -> Result<PlanReport> {
    let optimal = optimal_plan(eps1, eps2, consts)?;
    let unit = ProblemConstants { theta: 1.0, ..*consts };
    let schedule = optimal.schedule(consts)?;
    let bound = bound_rhs(optimal.k_total, optimal.beta, &unit)?;
    let high = gamma.map(|g| high_prob_plan(eps1, eps2, g, c, phi, consts)).transpose()?;
    let high_schedule = high.as_ref().map(|h| h.schedule(consts)).transpose()?;
    Ok(PlanReport {
        constants: *consts,
        eps1,
        eps2,
        gradient_calls: optimal.gradient_calls(),
        optimal,
        schedule,
        bound,
        high_probability: high,
        high_probability_schedule: high_schedule,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub estimate: GradientEstimate,
    /// Min-norm point of the sampled gradients; deterministic objectives only.
    pub hull_bound: Option<f64>,
}

/// Averaged-gradient certificate at `x`, plus the hull bound when the objective is deterministic.
pub fn audit(obj: &dyn StochasticObjective, x: &[f64], radius: f64, samples: usize, seed: u64) -> Result<AuditReport> {
    if x.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x.len(),
        });
    }
    let set = PerturbationSet::draw(obj, radius, samples, seed)?;
    let estimate = set.averaged_gradient(obj, x)?;
    let hull_bound = if obj.is_deterministic() {
        Some(goldstein_bound_with(obj, x, &set, DEFAULT_HULL_TOL)?)
    } else {
        None
    };
    Ok(AuditReport { estimate, hull_bound })
}
