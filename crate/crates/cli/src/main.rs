use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pisgd::experiment::{
    audit, load_constants, plan, read_checkpoint, run_experiment, Algorithm, AlgorithmConfig, BuiltObjective,
    ExperimentConfig, ObjectiveConfig, PlanReport, RunConfig, TraceExtent,
};
use pisgd::nn::{pca_reduce, save_projection, synthetic_blobs, write_dataset, BlobConfig, LabeledSample};
use pisgd::planner::{DEFAULT_C, DEFAULT_PHI};
use pisgd::{Error, Result};

#[derive(Parser)]
#[command(name = "pisgd", version, about = "Perturbed iterate SGD experiments, planning and audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run PISGD and/or SGD repeatedly and write traces plus a summary.
    Run(RunArgs),
    /// Print the iteration-optimal schedule for target tolerances.
    Plan(PlanArgs),
    /// Estimate the averaged perturbed gradient at a saved iterate.
    Audit(AuditArgs),
    /// Write a synthetic labelled dataset as CSV.
    GenData(GenDataArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveKind {
    Abs,
    Max,
    Nn,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Pisgd,
    Sgd,
    Both,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Pisgd => Algorithm::Pisgd,
            AlgorithmArg::Sgd => Algorithm::Sgd,
            AlgorithmArg::Both => Algorithm::Both,
        }
    }
}

/// Objective selection shared by `run` (without a config) and `audit`.
#[derive(Args, Clone)]
struct ObjectiveArgs {
    #[arg(long, value_enum)]
    objective: Option<ObjectiveKind>,
    /// Dimension of the `max` objective.
    #[arg(long)]
    dim: Option<usize>,
    /// Starting point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x1: Option<Vec<f64>>,
    /// Layer sizes `N1,N2,N3` of the network objective.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long)]
    relu_cap: Option<f64>,
    /// Labelled CSV (`label,x1,…`) for the network objective.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Use generated blobs with this many samples instead of a dataset file.
    #[arg(long)]
    synthetic_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl ObjectiveArgs {
    fn to_config(&self) -> Result<Option<ObjectiveConfig>> {
        let Some(kind) = self.objective else {
            return Ok(None);
        };
        let cfg = match kind {
            ObjectiveKind::Abs => ObjectiveConfig::Abs {
                x1: match self.x1.as_deref() {
                    None => 1.0,
                    Some([v]) => *v,
                    Some(_) => return Err(Error::Config("--x1 takes one value for the abs objective".into())),
                },
            },
            ObjectiveKind::Max => ObjectiveConfig::Max {
                dim: self
                    .dim
                    .or(self.x1.as_ref().map(Vec::len))
                    .ok_or_else(|| Error::Config("--dim is required for the max objective".into()))?,
                x1: self.x1.clone(),
            },
            ObjectiveKind::Nn => {
                let layers: [usize; 3] = self
                    .layers
                    .clone()
                    .ok_or_else(|| Error::Config("--layers N1,N2,N3 is required for the nn objective".into()))?
                    .try_into()
                    .map_err(|_| Error::Config("--layers takes exactly three sizes".into()))?;
                let synthetic = self.synthetic_samples.map(|samples| BlobConfig {
                    samples,
                    dim: layers[0],
                    classes: layers[2],
                    seed: self.data_seed,
                    ..Default::default()
                });
                ObjectiveConfig::Nn {
                    layers,
                    relu_cap: self.relu_cap.unwrap_or(1.0),
                    dataset: self.dataset.clone(),
                    synthetic,
                }
            }
        };
        Ok(Some(cfg))
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    objective: ObjectiveArgs,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    k_total: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    trace_stride: Option<usize>,
    /// Stop each run at its sampled index instead of tracing all K iterations.
    #[arg(long)]
    until_stop: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig {
                objective: self
                    .objective
                    .to_config()?
                    .ok_or_else(|| Error::Config("give --config or --objective".into()))?,
                algorithm: AlgorithmConfig {
                    name: self
                        .algorithm
                        .map(Into::into)
                        .ok_or_else(|| Error::Config("missing field `algorithm.name` (--algorithm)".into()))?,
                    k_total: self
                        .k_total
                        .ok_or_else(|| Error::Config("missing field `algorithm.k_total` (--k-total)".into()))?,
                    beta: None,
                    theta: None,
                    step: None,
                    batch: None,
                    radius: None,
                    delta: None,
                },
                run: RunConfig::default(),
            },
        };
        if let Some(o) = self.objective.to_config()? {
            cfg.objective = o;
        }
        let a = &mut cfg.algorithm;
        if let Some(v) = self.algorithm {
            a.name = v.into();
        }
        if let Some(v) = self.k_total {
            a.k_total = v;
        }
        // choosing one parametrisation on the command line drops the other from the file
        if self.beta.is_some() {
            a.batch = None;
            a.radius = None;
            a.beta = self.beta;
        }
        if self.batch.is_some() || self.radius.is_some() {
            a.beta = None;
            a.theta = None;
        }
        if self.theta.is_some() {
            a.step = None;
            a.theta = self.theta;
        }
        if let Some(v) = self.step {
            if a.beta.is_some() {
                a.theta = None;
            }
            a.step = Some(v);
        }
        if let Some(v) = self.batch {
            a.batch = Some(v);
        }
        if let Some(v) = self.radius {
            a.radius = Some(v);
        }
        if let Some(v) = self.delta {
            a.delta = Some(v);
        }
        let r = &mut cfg.run;
        if let Some(v) = self.repeats {
            r.repeats = v;
            if self.seeds.is_none() {
                r.seeds = None;
            }
        }
        if let Some(v) = self.seed {
            r.seed = v;
            r.seeds = None;
        }
        if let Some(v) = &self.seeds {
            r.repeats = v.len();
            r.seeds = Some(v.clone());
        }
        if let Some(v) = self.trace_stride {
            r.trace_stride = v;
        }
        if self.until_stop {
            r.trace = TraceExtent::UntilStop;
        }
        if let Some(v) = &self.output_dir {
            r.output_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    eps1: f64,
    #[arg(long)]
    eps2: f64,
    /// Failure probability; adds the multi-run plan.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
    #[arg(long, default_value_t = DEFAULT_PHI)]
    phi: f64,
    /// TOML with `l0`, `q`, `delta`, `dim` and optionally `theta`.
    #[arg(long)]
    constants: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AuditArgs {
    /// Flattened iterate, one value per line.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Take the objective from an experiment TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    objective: ObjectiveArgs,
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Reduce features by PCA to this share of explained variance.
    #[arg(long)]
    pca: Option<f64>,
    /// Where to write the PCA mean and components.
    #[arg(long, requires = "pca")]
    projection_out: Option<PathBuf>,
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let out = run_experiment(&cfg)?;
    let s = &out.summary;
    let sch = &s.schedule;
    println!(
        "d = {}  L0 = {}  Q = {}  K = {}  S = {}  sigma = {}  eta = {}",
        sch.dim, sch.l0, sch.q, sch.k_total, sch.batch, sch.radius, sch.step
    );
    if let (Some(beta), Some(theta), Some(b)) = (sch.beta, sch.theta, sch.bound_rhs) {
        println!("beta = {beta}  theta = {theta}  bound = {b}");
    }
    for a in &s.algorithms {
        println!(
            "{}: mean initial loss {:.6}, mean final loss {:.6}, mean loss at x^R {:.6}",
            a.name, a.mean_initial_loss, a.mean_final_loss, a.mean_output_loss
        );
    }
    if let Some(c) = &s.comparison {
        println!("final loss ratio pisgd/sgd = {:.4}", c.final_loss_ratio);
    }
    println!("wrote {} files to {}", out.files.len(), cfg.run.output_dir.display());
    Ok(())
}

fn print_plan(r: &PlanReport) {
    println!("K* = {}", r.optimal.k_total);
    println!("beta* = {}", r.optimal.beta);
    println!("S = {}", r.schedule.batch);
    println!("sigma = {}", r.schedule.radius);
    println!("eta = {}", r.schedule.step);
    println!("bound = {}", r.bound);
    println!("gradient calls = {}", r.gradient_calls);
    if let (Some(h), Some(hs)) = (&r.high_probability, &r.high_probability_schedule) {
        println!("high-probability plan (gamma = {}, c = {}, phi = {}):", h.gamma, h.c, h.phi);
        println!("  runs = {}", h.runs);
        println!("  psi = {}", h.psi);
        println!("  validation samples T = {}", h.validation_samples);
        println!("  eps2' = {}", h.eps2_inner);
        println!("  K = {}  beta = {}", h.k_total, h.beta);
        println!("  S = {}  sigma = {}  eta = {}", hs.batch, hs.radius, hs.step);
        println!("  gradient calls = {}", h.gradient_calls());
    }
}

fn cmd_plan(args: &PlanArgs) -> Result<()> {
    let consts = load_constants(&args.constants)?;
    let report = plan(args.eps1, args.eps2, args.gamma, args.c, args.phi, &consts)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print_plan(&report);
    }
    Ok(())
}

fn cmd_audit(args: &AuditArgs) -> Result<()> {
    let objective = match (&args.config, args.objective.to_config()?) {
        (_, Some(o)) => o,
        (Some(path), None) => ExperimentConfig::load(path)?.objective,
        (None, None) => return Err(Error::Config("give --config or --objective".into())),
    };
    let built = BuiltObjective::build(&objective)?;
    let x = read_checkpoint(&args.checkpoint)?;
    let report = audit(built.as_dyn(), &x, args.sigma, args.samples, args.seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        fs::write(path, format!("{json}\n"))?;
    }
    if args.json {
        println!("{json}");
    } else {
        let e = &report.estimate;
        println!("averaged gradient norm = {} (T = {}, sigma = {})", e.norm, e.samples_used, e.radius);
        if let Some(h) = report.hull_bound {
            println!("min-norm hull bound = {h}");
        }
    }
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut data = synthetic_blobs(&BlobConfig {
        samples: args.n,
        dim: args.dim,
        classes: args.classes,
        separation: args.separation,
        noise: args.noise,
        seed: args.seed,
    })?;
    if let Some(explained) = args.pca {
        let rows: Vec<Vec<f64>> = data.iter().map(|s| s.features.clone()).collect();
        let pca = pca_reduce(&rows, explained)?;
        if pca.degenerate {
            eprintln!("warning: features have zero variance; keeping a single zero column");
        }
        data = data
            .iter()
            .zip(pca.reduced.iter())
            .map(|(s, r)| LabeledSample::new(r.clone(), s.class, args.classes))
            .collect::<Result<_>>()?;
        if let Some(p) = &args.projection_out {
            save_projection(p, &pca)?;
        }
        println!(
            "kept {} of {} components ({:.4} of variance)",
            pca.components(),
            args.dim,
            pca.explained
        );
    }
    write_dataset(&args.out, &data)?;
    println!("wrote {} samples to {}", data.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Audit(a) => cmd_audit(a),
        Command::GenData(a) => cmd_gen_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
