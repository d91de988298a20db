//! Perturbed iterate SGD (PISGD) for Lipschitz continuous, possibly nonsmooth and
//! nonconvex stochastic objectives.
//!
//! * [`ball`]: uniform sampling on Euclidean balls and related constants
//! * [`objective`]: the `F(w, ξ)` oracle trait and built-in test objectives
//! * [`optimizer`]: PISGD, mini-batch SGD and the deterministic update
//! * [`planner`]: step size, radius, batch and iteration budgets with their guarantees
//! * [`stationarity`]: upper bounds on the distance from zero to the Goldstein subdifferential
//! * [`nn`]: a one-hidden-layer classifier with explicit backpropagation
//! * [`experiment`]: configuration-driven runs producing CSV traces and JSON summaries

pub mod ball;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod objective;
pub mod optimizer;
pub mod planner;
pub mod rng;
pub mod stationarity;

pub use ball::{ball_density_constant, double_factorial_ratio, expected_norm, BallSampler};
pub use error::{Error, Result};
pub use objective::{abs_value_objective, finite_sum_objective, Sample, StochasticObjective};
pub use optimizer::{pisgd_run, sgd_run, PisgdConfig, RunRecord, Trace};
pub use planner::{
    bound_rhs, complexity_estimate, high_prob_plan, optimal_plan, theorem_schedule, HighProbPlan,
    ProblemConstants,
};
pub use stationarity::{averaged_gradient, min_norm_point, select_best, GradientEstimate};
