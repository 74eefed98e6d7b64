//! Learning the hidden rates of a parametric continuous-time Markov chain
//! from aggregate steady-state counts observed on a subset of its states.
//!
//! The pipeline is: build `Q(x, θ)` for a model family ([`models`]),
//! uniformize it into a DTMC ([`chain`]), score observation windows with a
//! conditional multinomial likelihood ([`likelihood`]), differentiate the
//! steady state with one of the gradient engines ([`gradients`]) and run
//! projected SGD ([`optimizer`]). [`simulator`] produces synthetic windows
//! and [`harness`] ties everything to config files and CSV output.
//!
//! The numerical kernel is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the optimizer and harness use.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod gradients;
pub mod harness;
pub mod likelihood;
pub mod models;
pub mod optimizer;
pub mod rng;
pub mod scalar;
pub mod simulator;

pub use scalar::Scalar;

pub use chain::{ChainError, SteadyStateMethod};
pub use gradients::{Engine, GradientError, StoppingRule};
pub use likelihood::{LikelihoodError, ObservationWindow, ObservedStateSet};
pub use models::{ModelError, ParametricModel, SparseJacobian};
pub use optimizer::{EngineKind, FitError, FitResult, OptimizerConfig, Schedule};
pub use simulator::{SimulationConfig, SimulationError};

pub type RateMatrix = chain::RateMatrix<f64>;
pub type UniformizedChain = chain::UniformizedChain<f64>;
pub type SteadyState = chain::SteadyState<f64>;
pub type ParamVector = models::ParamVector<f64>;
pub type Relaxation = models::Relaxation<f64>;
pub type GradientEstimate = gradients::GradientEstimate<f64>;
pub type DpDq = gradients::DpDq<f64>;

pub type RateMatrix32 = chain::RateMatrix<f32>;
pub type UniformizedChain32 = chain::UniformizedChain<f32>;
pub type SteadyState32 = chain::SteadyState<f32>;
