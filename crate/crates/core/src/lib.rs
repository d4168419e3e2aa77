//! Noise-based function smoothing, the SGD / smoothed-GD correspondence and
//! graduated optimization schedules, exercised on small synthetic objectives.
//!
//! The crate is organised bottom-up:
//!
//! - [`noise`]: seeded noise laws, normalization and tail classification.
//! - [`objectives`]: benchmark functions, closed-form smoothed surrogates and
//!   linear-perturbation finite sums with exactly known gradient variance.
//! - [`smoothing`]: Monte Carlo estimates of `f_δ(x) = E[f(x - δu)]` and the
//!   inequality checks that go with them.
//! - [`optim`]: gradient descent, mini-batch SGD and phase schedules.
//! - [`graduated`]: plan construction and explicit / implicit execution.
//! - [`metrics`]: gradient variance, `C²` estimation, adaptive sharpness and
//!   convergence gaps.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err)]

pub mod error;
pub mod graduated;
pub mod metrics;
pub mod noise;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod smoothing;
pub mod stats;

pub use error::{Error, Result};
pub use graduated::{GraduatedPlan, PlanInputs, PlanMode, Preset, StepsRule};
pub use noise::{Family, NoiseDistribution, TailClass, TailLabel};
pub use objectives::{FiniteSum, Metadata, Objective};
pub use optim::{RunTrace, Schedule};
pub use smoothing::SmoothedEstimate;
