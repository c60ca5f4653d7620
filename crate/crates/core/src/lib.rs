//! Particle methods for diffusions killed on leaving a bounded domain and
//! conditioned on survival, together with their Fleming-Viot reinsertion
//! counterparts.
//!
//! The crate is generic over the scalar type (`f32` or `f64`, see [`Real`]);
//! the `*64` aliases below fix it to `f64`, which is what the CLI and the
//! acceptance suite use.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fleming_viot;
pub mod geometry;
pub mod io;
pub mod killed_sim;
pub mod linalg;
pub mod measures;
pub mod mimic;
pub mod model;
pub mod picard;
pub mod renewal;
pub mod reward_opt;
pub mod rng;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Domain64 = geometry::Domain<f64>;
pub type Domain32 = geometry::Domain<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type EmpiricalMeasure64 = measures::EmpiricalMeasure<f64>;
pub type EmpiricalMeasure32 = measures::EmpiricalMeasure<f32>;
pub type MeasureFlow64 = measures::MeasureFlow<f64>;
pub type ModelSpec64 = model::ModelSpec<f64>;
pub type ModelSpec32 = model::ModelSpec<f32>;
pub type FeedbackPolicy64 = model::FeedbackPolicy<f64>;
pub type OpenLoopControl64 = model::OpenLoopControl<f64>;
pub type RewardSpec64 = model::RewardSpec<f64>;
pub type SimConfig64 = killed_sim::SimConfig<f64>;
pub type KilledEnsemble64 = killed_sim::KilledEnsemble<f64>;
pub type FixedPointResult64 = picard::FixedPointResult<f64>;
pub type FvTrace64 = fleming_viot::FvTrace<f64>;
pub type RestartKernel64 = renewal::RestartKernel<f64>;
pub type RewardReport64 = reward_opt::RewardReport<f64>;
pub type OptResult64 = reward_opt::OptResult<f64>;
pub type RegressionGrid64 = mimic::RegressionGrid<f64>;
