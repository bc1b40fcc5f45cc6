//! Adam with weight norm control.
//!
//! Decoupled weight decay shrinks the controlled weights toward zero. Weight
//! norm control instead pulls their L2 norm toward a scheduled target
//! r_t·‖θ₀‖ at rate k_t, and reduces to decay when r_t = 0. This crate has
//! the optimizer, its schedules, toy objectives and a small experiment
//! harness with an independent reference implementation for testing.

pub mod error;
pub mod harness;
pub mod kvtext;
pub mod optim;
pub mod par;
pub mod param_store;
pub mod schedules;
pub mod tasks;
pub mod verify;

pub use error::{Error, Result};
pub use optim::{OptimizerConfig, OptimizerState, Regularization, StepReport, Variant};
pub use param_store::{ParamGroup, ParamStore};
pub use schedules::{CosineSpec, PiecewiseLinear, ScheduleSpec, TargetNormMode};
pub use tasks::{Batch, Task, TaskKind, TaskSpec};
