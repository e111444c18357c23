//! Numeric building blocks: arrays, parameters, the optimizer, losses and
//! gradient verification.

pub mod activation;
mod adam;
mod array;
mod gradcheck;
pub mod linalg;
mod loss;
mod params;

pub use adam::AdamState;
pub use array::NumArray;
pub use gradcheck::{grad_check, FnObjective, Objective, MIN_PROBES};
pub use loss::{masked_mse, masked_mse_grad};
pub use params::{GradMap, Init, Param, ParamStore};
