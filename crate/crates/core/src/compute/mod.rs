//! Minimal differentiable compute core for the layer family used by the
//! lifting network: dense, batch normalization, dropout, (Leaky-)ReLU and
//! residual blocks, plus Adam and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod layers;
mod matrix;
mod param;
mod rng;

use thiserror::Error;

pub use adam::{lr_schedule, Adam, AdamConfig};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use layers::{
    dropout, dropout_backward, leaky_relu, leaky_relu_backward, Activation, BatchNorm, BatchNormCache, Dense,
    Mode, ResidualBlock, ResidualCache, BN_EPSILON, BN_MOMENTUM,
};
pub use matrix::Matrix;
pub use param::{Param, Parameterized};
pub use rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComputeError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("batch normalization needs at least 2 rows in training mode, got {0}")]
    BatchTooSmall(usize),
}
