//! Gradient-rectified unlearning on small autoregressive token models.
//!
//! The numeric core is generic over the scalar type (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the harness uses.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod checkpoint;
pub mod error;
pub mod finite_diff;
pub mod gru;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod theory;
pub mod tru;
pub mod vector;

pub use error::{Error, Result};
pub use model::{ModelKind, Split, TokenDataset, TokenSequence};
pub use scalar::Scalar;
pub use vector::{Layout, Segment};

pub type ParamVector = vector::Params<f64>;
pub type GradientVector = vector::Grad<f64>;
pub type Model = model::Model<f64>;
pub type GruState = gru::GruState<f64>;
pub type TaskVector = tru::TaskVector<f64>;
pub type CalibrationResult = calibration::CalibrationResult<f64>;
