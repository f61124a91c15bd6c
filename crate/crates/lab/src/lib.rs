//! Synthetic benchmark, experiment runner and reports for rectified unlearning.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corpus;
pub mod pretrain;
pub mod experiment;
pub mod report;
pub mod sweep;
pub mod theorems;

use unlearn_core::Error;

/// Process exit status for an error: 2 configuration or usage, 3 numeric
/// failure, 4 I/O or file format.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Domain(_) => 2,
        Error::Numeric { .. } | Error::Degenerate(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
    }
}
