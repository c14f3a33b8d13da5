//! Monte Carlo simulator for the downlink of clustered cell-free MIMO with
//! rate-splitting under imperfect CSIT.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod clustering;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod power;
pub mod precoding;
pub mod rates;
pub mod scheme;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use scheme::Scheme;
