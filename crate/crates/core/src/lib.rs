#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod abha;
pub mod assignment;
pub mod encoder;
pub mod error;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod mht;
pub mod model;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
pub use linalg::Matrix;
