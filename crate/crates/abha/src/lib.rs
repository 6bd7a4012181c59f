//! File formats, experiment harness and command-line front end for the
//! tracking core.

pub use abha_core as core;

pub mod cli;
pub mod io;
