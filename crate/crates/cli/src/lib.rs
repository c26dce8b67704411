//! Command implementations behind the `convtensor` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, CliResult};
