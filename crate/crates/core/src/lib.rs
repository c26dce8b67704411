//! Convolutional dictionary learning through a third-order cumulant tensor
//! decomposition with circulant-structured factors, plus an alternating
//! minimization baseline and the tooling to compare them.

// `!(x >= 0.0)` style checks are there to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod altmin;
pub mod circulant;
pub mod cumulant;
pub mod decompose;
pub mod dense;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod parallel;
pub mod spectral;
pub mod synth;

pub use activation::ActivationSpec;
pub use circulant::{Filter, FilterBank};
pub use cumulant::{analytic_cumulant, CumulantUnfolding, MomentAccumulator};
pub use decompose::{AlsConfig, DecompOutcome, Mode};
pub use error::{Error, Result};
