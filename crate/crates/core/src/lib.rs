//! Sparse blind source separation of multichannel Poisson count data.
//!
//! The observations `X` (channels by pixels) are modeled as Poisson draws
//! around `A S`, with nonnegative spectra `A` (unit-ball columns) and
//! nonnegative source images `S` that are sparse in the starlet domain.
//! [`pgmca::pgmca_run`] estimates both factors; [`gmca::gmca_run`] and
//! [`evaluate::beta_nmf_kl`] are the baselines, [`simulate`] generates
//! synthetic data and [`evaluate::run_flux_sweep`] compares the methods.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod gmca;
pub mod linalg;
pub mod objective;
pub mod pgmca;
pub mod prox;
pub mod simulate;
pub mod solvers;
pub mod starlet;

pub use error::{Error, Result};
