//! Coordinate-based meta-analysis (CBMA) toolkit.
//!
//! Builds the MKDA, ALE and SDM statistic images from lists of reported
//! activation coordinates, performs Monte Carlo / exact-null / FDR / FWE
//! inference, and runs replicated power simulations over synthetic datasets.

pub mod cli;
pub mod data_model;
pub mod error;
pub mod inference;
pub mod kernel_maps;
pub mod power_eval;
pub mod rng;
pub mod simulation;
pub mod statistics;
pub mod util;

pub use error::CbmaError;
