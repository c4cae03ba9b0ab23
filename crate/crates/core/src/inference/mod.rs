//! Null distributions and thresholding: Monte Carlo max-statistic FWE, exact
//! nulls by iterated histogram combination, Benjamini-Hochberg FDR, fixed
//! conservative cutoffs, connected-component labeling and cluster-extent FWE.
//!
//! The MKDA/SDM Monte Carlo null follows the focus-level randomisation
//! (every focus redrawn independently); the exact enumeration reuses each
//! study's whole-map value histogram and therefore preserves the per-study
//! arrangement, mirroring the two descriptions the methods came with.

mod cache;
mod cluster;
mod null;
mod threshold;

pub use cache::{load_null, save_null};
pub use cluster::{cluster_label, Cluster, Connectivity};
pub use null::{
    ale_exact_null, exact_null, mc_null_max, mc_null_max_cluster, mc_null_oracle,
    null_fingerprint, statistic_and_exact_null, value_at_tail_p, ExactNullBuilder,
    NullDistribution, NullKind,
};
pub use threshold::{
    cluster_fwe, fdr_threshold, fixed_threshold, fwe_threshold, p_uncorrected, Procedure,
    ThresholdResult,
};
