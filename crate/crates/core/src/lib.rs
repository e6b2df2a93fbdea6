//! Certified ownership verification for embedding models.
//!
//! A model owner releases embeddings through a Gaussian mechanism, which caps
//! the mutual information any other model can share with the release. A
//! suspect model is then judged by estimating that mutual information with
//! the KSG estimator on a verification set and comparing it against a
//! threshold that comes with McDiarmid-style bounds on both error types.
//! A noise-scale trade-off between utility loss and verification entropy
//! picks the defense strength.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certification;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod ksg;
pub mod mechanism;
pub mod oracles;
pub mod quadrature;
pub mod record;
pub mod rng;
pub mod simulation;
pub mod special;
pub mod tradeoff;

pub use certification::{
    bounded_difference_constant, certify, credit_threshold, type1_bound, type2_bound, verify,
    Certificate, CertificationParams, Decision,
};
pub use embedding::{clip_embeddings, load_embeddings, save_embeddings, EmbeddingMatrix, Format};
pub use error::{Error, Result};
pub use exec::Exec;
pub use ksg::{knn_joint_radii, ksg_estimate, KsgConfig, NeighborStats};
pub use mechanism::{apply_mechanism, calibrate_sigma_dp, mi_upper_bound, DefenseParams};
pub use oracles::{
    binary_channel_mi, check_tightness, gaussian_mi_closed_form, monte_carlo_error_rates,
    tightness_check, ChannelSpec, GeneratorParams, MonteCarloOutcome, Scenario, TightnessReport,
};
pub use simulation::{
    decorrelation_attack, extract_surrogate, make_independent, make_teacher,
    run_separation_experiment, SimulationParams, SyntheticModel,
};
pub use special::digamma;
pub use tradeoff::{select_sigma, SigmaSelection, TradeoffConfig, TradeoffRow};
