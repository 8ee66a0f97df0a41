//! Comparison-based nearest-neighbor search over a hidden space.
//!
//! Search and indexing code sees the space only through an
//! [`OracleSession`], which answers "is `u` or `v` closer to `q`?" and
//! counts every question. Ground-truth rank machinery in [`ranks`] is the
//! verification layer.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annulus;
pub mod bintree;
pub(crate) mod codec;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod hier;
pub mod oracle;
pub mod ranks;
pub mod rsh;
pub mod scalar;
pub mod space;
pub mod star;

pub use annulus::{AnnulusIndex, AnnulusParams, AnnulusSearchTrace};
pub use bintree::{
    build_tree, good_cut_count, good_cut_probability, phi_distinct, phi_exact, phi_exhaustive, popularity_scores,
    rank_ball_cut, AnchorDraw, BinTree, CutResult, GoodCutModel, PopularityEstimate,
};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use experiments::{Experiment, ExperimentReport, SuiteConfig, TrialRecord};
pub use hier::{verify_sampling_properties, BuildConfig, HierIndex, HierSearch, SamplingPropertyReport};
pub use oracle::{insertion_bound, LedgerSnapshot, OracleSession, Phase, Point, QuestionLedger};
pub use ranks::{
    annulus_bounds, compute_rank_matrix, diameter, disorder_constant, distortion_fit, rank_ball, rho_l1,
    AnnulusBounds, DisorderResult, DistortionFit, QueryRanks, RankMatrix, RankMode,
};
pub use rsh::{collision_prob_exact, derive_params, hash_value, HashSpec, RshParams, RshQueryTrace, RshTableSet};
pub use scalar::{Exact, RankReal, Scalar};
pub use space::{GroundTruth, HiddenSpace, QueryPoint, SpaceKind};
pub use star::{make_star_graph, StarInstance};

pub type HiddenSpaceF64 = HiddenSpace<f64>;
pub type HiddenSpaceF32 = HiddenSpace<f32>;
pub type StarInstanceF64 = StarInstance<f64>;
