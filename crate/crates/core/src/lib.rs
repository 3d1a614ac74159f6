//! Structured Voronoi sampling.
//!
//! Discrete distributions over `[M]^N` are lifted to densities on `R^{N d}` by
//! partitioning space into Voronoi cells around token embeddings. Samplers
//! explore the lifted density with refraction-reflection HMC and map samples
//! back to tokens by nearest-center projection.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod measures;
pub mod models;
pub mod samplers;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{
    boundary_gap, first_crossing, first_crossing_in, linear_index, nearest_center,
    structured_project, unravel_index, BoundingBox, CrossingEvent, CrossingKind, EmbeddingTable,
};
pub use measures::{
    anneal, anneal_probs, BaseCenter, BaseMeasureSpec, BaseMode, EmbeddingAugmentedDistribution,
    MassCache, MassEstimate, PotentialValue, Target, VoronoiMeasureSpec,
};
pub use models::{
    exact_distribution, Control, ExactTable, LinearAttributeClassifier, ModelSnapshot, TinyEmbedLM,
};
pub use samplers::{
    find_disc, refract_reflect, run_chain, Algorithm, ChainState, MomentumScale, RefractionForm,
    RunRecord, SamplerConfig, StepDecay, StepOutcome,
};
