//! Robust inverse optimal transport: learn a matching cost from noisy
//! matching data, then predict matchings for new populations.
//!
//! The modules are layered bottom-up:
//!
//! * [`types`]: validated containers (probability vectors, couplings, costs).
//! * [`entropic`]: Sinkhorn scaling, regularized OT distance and its dual.
//! * [`kernel`]: the cost model `C(A) = f(U^T A V)` and its derivative.
//! * [`iot`]: fixed-marginal inverse OT baseline.
//! * [`riot`]: the robust estimator with relaxed marginals.
//! * [`joint`]: learning the side costs jointly, with metric projection.
//! * [`analysis`]: error metrics and verifiable bounds.
//! * [`synth`]: seeded synthetic experiments.
//! * [`cli`]: the `riot` command-line tool.

pub mod analysis;
pub mod cli;
pub mod entropic;
pub mod error;
pub mod io;
pub mod iot;
pub mod joint;
pub mod kernel;
pub mod riot;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    marginals, normalize_counts, CostMatrix, CouplingMatrix, HyperParams, InteractionMatrix, MarginalPair,
    MatchCounts, MetricMatrix, ProbabilityVector, ProfileSet,
};
