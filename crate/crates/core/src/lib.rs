//! Distributed accelerated cubic-regularized Newton method for regularized
//! finite sums whose shards are statistically similar.
//!
//! A master node combines gathered worker gradients with its own local
//! Hessian, shifted by the similarity constant `β`, and takes cubic steps
//! inside an accelerated scheme. [`restart`] adds linear convergence for
//! strongly convex objectives and [`baselines`] provides the comparison
//! methods.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acn;
pub mod baselines;
pub mod cubic;
pub mod error;
pub mod objective;
pub mod reference;
pub mod restart;
pub mod rng;
pub mod runtime;
pub mod saa;
pub mod trace;
pub mod wire;

pub use acn::{acn_run, AcnParams, AcnState, EsCoefficient};
pub use baselines::{agd_run, cubic_newton_run, AgdParams};
pub use cubic::{solve_cubic_subproblem, sym_eig, CubicStep, CubicSubproblem, EigenFactorization, EstimateSequence};
pub use error::{Error, Result};
pub use objective::{gen_synthetic, DataSample, Dataset, LipschitzConstants, ObjectiveKind, ObjectiveShard};
pub use reference::{reference_solve, ReferenceOptions, ReferenceSolution};
pub use restart::{run_restarted, RestartPlan, RestartRun, RestartStop, RestartTrace, StageRecord};
pub use runtime::{DistRuntime, GatherResult, RuntimeOptions, Transport};
pub use saa::{estimate_beta, random_probes, shard_dataset, similarity_bound, MuRule, SaaProblem, SimilarityReport};
pub use trace::{MethodRun, Reference, TracePoint};
