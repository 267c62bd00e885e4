//! Analytic marginal posterior of Pearson's correlation coefficient under a
//! four-hyperparameter prior class, with an independence-chain Metropolis
//! sampler and numerical-integration oracles for verification.

// Validation deliberately writes `!(x > 0.0)` instead of `x <= 0.0`: the
// negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod model;
pub mod oracle;
pub mod posterior;
pub mod quad;
pub mod sampler;
pub mod specfun;

pub use model::{
    ingest, prior_density, prior_norm_constant, read_csv_file, read_csv_pairs, Alpha,
    Hyperparameters, ModelError, PriorPreset, SufficientStats,
};
pub use oracle::{FullParams, OracleError, PosteriorFunctional};
pub use posterior::{MomentResult, PosteriorError, PosteriorModel};
pub use quad::{QuadError, QuadResult};
pub use sampler::{ChainConfig, ChainResult, SamplerError};
pub use specfun::{HypParams, SeriesControl, SpecFunError};
