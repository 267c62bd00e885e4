//! Shared scenario builders for the benchmark suite.

use corrpost_core::{Alpha, Hyperparameters, PosteriorModel, SufficientStats};

/// Posterior at the reference configuration used throughout the benches.
pub fn reference_model(n: u32, r: f64) -> PosteriorModel {
    let stats = SufficientStats::new(n, 0.0, 0.0, 1.0, 1.0, r).expect("valid stats");
    let eta = Hyperparameters::new(Alpha::Value(1.0), 0.0, 0.0, 0.0).expect("valid prior");
    PosteriorModel::new(stats, eta).expect("valid model")
}

/// Same data bound to the general-β series path.
pub fn general_beta_model(n: u32, r: f64, beta: f64) -> PosteriorModel {
    let stats = SufficientStats::new(n, 0.0, 0.0, 1.0, 1.0, r).expect("valid stats");
    let eta = Hyperparameters::new(Alpha::Value(1.0), beta, 0.0, 0.0).expect("valid prior");
    PosteriorModel::new(stats, eta).expect("valid model")
}
