//! Domain model: sufficient statistics of paired data, the four-parameter
//! prior class on (ρ, σ₁, σ₂), named presets, and the normalized prior
//! density on ρ.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::specfun::{self, SeriesControl};

/// Margin used when clamping the sample correlation away from ±1.
pub const R_CLAMP_MARGIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("invalid statistics: {0}")]
    InvalidStats(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error(transparent)]
    SpecFun(#[from] specfun::SpecFunError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Everything the posterior needs from bivariate data:
/// `(n, x̄₁, x̄₂, s₁, s₂, r)`, where sᵢ² is the *average* sum of squares
/// (the 1/n convention, not 1/(n−1)) and r the sample correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientStats {
    pub n: u32,
    pub xbar1: f64,
    pub xbar2: f64,
    pub s1: f64,
    pub s2: f64,
    pub r: f64,
}

impl SufficientStats {
    /// Build from summary values. `r` is clamped into
    /// `[-1 + 1e-9, 1 - 1e-9]`; use [`SufficientStats::r_is_clamped`] to
    /// detect whether clamping occurred.
    pub fn new(n: u32, xbar1: f64, xbar2: f64, s1: f64, s2: f64, r: f64) -> Result<Self> {
        if n < 2 {
            return Err(ModelError::InvalidStats(format!(
                "need n >= 2 (got n = {n})"
            )));
        }
        if !(s1 > 0.0) || !(s2 > 0.0) {
            return Err(ModelError::InvalidStats(format!(
                "scale statistics must be positive (got s1 = {s1}, s2 = {s2})"
            )));
        }
        if !r.is_finite() || r.abs() > 1.0 {
            return Err(ModelError::InvalidStats(format!(
                "correlation must lie in [-1, 1] (got r = {r})"
            )));
        }
        if ![xbar1, xbar2].iter().all(|v| v.is_finite()) {
            return Err(ModelError::InvalidStats("means must be finite".into()));
        }
        Ok(SufficientStats {
            n,
            xbar1,
            xbar2,
            s1,
            s2,
            r: clamp_r(r),
        })
    }

    /// True when a raw correlation would be clamped by [`SufficientStats::new`].
    pub fn r_is_clamped(raw_r: f64) -> bool {
        raw_r.abs() > 1.0 - R_CLAMP_MARGIN
    }

    pub fn n_f64(&self) -> f64 {
        f64::from(self.n)
    }
}

fn clamp_r(r: f64) -> f64 {
    r.clamp(-1.0 + R_CLAMP_MARGIN, 1.0 - R_CLAMP_MARGIN)
}

/// Compute sufficient statistics from raw pairs.
///
/// Fails on fewer than two rows or a constant column.
pub fn ingest(pairs: &[(f64, f64)]) -> Result<SufficientStats> {
    let n = pairs.len();
    if n < 2 {
        return Err(ModelError::DegenerateData(format!(
            "need at least 2 rows (got {n})"
        )));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(ModelError::DegenerateData("non-finite value in data".into()));
    }
    let nf = n as f64;
    let xbar1 = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let xbar2 = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let mut ss1 = 0.0;
    let mut ss2 = 0.0;
    let mut cross = 0.0;
    for &(x, y) in pairs {
        let d1 = x - xbar1;
        let d2 = y - xbar2;
        ss1 += d1 * d1;
        ss2 += d2 * d2;
        cross += d1 * d2;
    }
    let s1 = (ss1 / nf).sqrt();
    let s2 = (ss2 / nf).sqrt();
    if s1 == 0.0 {
        return Err(ModelError::DegenerateData("first column is constant".into()));
    }
    if s2 == 0.0 {
        return Err(ModelError::DegenerateData(
            "second column is constant".into(),
        ));
    }
    let r = cross / (nf * s1 * s2);
    SufficientStats::new(n as u32, xbar1, xbar2, s1, s2, r)
}

/// The exponent α of the prior factor (1−ρ²)^{α−1}: either a strictly
/// positive value or the symbolic Lindley limit α → 0⁺.
///
/// The limit is a flag rather than α = 0.0 so that every operation can
/// branch to the fused limit formulas instead of meeting Γ(α)-driven
/// infinities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    /// α → 0⁺ (improper reference prior).
    Limit,
    /// α > 0.
    Value(f64),
}

impl Alpha {
    /// Numeric value entering the fused formulas: the limit contributes 0.
    pub fn value(&self) -> f64 {
        match self {
            Alpha::Limit => 0.0,
            Alpha::Value(a) => *a,
        }
    }

    pub fn is_limit(&self) -> bool {
        matches!(self, Alpha::Limit)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Limit => write!(f, "limit"),
            Alpha::Value(a) => write!(f, "{a}"),
        }
    }
}

/// η = (α, β, γ, δ): exponents of the prior class
/// `(1−ρ²)^{α−1} (1+ρ²)^{β/2} σ₁^{γ−1} σ₂^{δ−1}`.
///
/// γ and δ may be any reals at construction; whether they are usable is a
/// property of the data size and is checked by [`Hyperparameters::theorem_valid`]
/// and [`Hyperparameters::posterior_valid`] at analysis time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    alpha: Alpha,
    beta: f64,
    gamma: f64,
    delta: f64,
}

impl Hyperparameters {
    pub fn new(alpha: Alpha, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        if let Alpha::Value(a) = alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(ModelError::InvalidHyperparameters(format!(
                    "alpha must be > 0 or the explicit limit flag (got {a})"
                )));
            }
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(ModelError::InvalidHyperparameters(format!(
                "beta must be >= 0 (got {beta}); negative beta has no convergence guarantee"
            )));
        }
        if !gamma.is_finite() || !delta.is_finite() {
            return Err(ModelError::InvalidHyperparameters(
                "gamma and delta must be finite".into(),
            ));
        }
        Ok(Hyperparameters {
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Conditions for the reduced-likelihood factorization:
    /// `n > γ+1` and `n > δ+1`.
    pub fn theorem_valid(&self, n: u32) -> bool {
        let nf = f64::from(n);
        nf > self.gamma + 1.0 && nf > self.delta + 1.0
    }

    /// Conditions for the marginal posterior of ρ to be normalizable:
    /// the factorization conditions plus `n > γ+δ−2α+1`.
    pub fn posterior_valid(&self, n: u32) -> bool {
        let nf = f64::from(n);
        self.theorem_valid(n) && nf > self.gamma + self.delta - 2.0 * self.alpha.value() + 1.0
    }
}

/// Named priors contained in the class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorPreset {
    /// Uniform prior on ρ: α=1, β=γ=δ=0.
    Jeffreys,
    /// Reference prior, α→0⁺ with β=γ=δ=0.
    Lindley,
    /// α→0⁺, β=0, γ=−1, δ=1.
    RightHaar,
    /// α→0⁺, β=1, γ=δ=0.
    OneAtATimeReference,
    /// α=b/2−1, β=0, γ=a−2, δ=b−1.
    GeneralizedWishart { a: f64, b: f64 },
}

impl PriorPreset {
    /// Resolve the preset into explicit hyperparameters. Construction never
    /// fails for the named presets; a generalized Wishart with `b < 2` would
    /// need α < 0 and is rejected.
    pub fn resolve(&self) -> Result<Hyperparameters> {
        match *self {
            PriorPreset::Jeffreys => Hyperparameters::new(Alpha::Value(1.0), 0.0, 0.0, 0.0),
            PriorPreset::Lindley => Hyperparameters::new(Alpha::Limit, 0.0, 0.0, 0.0),
            PriorPreset::RightHaar => Hyperparameters::new(Alpha::Limit, 0.0, -1.0, 1.0),
            PriorPreset::OneAtATimeReference => {
                Hyperparameters::new(Alpha::Limit, 1.0, 0.0, 0.0)
            }
            PriorPreset::GeneralizedWishart { a, b } => {
                let alpha = b / 2.0 - 1.0;
                let alpha = if alpha == 0.0 {
                    Alpha::Limit
                } else {
                    Alpha::Value(alpha)
                };
                Hyperparameters::new(alpha, 0.0, a - 2.0, b - 1.0)
            }
        }
    }
}

/// Normalization constant of the prior on ρ:
/// `C_{α,β} = B(1/2, α) ₂F₁(−β/2, 1/2; α+1/2; −1)`, which equals
/// `∫_{−1}^{1} (1−ρ²)^{α−1} (1+ρ²)^{β/2} dρ`.
///
/// Requires α > 0 strictly: at the Lindley limit the prior is improper.
pub fn prior_norm_constant(eta: &Hyperparameters, ctrl: &SeriesControl) -> Result<f64> {
    let Alpha::Value(alpha) = eta.alpha else {
        return Err(ModelError::InvalidHyperparameters(
            "the improper limit prior has no normalization constant".into(),
        ));
    };
    let b = specfun::beta(0.5, alpha)?;
    let f = specfun::hyp2f1_at_neg_one(-eta.beta / 2.0, 0.5, alpha + 0.5, ctrl)?;
    Ok(b * f)
}

/// Normalized prior density `π_{α,β}(ρ)` on (−1, 1). Requires α > 0.
pub fn prior_density(rho: f64, eta: &Hyperparameters, ctrl: &SeriesControl) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(ModelError::InvalidStats(format!(
            "prior density requires |rho| < 1 (got {rho})"
        )));
    }
    let c = prior_norm_constant(eta, ctrl)?;
    let alpha = eta.alpha.value();
    let omrs = (1.0 - rho) * (1.0 + rho);
    Ok(omrs.powf(alpha - 1.0) * (1.0 + rho * rho).powf(eta.beta / 2.0) / c)
}

/// Read two-column numeric CSV data.
///
/// Contract: comma delimiter, decimal point, an optional single header row
/// auto-detected by a non-numeric first row; any later non-numeric field is
/// an error naming the 1-based row.
pub fn read_csv_pairs<R: std::io::Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut pairs = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| ModelError::Csv(format!("row {row}: {e}")))?;
        if record.len() != 2 {
            return Err(ModelError::Csv(format!(
                "row {row}: expected 2 columns, found {}",
                record.len()
            )));
        }
        let parsed: (std::result::Result<f64, _>, std::result::Result<f64, _>) = (
            record[0].trim().parse::<f64>(),
            record[1].trim().parse::<f64>(),
        );
        match parsed {
            (Ok(x), Ok(y)) => pairs.push((x, y)),
            (Err(_), _) | (_, Err(_)) => {
                if row == 1 && pairs.is_empty() {
                    // header row
                    continue;
                }
                return Err(ModelError::Csv(format!(
                    "row {row}: non-numeric field in \"{}\"",
                    record.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
    }
    Ok(pairs)
}

/// [`read_csv_pairs`] from a file path.
pub fn read_csv_file(path: &Path) -> Result<Vec<(f64, f64)>> {
    let file = std::fs::File::open(path)
        .map_err(|e| ModelError::Csv(format!("{}: {e}", path.display())))?;
    read_csv_pairs(file)
}
