//! Marginal posterior of Pearson's ρ: the reduced likelihood, the marginal
//! likelihood at ρ = 0, posterior moments (general-β series and β = 0
//! closed forms), density, CDF and quantiles.
//!
//! The reduced likelihood is the ρ-dependent factor left after the means
//! and scales are integrated out against the prior class; it splits into an
//! even part and an odd part,
//!
//! ```text
//! h(n, r | ρ) = A + B,
//! A = (1−ρ²)^{(n−γ−δ−1)/2} ₂F₁((n−γ−1)/2, (n−δ−1)/2; 1/2; r²ρ²)
//! B = 2rρ (1−ρ²)^{(n−γ−δ−1)/2} W(n) ₂F₁((n−γ)/2, (n−δ)/2; 3/2; r²ρ²)
//! ```
//!
//! with `W(n) = Γ((n−γ)/2)Γ((n−δ)/2) / [Γ((n−γ−1)/2)Γ((n−δ−1)/2)]`.
//!
//! Densities and normalizers run in log space internally: the factor
//! (1−ρ²)^{(n−γ−δ−1)/2} underflows near |ρ| → 1 for large n, and the
//! hypergeometric sums overflow f64 long before the density itself does.

use std::cell::RefCell;
use std::collections::HashMap;

use thiserror::Error;

use crate::model::{Alpha, Hyperparameters, SufficientStats};
use crate::quad::{self, QuadError};
use crate::specfun::{
    self, log_add_exp, ln_beta, ln_hyp2f1_positive, ln_hyp_pfq_positive, log_gamma,
    SeriesControl, SpecFunError,
};

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("validity error: {0}")]
    Invalid(String),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

pub type Result<T> = std::result::Result<T, PosteriorError>;

/// A posterior moment E[ρᵏ | n, r] together with series diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct MomentResult {
    pub k: u32,
    pub value: f64,
    pub terms_used: usize,
    pub converged: bool,
}

pub(crate) fn check_theorem_conditions(n: u32, gamma: f64, delta: f64) -> Result<()> {
    let nf = f64::from(n);
    if !(nf > gamma + 1.0) || !(nf > delta + 1.0) {
        return Err(PosteriorError::Invalid(format!(
            "need n > gamma + 1 and n > delta + 1 (n = {n}, gamma = {gamma}, delta = {delta})"
        )));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(PosteriorError::Invalid(format!(
            "need |rho| < 1 (got {rho})"
        )));
    }
    Ok(())
}

/// Gamma-function ratio `W(n)` weighting the odd part of the reduced
/// likelihood. Requires `n > γ+1` and `n > δ+1`.
pub fn w_ratio(n: u32, gamma: f64, delta: f64) -> Result<f64> {
    Ok(ln_w_ratio(n, gamma, delta)?.exp())
}

fn ln_w_ratio(n: u32, gamma: f64, delta: f64) -> Result<f64> {
    check_theorem_conditions(n, gamma, delta)?;
    let nf = f64::from(n);
    Ok(log_gamma((nf - gamma) / 2.0)? + log_gamma((nf - delta) / 2.0)?
        - log_gamma((nf - gamma - 1.0) / 2.0)?
        - log_gamma((nf - delta - 1.0) / 2.0)?)
}

/// Even part A of the reduced likelihood.
pub fn reduced_likelihood_even(
    n: u32,
    r: f64,
    rho: f64,
    gamma: f64,
    delta: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    check_theorem_conditions(n, gamma, delta)?;
    check_rho(rho)?;
    check_rho(r)?;
    let nf = f64::from(n);
    let z = (r * rho) * (r * rho);
    let f = specfun::hyp2f1((nf - gamma - 1.0) / 2.0, (nf - delta - 1.0) / 2.0, 0.5, z, ctrl)?;
    let omrs = (1.0 - rho) * (1.0 + rho);
    Ok(omrs.powf((nf - gamma - delta - 1.0) / 2.0) * f)
}

/// Odd part B of the reduced likelihood; its sign is the sign of `r·ρ`.
pub fn reduced_likelihood_odd(
    n: u32,
    r: f64,
    rho: f64,
    gamma: f64,
    delta: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    check_theorem_conditions(n, gamma, delta)?;
    check_rho(rho)?;
    check_rho(r)?;
    let nf = f64::from(n);
    let z = (r * rho) * (r * rho);
    let f = specfun::hyp2f1((nf - gamma) / 2.0, (nf - delta) / 2.0, 1.5, z, ctrl)?;
    let w = w_ratio(n, gamma, delta)?;
    let omrs = (1.0 - rho) * (1.0 + rho);
    Ok(2.0 * r * rho * omrs.powf((nf - gamma - delta - 1.0) / 2.0) * w * f)
}

/// Reduced likelihood `h(n, r | ρ) = A + B`, normalized so `h(n, r | 0) = 1`.
pub fn reduced_likelihood(
    n: u32,
    r: f64,
    rho: f64,
    gamma: f64,
    delta: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    Ok(reduced_likelihood_even(n, r, rho, gamma, delta, ctrl)?
        + reduced_likelihood_odd(n, r, rho, gamma, delta, ctrl)?)
}

/// ln h(n, r | ρ), stable for large n where the hypergeometric factors
/// overflow and A and B nearly cancel for r·ρ < 0.
///
/// When the cancellation between the even and odd parts exceeds f64
/// resolution (the true value is positive but below the noise floor of the
/// two sums) the function returns −∞ rather than garbage.
pub fn log_reduced_likelihood(
    n: u32,
    r: f64,
    rho: f64,
    gamma: f64,
    delta: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    check_theorem_conditions(n, gamma, delta)?;
    check_rho(rho)?;
    check_rho(r)?;
    let nf = f64::from(n);
    let omrs = (1.0 - rho) * (1.0 + rho);
    let ln_w = ln_w_ratio(n, gamma, delta)?;
    let ln_bracket = log_likelihood_bracket(nf, gamma, delta, ln_w, r, rho, ctrl)?;
    Ok((nf - gamma - delta - 1.0) / 2.0 * omrs.ln() + ln_bracket)
}

/// ln [F_even + 2rρ W F_odd].
///
/// For rρ >= 0 both parts are positive and combine by a log-sum. For
/// rρ < 0 they cancel — catastrophically so for large n, where the true
/// bracket sits hundreds of orders below either part — so that branch uses
/// the exact single-function form of the same bracket,
///
/// ```text
/// (1−x)^{(3−2n+γ+δ)/2} ₂F₁((δ−γ+1)/2, (γ−δ+1)/2; (2n−γ−δ−1)/2; (1+x)/2)
/// ─────────────────────────────────────────────────────────────────────,
///            ₂F₁((δ−γ+1)/2, (γ−δ+1)/2; (2n−γ−δ−1)/2; 1/2)
/// ```
///
/// with x = rρ, a quadratic-transformation collapse of the even/odd pair
/// whose series involves no cancellation and stays O(1).
fn log_likelihood_bracket(
    nf: f64,
    gamma: f64,
    delta: f64,
    ln_w: f64,
    r: f64,
    rho: f64,
    ctrl: &SeriesControl,
) -> Result<f64> {
    let x = r * rho;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x > 0.0 {
        let z = x * x;
        let ln_even =
            ln_hyp2f1_positive((nf - gamma - 1.0) / 2.0, (nf - delta - 1.0) / 2.0, 0.5, z, ctrl)?
                .value;
        let ln_odd_f =
            ln_hyp2f1_positive((nf - gamma) / 2.0, (nf - delta) / 2.0, 1.5, z, ctrl)?.value;
        let ln_odd = (2.0 * x).ln() + ln_w + ln_odd_f;
        Ok(log_add_exp(ln_even, ln_odd))
    } else {
        let a1 = (delta - gamma + 1.0) / 2.0;
        let a2 = (gamma - delta + 1.0) / 2.0;
        let c = (2.0 * nf - gamma - delta - 1.0) / 2.0;
        let numer = specfun::hyp2f1(a1, a2, c, (1.0 + x) / 2.0, ctrl)?;
        let denom = specfun::hyp2f1(a1, a2, c, 0.5, ctrl)?;
        debug_assert!(numer > 0.0 && denom > 0.0);
        Ok(0.5 * (3.0 - 2.0 * nf + gamma + delta) * (1.0 - x).ln() + numer.ln() - denom.ln())
    }
}

/// ln of the marginal likelihood with ρ fixed at zero,
/// `p(y₀) = 2^{(−γ−δ−4)/2} (π^{1−n}/n) (n s₁²)^{(1+γ−n)/2} (n s₂²)^{(1+δ−n)/2}
///          Γ((n−γ−1)/2) Γ((n−δ−1)/2)`.
///
/// Depends on the data only through (n, s₁, s₂); π^{1−n} underflows fast,
/// so the log form is the primary one.
pub fn log_marginal_likelihood_rho0(
    stats: &SufficientStats,
    gamma: f64,
    delta: f64,
) -> Result<f64> {
    check_theorem_conditions(stats.n, gamma, delta)?;
    let nf = stats.n_f64();
    let ln_pi = std::f64::consts::PI.ln();
    Ok(0.5 * (-gamma - delta - 4.0) * std::f64::consts::LN_2 + (1.0 - nf) * ln_pi
        - nf.ln()
        + 0.5 * (1.0 + gamma - nf) * (nf * stats.s1 * stats.s1).ln()
        + 0.5 * (1.0 + delta - nf) * (nf * stats.s2 * stats.s2).ln()
        + log_gamma((nf - gamma - 1.0) / 2.0)?
        + log_gamma((nf - delta - 1.0) / 2.0)?)
}

/// Linear-space variant of [`log_marginal_likelihood_rho0`].
pub fn marginal_likelihood_rho0(stats: &SufficientStats, gamma: f64, delta: f64) -> Result<f64> {
    Ok(log_marginal_likelihood_rho0(stats, gamma, delta)?.exp())
}

/// The classical approximation `h_a(n, r | ρ) = (1−ρ²)^{(n−1)/2} (1−ρr)^{(3−2n)/2}`
/// to the reduced likelihood, good for large n.
pub fn jeffreys_approximation(n: u32, r: f64, rho: f64) -> Result<f64> {
    Ok(log_jeffreys_approximation(n, r, rho)?.exp())
}

/// ln h_a.
pub fn log_jeffreys_approximation(n: u32, r: f64, rho: f64) -> Result<f64> {
    if n < 2 {
        return Err(PosteriorError::Invalid(format!("need n >= 2 (got {n})")));
    }
    check_rho(rho)?;
    check_rho(r)?;
    let nf = f64::from(n);
    let omrs = (1.0 - rho) * (1.0 + rho);
    Ok(0.5 * (nf - 1.0) * omrs.ln() + 0.5 * (3.0 - 2.0 * nf) * (1.0 - rho * r).ln())
}

/// Normalizing constant of the marginal posterior for β = 0:
/// `p(n, r) = B(1/2, α + (n−γ−δ−1)/2) ₂F₁((n−γ−1)/2, (n−δ−1)/2; α + (n−γ−δ)/2; r²) / B(1/2, α)`.
///
/// At the Lindley limit the diverging 1/B(1/2, α) factor cancels against
/// the prior kernel, so the returned limit object omits it:
/// `B(1/2, (n−γ−δ−1)/2) ₂F₁(…; (n−γ−δ)/2; r²)`.
pub fn norm_constant_beta0(
    stats: &SufficientStats,
    eta: &Hyperparameters,
    ctrl: &SeriesControl,
) -> Result<f64> {
    if eta.beta() != 0.0 {
        return Err(PosteriorError::Invalid(format!(
            "closed form requires beta = 0 (got beta = {})",
            eta.beta()
        )));
    }
    check_posterior_conditions(stats.n, eta)?;
    let ln_fused = ln_fused_norm_beta0(stats, eta, ctrl)?;
    match eta.alpha() {
        Alpha::Limit => Ok(ln_fused.exp()),
        Alpha::Value(a) => Ok((ln_fused - ln_beta(0.5, a)?).exp()),
    }
}

fn check_posterior_conditions(n: u32, eta: &Hyperparameters) -> Result<()> {
    check_theorem_conditions(n, eta.gamma(), eta.delta())?;
    if !eta.posterior_valid(n) {
        return Err(PosteriorError::Invalid(format!(
            "need n > gamma + delta - 2*alpha + 1 (n = {n}, gamma = {}, delta = {}, alpha = {})",
            eta.gamma(),
            eta.delta(),
            eta.alpha()
        )));
    }
    Ok(())
}

/// ln of the fused normalizer `∫ h (1−ρ²)^{α−1} (1+ρ²)^{β/2} dρ` for β = 0,
/// i.e. the posterior normalizer times B(1/2, α).
fn ln_fused_norm_beta0(
    stats: &SufficientStats,
    eta: &Hyperparameters,
    ctrl: &SeriesControl,
) -> Result<f64> {
    let nf = stats.n_f64();
    let (gamma, delta) = (eta.gamma(), eta.delta());
    let alpha = eta.alpha().value();
    let mu = alpha + (nf - gamma - delta - 1.0) / 2.0;
    let f = ln_hyp2f1_positive(
        (nf - gamma - 1.0) / 2.0,
        (nf - delta - 1.0) / 2.0,
        mu + 0.5,
        stats.r * stats.r,
        ctrl,
    )?;
    Ok(ln_beta(0.5, mu)? + f.value)
}

/// Bound pair of data statistics and hyperparameters exposing the posterior
/// of ρ. Immutable after construction; all methods are pure.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    stats: SufficientStats,
    eta: Hyperparameters,
    ctrl: SeriesControl,
    w: f64,
    ln_w: f64,
    /// ln ∫ h (1−ρ²)^{α−1} (1+ρ²)^{β/2} dρ over (−1, 1).
    ln_kernel_norm: f64,
    norm_terms: usize,
}

impl PosteriorModel {
    pub fn new(stats: SufficientStats, eta: Hyperparameters) -> Result<Self> {
        Self::with_control(stats, eta, SeriesControl::default())
    }

    pub fn with_control(
        stats: SufficientStats,
        eta: Hyperparameters,
        ctrl: SeriesControl,
    ) -> Result<Self> {
        check_posterior_conditions(stats.n, &eta)?;
        let ln_w = ln_w_ratio(stats.n, eta.gamma(), eta.delta())?;
        let mut model = PosteriorModel {
            stats,
            eta,
            ctrl,
            w: ln_w.exp(),
            ln_w,
            ln_kernel_norm: 0.0,
            norm_terms: 0,
        };
        if eta.beta() == 0.0 {
            model.ln_kernel_norm = ln_fused_norm_beta0(&stats, &eta, &ctrl)?;
            model.norm_terms = 0;
        } else {
            let series = model.unnormalized_moment_series(0)?;
            model.ln_kernel_norm = series.ln_magnitude;
            model.norm_terms = series.terms;
        }
        Ok(model)
    }

    pub fn stats(&self) -> &SufficientStats {
        &self.stats
    }
    pub fn eta(&self) -> &Hyperparameters {
        &self.eta
    }
    pub fn control(&self) -> &SeriesControl {
        &self.ctrl
    }
    /// Cached W(n) gamma ratio.
    pub fn w(&self) -> f64 {
        self.w
    }
    /// ln of the kernel normalizer `∫ h (1−ρ²)^{α−1}(1+ρ²)^{β/2} dρ`.
    pub fn log_kernel_norm(&self) -> f64 {
        self.ln_kernel_norm
    }
    /// Series terms spent on the normalizer (0 when the β = 0 closed form
    /// was used).
    pub fn norm_terms(&self) -> usize {
        self.norm_terms
    }

    /// Normalizing constant of the marginal posterior. For α > 0 this is
    /// the integral of h against the *normalized* prior; at the Lindley
    /// limit the diverging prior constant is cancelled and the fused kernel
    /// normalizer is returned instead.
    pub fn norm_constant(&self) -> Result<f64> {
        match self.eta.alpha() {
            Alpha::Limit => Ok(self.ln_kernel_norm.exp()),
            Alpha::Value(a) => {
                if self.eta.beta() == 0.0 {
                    Ok((self.ln_kernel_norm - ln_beta(0.5, a)?).exp())
                } else {
                    let c = crate::model::prior_norm_constant(&self.eta, &self.ctrl)
                        .map_err(|e| PosteriorError::Invalid(e.to_string()))?;
                    Ok((self.ln_kernel_norm - c.ln()).exp())
                }
            }
        }
    }

    /// ln of the unnormalized posterior kernel
    /// `h(ρ) (1−ρ²)^{α−1} (1+ρ²)^{β/2}` evaluated with the caller-supplied
    /// `1−ρ²` (exact under trigonometric substitutions near |ρ| = 1).
    pub fn log_kernel_at(&self, rho: f64, one_minus_rho_sq: f64) -> Result<f64> {
        let nf = self.stats.n_f64();
        let (gamma, delta) = (self.eta.gamma(), self.eta.delta());
        let alpha = self.eta.alpha().value();
        let mu = alpha + (nf - gamma - delta - 1.0) / 2.0;
        let ln_bracket = log_likelihood_bracket(
            nf,
            gamma,
            delta,
            self.ln_w,
            self.stats.r,
            rho,
            &self.ctrl,
        )?;
        Ok((mu - 1.0) * one_minus_rho_sq.ln()
            + ln_bracket
            + 0.5 * self.eta.beta() * (1.0 + rho * rho).ln())
    }

    /// ln posterior density with caller-supplied `1−ρ²`.
    pub fn log_density_at(&self, rho: f64, one_minus_rho_sq: f64) -> Result<f64> {
        Ok(self.log_kernel_at(rho, one_minus_rho_sq)? - self.ln_kernel_norm)
    }

    /// ln posterior density at ρ.
    pub fn log_density(&self, rho: f64) -> Result<f64> {
        check_rho(rho)?;
        self.log_density_at(rho, (1.0 - rho) * (1.0 + rho))
    }

    /// Posterior density at ρ (β = 0 closed form and the general-β route
    /// coincide in this fused formulation).
    pub fn density(&self, rho: f64) -> Result<f64> {
        Ok(self.log_density(rho)?.exp())
    }

    /// Moment evaluator with a coefficient cache shared across orders.
    pub fn moments(&self) -> MomentEvaluator<'_> {
        MomentEvaluator {
            model: self,
            coef_cache: RefCell::new(HashMap::new()),
        }
    }

    /// k-th posterior moment through the general-β series.
    pub fn moment_general(&self, k: u32) -> Result<MomentResult> {
        self.moments().moment_general(k)
    }

    /// k-th posterior moment through the β = 0 closed forms (₃F₂ over ₂F₁).
    pub fn moment_beta0(&self, k: u32) -> Result<MomentResult> {
        if self.eta.beta() != 0.0 {
            return Err(PosteriorError::Invalid(format!(
                "closed form requires beta = 0 (got beta = {})",
                self.eta.beta()
            )));
        }
        if k == 0 {
            return Ok(MomentResult {
                k,
                value: 1.0,
                terms_used: 0,
                converged: true,
            });
        }
        let nf = self.stats.n_f64();
        let (gamma, delta) = (self.eta.gamma(), self.eta.delta());
        let alpha = self.eta.alpha().value();
        let mu = alpha + (nf - gamma - delta - 1.0) / 2.0;
        let r = self.stats.r;
        let r2 = r * r;
        let kf = f64::from(k);

        let ln_norm_f = ln_hyp2f1_positive(
            (nf - gamma - 1.0) / 2.0,
            (nf - delta - 1.0) / 2.0,
            mu + 0.5,
            r2,
            &self.ctrl,
        )?;
        if k.is_multiple_of(2) {
            let f = ln_hyp_pfq_positive(
                &[(kf + 1.0) / 2.0, (nf - gamma - 1.0) / 2.0, (nf - delta - 1.0) / 2.0],
                &[0.5, (kf + 1.0) / 2.0 + mu],
                r2,
                &self.ctrl,
            )?;
            let ln_val = ln_beta((kf + 1.0) / 2.0, mu)? - ln_beta(0.5, mu)? + f.value
                - ln_norm_f.value;
            Ok(MomentResult {
                k,
                value: ln_val.exp(),
                terms_used: f.terms + ln_norm_f.terms,
                converged: true,
            })
        } else {
            if r == 0.0 {
                return Ok(MomentResult {
                    k,
                    value: 0.0,
                    terms_used: ln_norm_f.terms,
                    converged: true,
                });
            }
            let f = ln_hyp_pfq_positive(
                &[(kf + 2.0) / 2.0, (nf - gamma) / 2.0, (nf - delta) / 2.0],
                &[1.5, (kf + 2.0) / 2.0 + mu],
                r2,
                &self.ctrl,
            )?;
            let ln_mag = (2.0 * r.abs()).ln() + self.ln_w + ln_beta((kf + 2.0) / 2.0, mu)?
                - ln_beta(0.5, mu)?
                + f.value
                - ln_norm_f.value;
            Ok(MomentResult {
                k,
                value: r.signum() * ln_mag.exp(),
                terms_used: f.terms + ln_norm_f.terms,
                converged: true,
            })
        }
    }

    /// k-th posterior moment: closed form when β = 0, the general series
    /// otherwise.
    pub fn moment(&self, k: u32) -> Result<MomentResult> {
        if self.eta.beta() == 0.0 {
            self.moment_beta0(k)
        } else {
            self.moment_general(k)
        }
    }

    fn unnormalized_moment_series(&self, k: u32) -> Result<SignedLogSeries> {
        self.moments().unnormalized_series(k)
    }

    /// Posterior CDF at ρ, by adaptive quadrature of the analytic density.
    pub fn cdf(&self, rho: f64) -> Result<f64> {
        if rho <= -1.0 {
            return Ok(0.0);
        }
        if rho >= 1.0 {
            return Ok(1.0);
        }
        let failure = RefCell::new(None);
        let q = quad::integrate_unit_interval(
            |x, omrs| match self.log_density_at(x, omrs) {
                Ok(ld) => ld.exp(),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            -1.0,
            rho,
            1e-9,
            1e-10,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(q?.value.clamp(0.0, 1.0))
    }

    /// Quantile by bisection on the CDF; the round trip
    /// `cdf(quantile(p)) = p` holds to about 1e-9.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(PosteriorError::Invalid(format!(
                "need quantile level in (0, 1) (got {p})"
            )));
        }
        let mut lo = -std::f64::consts::FRAC_PI_2;
        let mut hi = std::f64::consts::FRAC_PI_2;
        let mut mid = 0.0;
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let c = self.cdf(mid.sin())?;
            if (c - p).abs() <= 5e-10 {
                return Ok(mid.sin());
            }
            if c < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        Ok(mid.sin())
    }
}

/// Sign, log magnitude and term count of an unnormalized moment series.
#[derive(Debug, Clone, Copy)]
struct SignedLogSeries {
    ln_magnitude: f64,
    sign: f64,
    terms: usize,
}

/// Moment evaluation through the general-β series, with the per-order
/// integral coefficients cached across k (orders k and k+2 share them).
pub struct MomentEvaluator<'a> {
    model: &'a PosteriorModel,
    coef_cache: RefCell<HashMap<u32, f64>>,
}

impl MomentEvaluator<'_> {
    /// k-th posterior moment as the ratio of the unnormalized series of
    /// order k to the order-0 series; the prior normalization constant
    /// cancels in the ratio, which keeps the Lindley limit finite.
    pub fn moment_general(&self, k: u32) -> Result<MomentResult> {
        if k == 0 {
            let s0 = self.unnormalized_series(0)?;
            return Ok(MomentResult {
                k,
                value: 1.0,
                terms_used: s0.terms,
                converged: true,
            });
        }
        let sk = self.unnormalized_series(k)?;
        let s0 = self.unnormalized_series(0)?;
        Ok(MomentResult {
            k,
            value: sk.sign * (sk.ln_magnitude - s0.ln_magnitude).exp(),
            terms_used: sk.terms + s0.terms,
            converged: true,
        })
    }

    /// ln ∫ ρᵏ h (1−ρ²)^{α−1} (1+ρ²)^{β/2} dρ, by termwise integration of
    /// the hypergeometric series in the even (odd) part of h for even (odd)
    /// k. Each coefficient is a beta function times a ₂F₁ at argument −1.
    fn unnormalized_series(&self, k: u32) -> Result<SignedLogSeries> {
        let m = self.model;
        let nf = m.stats.n_f64();
        let (gamma, delta) = (m.eta.gamma(), m.eta.delta());
        let r = m.stats.r;
        let even = k.is_multiple_of(2);
        if !even && r == 0.0 {
            return Ok(SignedLogSeries {
                ln_magnitude: f64::NEG_INFINITY,
                sign: 0.0,
                terms: 1,
            });
        }
        let (p1, p2, den, j0, ln_prefix, sign) = if even {
            ((nf - gamma - 1.0) / 2.0, (nf - delta - 1.0) / 2.0, 0.5, k, 0.0, 1.0)
        } else {
            (
                (nf - gamma) / 2.0,
                (nf - delta) / 2.0,
                1.5,
                k + 1,
                (2.0 * r.abs()).ln() + m.ln_w,
                r.signum(),
            )
        };
        let r2 = r * r;
        let ln_coef0 = self.integral_coefficient(j0)?;
        if r2 == 0.0 {
            // only the m = 0 term survives
            return Ok(SignedLogSeries {
                ln_magnitude: ln_prefix + ln_coef0,
                sign,
                terms: 1,
            });
        }

        const RESCALE: f64 = 1e280;
        const LN_RESCALE: f64 = 644.723_826_038_332_8;
        let mut coef_part = 1.0f64; // Pochhammer-ratio part, rescaled
        let mut log_scale = 0.0f64;
        let mut sum = 1.0f64; // term 0: coef_part * relcoef(j0) = 1
        let mut small = 0usize;
        let ctrl = &m.ctrl;
        for step in 0..ctrl.max_terms {
            let mf = step as f64;
            coef_part = coef_part * (p1 + mf) * (p2 + mf) / ((den + mf) * (mf + 1.0)) * r2;
            let j = j0 + 2 * (step as u32 + 1);
            let rel_coef = (self.integral_coefficient(j)? - ln_coef0).exp();
            let term = coef_part * rel_coef;
            sum += term;
            if sum > RESCALE {
                sum /= RESCALE;
                coef_part /= RESCALE;
                log_scale += LN_RESCALE;
            }
            if term <= ctrl.rel_tol * sum {
                small += 1;
                if small >= ctrl.consecutive_small {
                    return Ok(SignedLogSeries {
                        ln_magnitude: ln_prefix + ln_coef0 + sum.ln() + log_scale,
                        sign,
                        terms: step + 2,
                    });
                }
            } else {
                small = 0;
            }
        }
        Err(PosteriorError::SpecFun(SpecFunError::NonConvergence {
            terms: ctrl.max_terms,
        }))
    }

    /// ln of the coefficient
    /// `B((j+1)/2, μ) ₂F₁(−β/2, (j+1)/2; (j+1)/2 + μ; −1)` for the
    /// termwise-integrated series; j = k+2m is shared between orders of the
    /// same parity shifted by two, hence the cache.
    fn integral_coefficient(&self, j: u32) -> Result<f64> {
        if let Some(&v) = self.coef_cache.borrow().get(&j) {
            return Ok(v);
        }
        let m = self.model;
        let nf = m.stats.n_f64();
        let alpha = m.eta.alpha().value();
        let mu = alpha + (nf - m.eta.gamma() - m.eta.delta() - 1.0) / 2.0;
        let nu = (f64::from(j) + 1.0) / 2.0;
        let f = specfun::hyp2f1_at_neg_one(-m.eta.beta() / 2.0, nu, nu + mu, &m.ctrl)?;
        let v = ln_beta(nu, mu)? + f.ln();
        self.coef_cache.borrow_mut().insert(j, v);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ingest, Alpha, Hyperparameters};
    use crate::quad::integrate_unit_interval;
    use crate::specfun::{hyp2f1, pochhammer};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn ctrl() -> SeriesControl {
        SeriesControl::default()
    }

    fn stats(n: u32, r: f64) -> SufficientStats {
        SufficientStats::new(n, 0.0, 0.0, 1.0, 1.0, r).unwrap()
    }

    fn eta(alpha: Alpha, beta: f64, gamma: f64, delta: f64) -> Hyperparameters {
        Hyperparameters::new(alpha, beta, gamma, delta).unwrap()
    }

    fn jeffreys() -> Hyperparameters {
        eta(Alpha::Value(1.0), 0.0, 0.0, 0.0)
    }

    #[test]
    fn w_ratio_reference_values() {
        // Γ(1)²/Γ(1/2)² = 1/π
        assert_relative_eq!(
            w_ratio(2, 0.0, 0.0).unwrap(),
            1.0 / std::f64::consts::PI,
            max_relative = 1e-13
        );
        // (Γ(3/2)/Γ(1))² = π/4
        assert_relative_eq!(
            w_ratio(3, 0.0, 0.0).unwrap(),
            std::f64::consts::PI / 4.0,
            max_relative = 1e-13
        );
        assert!(w_ratio(2, 1.5, 0.0).is_err());
    }

    #[test]
    fn w_ratio_direct_gamma_products() {
        // n = 10, γ = −1, δ = 1: all gammas at (half-)integers, so an
        // independent product evaluation is available.
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let g55 = 4.5 * 3.5 * 2.5 * 1.5 * 0.5 * sqrt_pi; // Γ(5.5)
        let g45 = 3.5 * 2.5 * 1.5 * 0.5 * sqrt_pi; // Γ(4.5)
        let g5 = 24.0; // Γ(5)
        let g4 = 6.0; // Γ(4)
        let expected = (g55 * g45) / (g5 * g4);
        assert_relative_eq!(
            w_ratio(10, -1.0, 1.0).unwrap(),
            expected,
            max_relative = 1e-13
        );
    }

    #[test]
    fn reduced_likelihood_trivial_points() {
        // ρ = 0: A = 1, B = 0, h = 1
        assert_relative_eq!(
            reduced_likelihood(7, 0.42, 0.0, 0.0, 0.0, &ctrl()).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        // r = 0: A = (1−ρ²)^{(n−γ−δ−1)/2}, B = 0
        let a = reduced_likelihood_even(5, 0.0, 0.3, 0.0, 0.0, &ctrl()).unwrap();
        assert_relative_eq!(a, (1.0f64 - 0.09).powf(2.0), max_relative = 1e-14);
        assert_eq!(
            reduced_likelihood_odd(5, 0.0, 0.3, 0.0, 0.0, &ctrl()).unwrap(),
            0.0
        );
        assert_eq!(
            reduced_likelihood_odd(5, 0.6, 0.0, 0.0, 0.0, &ctrl()).unwrap(),
            0.0
        );
    }

    #[test]
    fn reduced_likelihood_matches_naive_summation() {
        // term-by-term summation with independent Pochhammer evaluation
        let (n, r, rho) = (5u32, 0.6, 0.4);
        let nf = 5.0;
        let z: f64 = (r * rho) * (r * rho);
        let naive_f = |a: f64, b: f64, c: f64| {
            let mut s = 0.0;
            for m in 0..120u32 {
                let term = pochhammer(a, m) * pochhammer(b, m) / pochhammer(c, m)
                    * z.powi(m as i32)
                    / pochhammer(1.0, m);
                s += term;
                if term.abs() < 1e-18 * s.abs() {
                    break;
                }
            }
            s
        };
        let omrs: f64 = 1.0 - rho * rho;
        let a_naive = omrs.powf((nf - 1.0) / 2.0) * naive_f((nf - 1.0) / 2.0, (nf - 1.0) / 2.0, 0.5);
        let w = w_ratio(n, 0.0, 0.0).unwrap();
        let b_naive = 2.0 * r * rho * omrs.powf((nf - 1.0) / 2.0)
            * w
            * naive_f(nf / 2.0, nf / 2.0, 1.5);

        let a = reduced_likelihood_even(n, r, rho, 0.0, 0.0, &ctrl()).unwrap();
        let b = reduced_likelihood_odd(n, r, rho, 0.0, 0.0, &ctrl()).unwrap();
        assert_relative_eq!(a, a_naive, max_relative = 1e-12);
        assert_relative_eq!(b, b_naive, max_relative = 1e-12);
    }

    #[test]
    fn reduced_likelihood_parity_and_reflection() {
        for &(n, r, gamma, delta) in &[(5u32, 0.6, 0.0, 0.0), (10, -0.35, -1.0, 1.0)] {
            for &rho in &[0.1, 0.45, 0.8] {
                let ctrl = ctrl();
                let a_pos = reduced_likelihood_even(n, r, rho, gamma, delta, &ctrl).unwrap();
                let a_neg = reduced_likelihood_even(n, r, -rho, gamma, delta, &ctrl).unwrap();
                assert_relative_eq!(a_pos, a_neg, max_relative = 1e-13);

                let b_pos = reduced_likelihood_odd(n, r, rho, gamma, delta, &ctrl).unwrap();
                let b_neg = reduced_likelihood_odd(n, r, -rho, gamma, delta, &ctrl).unwrap();
                assert_relative_eq!(b_neg, -b_pos, max_relative = 1e-13);

                let h1 = reduced_likelihood(n, r, rho, gamma, delta, &ctrl).unwrap();
                let h2 = reduced_likelihood(n, -r, -rho, gamma, delta, &ctrl).unwrap();
                assert_relative_eq!(h1, h2, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn log_reduced_likelihood_consistent_with_linear() {
        // the r·ρ < 0 branch collapses the even/odd pair into a single
        // hypergeometric factor; at small n the direct sum is still
        // accurate enough to check it
        for &(n, gamma, delta) in &[(5u32, 0.0, 0.0), (7, 0.0, 1.0), (6, -1.0, 1.0)] {
            for &rho in &[-0.9, -0.45, -0.1, 0.0, 0.55, 0.9] {
                let lin = reduced_likelihood(n, 0.5, rho, gamma, delta, &ctrl()).unwrap();
                let log = log_reduced_likelihood(n, 0.5, rho, gamma, delta, &ctrl()).unwrap();
                assert_relative_eq!(lin.ln(), log, max_relative = 1e-10);
            }
        }
        // large n: the linear route overflows or cancels to garbage, the
        // log form stays finite on both sides of ρ = 0
        let plus = log_reduced_likelihood(10_000, 0.6, 0.6, 0.0, 0.0, &ctrl()).unwrap();
        assert!(plus.is_finite() && plus > 0.0);
        let minus = log_reduced_likelihood(10_000, 0.6, -0.6, 0.0, 0.0, &ctrl()).unwrap();
        assert!(minus.is_finite() && minus < plus);
    }

    #[test]
    fn marginal_likelihood_rho0_reference() {
        let y = stats(5, 0.6);
        // independent term-by-term arrangement of the same display
        let nf = 5.0f64;
        let direct = 2.0f64.powf(-2.0)
            * std::f64::consts::PI.powf(1.0 - nf)
            / nf
            * (nf).powf((1.0 - nf) / 2.0)
            * (nf).powf((1.0 - nf) / 2.0)
            * (log_gamma((nf - 1.0) / 2.0).unwrap().exp()).powi(2);
        assert_relative_eq!(
            marginal_likelihood_rho0(&y, 0.0, 0.0).unwrap(),
            direct,
            max_relative = 1e-12
        );
        // independent of means and r
        let y2 = SufficientStats::new(5, 3.0, -2.0, 1.0, 1.0, -0.9).unwrap();
        assert_eq!(
            log_marginal_likelihood_rho0(&y, 0.0, 0.0).unwrap(),
            log_marginal_likelihood_rho0(&y2, 0.0, 0.0).unwrap()
        );
        assert!(log_marginal_likelihood_rho0(&y, 4.5, 0.0).is_err());
    }

    #[test]
    fn jeffreys_approximation_points() {
        assert_relative_eq!(
            jeffreys_approximation(9, 0.4, 0.0).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            jeffreys_approximation(3, 0.0, 0.5).unwrap(),
            0.75,
            max_relative = 1e-14
        );
    }

    #[test]
    fn norm_constant_beta0_reference() {
        // r = 0 leaves the beta-function ratio
        let m = stats(10, 0.0);
        let e = jeffreys();
        let mu = 1.0 + (10.0 - 1.0) / 2.0;
        let expected = specfun::beta(0.5, mu).unwrap() / specfun::beta(0.5, 1.0).unwrap();
        assert_relative_eq!(
            norm_constant_beta0(&m, &e, &ctrl()).unwrap(),
            expected,
            max_relative = 1e-13
        );
        // beta != 0 is rejected
        let e2 = eta(Alpha::Value(1.0), 1.0, 0.0, 0.0);
        assert!(norm_constant_beta0(&m, &e2, &ctrl()).is_err());
    }

    #[test]
    fn norm_constant_consistent_with_series_route() {
        // closed form equals the order-0 unnormalized series divided by the
        // prior constant (β = 0)
        let m = PosteriorModel::new(stats(10, 0.6), jeffreys()).unwrap();
        let p_closed = norm_constant_beta0(m.stats(), m.eta(), m.control()).unwrap();
        let s0 = m.moments().unnormalized_series(0).unwrap();
        let c = crate::model::prior_norm_constant(m.eta(), m.control()).unwrap();
        assert_relative_eq!(
            p_closed,
            (s0.ln_magnitude - c.ln()).exp(),
            max_relative = 1e-10
        );
        assert_relative_eq!(p_closed, m.norm_constant().unwrap(), max_relative = 1e-13);
    }

    #[test]
    fn density_two_evaluation_paths_agree() {
        let m = PosteriorModel::new(stats(10, 0.6), jeffreys()).unwrap();
        let p = m.norm_constant().unwrap();
        for &rho in &[-0.7, 0.0, 0.35, 0.6, 0.92] {
            let closed = m.density(rho).unwrap();
            let h = reduced_likelihood(10, 0.6, rho, 0.0, 0.0, m.control()).unwrap();
            let prior = crate::model::prior_density(rho, m.eta(), m.control()).unwrap();
            // at r·ρ < 0 the h route itself loses digits to the A−|B|
            // cancellation, so the comparison is looser there
            let tol = if rho * 0.6 < 0.0 { 1e-9 } else { 1e-12 };
            assert_relative_eq!(closed, h * prior / p, max_relative = tol);
        }
    }

    #[test]
    fn density_matches_displayed_limit_posterior() {
        // independent evaluation of the displayed reference posterior
        // (γ = δ = 0, α → 0): (1−ρ²)^{(n−3)/2} [F_even + 2rρ W F_odd] /
        // [B(1/2,(n−1)/2) ₂F₁((n−1)/2,(n−1)/2;n/2;r²)]
        let (n, r) = (10u32, 0.6);
        let nf = 10.0;
        let m = PosteriorModel::new(stats(n, r), eta(Alpha::Limit, 0.0, 0.0, 0.0)).unwrap();
        let w = w_ratio(n, 0.0, 0.0).unwrap();
        let denom = specfun::beta(0.5, (nf - 1.0) / 2.0).unwrap()
            * hyp2f1((nf - 1.0) / 2.0, (nf - 1.0) / 2.0, nf / 2.0, r * r, &ctrl()).unwrap();
        for &rho in &[-0.5, 0.0, 0.3, 0.6, 0.85] {
            let z = (r * rho) * (r * rho);
            let bracket = hyp2f1((nf - 1.0) / 2.0, (nf - 1.0) / 2.0, 0.5, z, &ctrl()).unwrap()
                + 2.0 * r * rho * w * hyp2f1(nf / 2.0, nf / 2.0, 1.5, z, &ctrl()).unwrap();
            let reference = (1.0 - rho * rho).powf((nf - 3.0) / 2.0) * bracket / denom;
            assert_relative_eq!(m.density(rho).unwrap(), reference, max_relative = 1e-11);
        }
    }

    #[test]
    fn density_symmetric_for_r_zero() {
        let m = PosteriorModel::new(stats(8, 0.0), jeffreys()).unwrap();
        let d0 = m.density(0.0).unwrap();
        for &rho in &[0.2, 0.5, 0.8] {
            let dp = m.density(rho).unwrap();
            let dm = m.density(-rho).unwrap();
            assert_relative_eq!(dp, dm, max_relative = 1e-13);
            assert!(dp < d0);
        }
        assert!(m.density(1.0).is_err());
    }

    #[test]
    fn moment_trivial_cases() {
        let m = PosteriorModel::new(stats(10, 0.6), jeffreys()).unwrap();
        assert_eq!(m.moment(0).unwrap().value, 1.0);
        assert_eq!(m.moment_general(0).unwrap().value, 1.0);

        let m0 = PosteriorModel::new(stats(10, 0.0), jeffreys()).unwrap();
        assert_eq!(m0.moment(1).unwrap().value, 0.0);
        assert_eq!(m0.moment_general(1).unwrap().value, 0.0);

        // E[ρ²] at r = 0: beta-function ratio
        let mu = 1.0 + 9.0 / 2.0;
        let expected =
            specfun::beta(1.5, mu).unwrap() / specfun::beta(0.5, mu).unwrap();
        assert_relative_eq!(m0.moment(2).unwrap().value, expected, max_relative = 1e-12);

        // sign(E[ρ]) = sign(r)
        let mneg = PosteriorModel::new(stats(10, -0.6), jeffreys()).unwrap();
        assert!(mneg.moment(1).unwrap().value < 0.0);
        assert!(m.moment(1).unwrap().value > 0.0);
    }

    #[test]
    fn general_series_matches_closed_form_for_beta0() {
        for &n in &[5u32, 10, 50] {
            for &r in &[-0.9, 0.0, 0.6] {
                for &alpha in
                    &[Alpha::Limit, Alpha::Value(0.5), Alpha::Value(1.0), Alpha::Value(2.0)]
                {
                    for &(g, d) in &[(0.0, 0.0), (-1.0, 1.0)] {
                        let m = PosteriorModel::new(stats(n, r), eta(alpha, 0.0, g, d)).unwrap();
                        let ev = m.moments();
                        for k in 1..=4u32 {
                            let closed = m.moment_beta0(k).unwrap().value;
                            let series = ev.moment_general(k).unwrap().value;
                            if closed == 0.0 {
                                assert_abs_diff_eq!(series, 0.0, epsilon = 1e-14);
                            } else {
                                assert_relative_eq!(series, closed, max_relative = 1e-10);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn moment_bounds_hold() {
        for &(n, r) in &[(5u32, 0.9), (10, -0.6), (50, 0.0)] {
            for &beta in &[0.0, 1.0, 2.0] {
                let m =
                    PosteriorModel::new(stats(n, r), eta(Alpha::Value(1.0), beta, 0.0, 0.0))
                        .unwrap();
                let m1 = m.moment(1).unwrap().value;
                let m2 = m.moment(2).unwrap().value;
                assert!(m1.abs() <= 1.0);
                assert!((0.0..=1.0).contains(&m2));
                assert!(m2 - m1 * m1 >= -1e-12, "variance must be nonnegative");
            }
        }
    }

    #[test]
    fn posterior_mean_shrinks_toward_zero_under_uniform_prior() {
        for &n in &[5u32, 10, 50] {
            for &r in &[0.3, 0.6, 0.9] {
                let m = PosteriorModel::new(stats(n, r), jeffreys()).unwrap();
                let mean = m.moment(1).unwrap().value;
                assert!(
                    mean.abs() <= r.abs() + 1e-12,
                    "n={n} r={r}: mean {mean} exceeds |r|"
                );
                assert!(mean > 0.0);
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        for &(n, r) in &[(5u32, 0.6), (10, -0.9)] {
            for &alpha in &[Alpha::Limit, Alpha::Value(0.5), Alpha::Value(2.0)] {
                for &(g, d) in &[(0.0, 0.0), (-1.0, 1.0)] {
                    let m = PosteriorModel::new(stats(n, r), eta(alpha, 0.0, g, d)).unwrap();
                    let q = integrate_unit_interval(
                        |rho, omrs| m.log_density_at(rho, omrs).unwrap().exp(),
                        -1.0,
                        1.0,
                        1e-10,
                        0.0,
                    )
                    .unwrap();
                    assert_abs_diff_eq!(q.value, 1.0, epsilon = 1e-7);
                }
            }
        }
        // general β route normalizes too
        let m = PosteriorModel::new(
            stats(10, 0.6),
            eta(Alpha::Limit, 1.0, 0.0, 0.0),
        )
        .unwrap();
        let q = integrate_unit_interval(
            |rho, omrs| m.log_density_at(rho, omrs).unwrap().exp(),
            -1.0,
            1.0,
            1e-10,
            0.0,
        )
        .unwrap();
        assert_abs_diff_eq!(q.value, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn cdf_and_quantile_round_trip() {
        let sym = PosteriorModel::new(stats(10, 0.0), jeffreys()).unwrap();
        assert_abs_diff_eq!(sym.cdf(0.0).unwrap(), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sym.quantile(0.5).unwrap(), 0.0, epsilon = 1e-8);
        assert_eq!(sym.cdf(-1.0).unwrap(), 0.0);
        assert_eq!(sym.cdf(1.0).unwrap(), 1.0);

        let m = PosteriorModel::new(stats(10, 0.6), jeffreys()).unwrap();
        for &p in &[0.025, 0.5, 0.975] {
            let q = m.quantile(p).unwrap();
            assert!(q.abs() < 1.0);
            assert_abs_diff_eq!(m.cdf(q).unwrap(), p, epsilon = 1e-8);
        }
        // cdf monotone on a grid
        let mut prev = 0.0;
        for i in 0..=20 {
            let rho = -0.95 + 1.9 * (i as f64) / 20.0;
            let c = m.cdf(rho).unwrap();
            assert!(c >= prev - 1e-12);
            prev = c;
        }
        assert!(m.quantile(0.0).is_err());
    }

    #[test]
    fn ingest_feeds_model() {
        let data = [(1.0, 2.0), (2.0, 1.0), (3.0, 5.0), (4.0, 3.0), (5.0, 6.0)];
        let s = ingest(&data).unwrap();
        let m = PosteriorModel::new(s, jeffreys()).unwrap();
        assert!(m.moment(1).unwrap().value > 0.0);
    }

    #[test]
    fn model_is_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<PosteriorModel>();
        assert_send_sync::<SufficientStats>();
        assert_send_sync::<Hyperparameters>();
        assert_send_sync::<MomentResult>();
    }

    #[test]
    fn validity_errors_name_the_bound() {
        let err = PosteriorModel::new(stats(5, 0.5), eta(Alpha::Value(1.0), 0.0, 4.5, 0.0))
            .unwrap_err();
        assert!(err.to_string().contains("n > gamma + 1"), "{err}");
        let err = PosteriorModel::new(stats(5, 0.5), eta(Alpha::Value(0.1), 0.0, 3.0, 2.0))
            .unwrap_err();
        assert!(
            err.to_string().contains("n > gamma + delta - 2*alpha + 1"),
            "{err}"
        );
    }
}
