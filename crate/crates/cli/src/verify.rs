//! Verification suites: analytic results checked against the numerical
//! oracles, printing one pass/fail line per check group.

use corrpost_core::oracle::{
    integrate_posterior_functional, integrate_theorem, lemma_integral, lemma_quadrature,
    PosteriorFunctional, TheoremBudget,
};
use corrpost_core::posterior::{marginal_likelihood_rho0, reduced_likelihood};
use corrpost_core::{Alpha, Hyperparameters, PosteriorModel, SeriesControl, SufficientStats};

pub struct Outcome {
    pub passed: usize,
    pub failed: usize,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            passed: 0,
            failed: 0,
        }
    }
    fn record(&mut self, ok: bool) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }
    pub fn merge(&mut self, other: Outcome) {
        self.passed += other.passed;
        self.failed += other.failed;
    }
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn report(name: &str, detail: &str, dev: f64, tol: f64, out: &mut Outcome) {
    let ok = dev <= tol;
    println!(
        "{} {name} {detail} achieved={dev:.2e} tol={tol:.1e}",
        if ok { "PASS" } else { "FAIL" }
    );
    out.record(ok);
}

/// Closed form of the exponential-quadratic integral vs direct quadrature
/// over the 27-case grid, tolerance 1e-8.
pub fn run_lemma() -> Result<Outcome, Box<dyn std::error::Error>> {
    let ctrl = SeriesControl::default();
    let mut out = Outcome::new();
    for &a in &[0.5, 1.0, 2.0] {
        for &b in &[-1.0, 0.0, 1.0] {
            for &c in &[1.0, 2.0, 3.5] {
                let closed = lemma_integral(a, b, c, &ctrl)?;
                let quad = lemma_quadrature(a, b, c, 1e-10)?;
                report(
                    "lemma",
                    &format!("a={a} b={b} c={c}"),
                    rel_dev(closed, quad.value),
                    1e-8,
                    &mut out,
                );
            }
        }
    }
    Ok(out)
}

/// Factorization of the integrated likelihood: the 4D quadrature divided by
/// the reduced likelihood must be constant over ρ and equal the marginal
/// likelihood at ρ = 0, tolerance 1e-4.
pub fn run_theorem(n: u32, r: f64) -> Result<Outcome, Box<dyn std::error::Error>> {
    let ctrl = SeriesControl::default();
    let budget = TheoremBudget::default();
    let stats = SufficientStats::new(n, 0.0, 0.0, 1.0, 1.0, r)?;
    let mut out = Outcome::new();
    for &(gamma, delta) in &[(0.0, 0.0), (-1.0, 1.0)] {
        let p = marginal_likelihood_rho0(&stats, gamma, delta)?;
        let mut max_dev: f64 = 0.0;
        for &rho in &[-0.8, -0.4, 0.0, 0.4, 0.8] {
            let q = integrate_theorem(&stats, gamma, delta, rho, &budget)?;
            let h = reduced_likelihood(n, stats.r, rho, gamma, delta, &ctrl)?;
            max_dev = max_dev.max(rel_dev(q.value / h, p));
        }
        report(
            "theorem",
            &format!("n={n} r={r} gamma={gamma} delta={delta}"),
            max_dev,
            1e-4,
            &mut out,
        );
    }
    Ok(out)
}

fn alpha_label(alpha: Alpha) -> String {
    match alpha {
        Alpha::Limit => "limit".into(),
        Alpha::Value(v) => format!("{v}"),
    }
}

/// Analytic normalizers and moments against 1D quadrature: the β = 0
/// closed forms over the full grid at 1e-8, the general-β series at 1e-7,
/// and the β = 0 cross-formula agreement at 1e-10.
pub fn run_moments() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut out = Outcome::new();

    // closed forms (β = 0)
    for &n in &[5u32, 10, 50] {
        for &r in &[-0.9, 0.0, 0.6] {
            for &alpha in &[Alpha::Limit, Alpha::Value(0.5), Alpha::Value(1.0), Alpha::Value(2.0)]
            {
                for &(gamma, delta) in &[(0.0, 0.0), (-1.0, 1.0)] {
                    let stats = SufficientStats::new(n, 0.0, 0.0, 1.0, 1.0, r)?;
                    let eta = Hyperparameters::new(alpha, 0.0, gamma, delta)?;
                    let model = PosteriorModel::new(stats, eta)?;
                    let mut max_dev: f64 = 0.0;

                    let norm_quad = integrate_posterior_functional(&model, PosteriorFunctional::Norm)?;
                    max_dev = max_dev.max(rel_dev(norm_quad.value, model.norm_constant()?));
                    for k in 1..=4u32 {
                        let analytic = model.moment_beta0(k)?.value;
                        let quad =
                            integrate_posterior_functional(&model, PosteriorFunctional::Moment(k))?;
                        let dev = if analytic == 0.0 && quad.value.abs() < 1e-10 {
                            0.0
                        } else {
                            rel_dev(analytic, quad.value)
                        };
                        max_dev = max_dev.max(dev);
                    }
                    report(
                        "moments",
                        &format!(
                            "n={n} r={r} alpha={} gamma={gamma} delta={delta}",
                            alpha_label(alpha)
                        ),
                        max_dev,
                        1e-8,
                        &mut out,
                    );
                }
            }
        }
    }

    // general-β series vs quadrature, and β = 0 series vs closed forms
    for &beta in &[1.0, 2.0] {
        for &n in &[5u32, 10] {
            for &r in &[0.0, 0.6] {
                for &alpha in &[Alpha::Value(0.5), Alpha::Value(1.0)] {
                    let stats = SufficientStats::new(n, 0.0, 0.0, 1.0, 1.0, r)?;
                    let eta = Hyperparameters::new(alpha, beta, 0.0, 0.0)?;
                    let model = PosteriorModel::new(stats, eta)?;
                    let ev = model.moments();
                    let mut max_dev: f64 = 0.0;
                    for k in 0..=3u32 {
                        let analytic = ev.moment_general(k)?.value;
                        let quad =
                            integrate_posterior_functional(&model, PosteriorFunctional::Moment(k))?;
                        let dev = if analytic == 0.0 && quad.value.abs() < 1e-10 {
                            0.0
                        } else {
                            rel_dev(analytic, quad.value)
                        };
                        max_dev = max_dev.max(dev);
                    }
                    report(
                        "moments-series",
                        &format!("n={n} r={r} alpha={} beta={beta}", alpha_label(alpha)),
                        max_dev,
                        1e-7,
                        &mut out,
                    );
                }
            }
        }
    }
    for &n in &[5u32, 10] {
        for &r in &[0.0, 0.6] {
            for &alpha in &[Alpha::Value(0.5), Alpha::Value(1.0)] {
                let stats = SufficientStats::new(n, 0.0, 0.0, 1.0, 1.0, r)?;
                let eta = Hyperparameters::new(alpha, 0.0, 0.0, 0.0)?;
                let model = PosteriorModel::new(stats, eta)?;
                let ev = model.moments();
                let mut max_dev: f64 = 0.0;
                for k in 1..=4u32 {
                    let closed = model.moment_beta0(k)?.value;
                    let series = ev.moment_general(k)?.value;
                    let dev = if closed == 0.0 && series.abs() < 1e-13 {
                        0.0
                    } else {
                        rel_dev(closed, series)
                    };
                    max_dev = max_dev.max(dev);
                }
                report(
                    "moments-cross",
                    &format!("n={n} r={r} alpha={}", alpha_label(alpha)),
                    max_dev,
                    1e-10,
                    &mut out,
                );
            }
        }
    }
    Ok(out)
}
