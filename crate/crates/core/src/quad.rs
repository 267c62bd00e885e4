//! Adaptive Gauss-Kronrod quadrature (7-15 pair) with a fixed subdivision
//! rule: the panel with the largest error estimate is bisected first, so
//! results are deterministic regardless of evaluation order.

use thiserror::Error;

/// Outcome of a quadrature run.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub est_error: f64,
    pub evaluations: u64,
}

#[derive(Debug, Error)]
pub enum QuadError {
    #[error(
        "quadrature tolerance not met: estimated error {est_error:e} for value {value:e} after {evaluations} evaluations"
    )]
    ToleranceNotMet {
        value: f64,
        est_error: f64,
        evaluations: u64,
    },
    #[error("integrand returned a non-finite value at x = {x}")]
    NonFiniteIntegrand { x: f64 },
}

pub type Result<T> = std::result::Result<T, QuadError>;

// 15-point Kronrod abscissae (positive half) and weights, with the embedded
// 7-point Gauss weights. Standard QUADPACK constants.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        scaled = scaled.max(50.0 * f64::EPSILON * res_abs);
    }
    scaled
}

/// One 7-15 Gauss-Kronrod panel. Returns (value, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut fv = [0.0f64; 15];
    for (i, &x) in XGK.iter().enumerate() {
        let dx = half * x;
        let (lo, hi) = (f(center - dx), f(center + dx));
        if !lo.is_finite() {
            return Err(QuadError::NonFiniteIntegrand { x: center - dx });
        }
        if !hi.is_finite() {
            return Err(QuadError::NonFiniteIntegrand { x: center + dx });
        }
        fv[i] = lo;
        fv[14 - i] = hi;
    }
    let fc = fv[7];
    let mut kronrod = 0.0f64;
    let mut gauss = 0.0f64;
    let mut res_abs = 0.0f64;
    for i in 0..7 {
        let pair = fv[i] + fv[14 - i];
        kronrod += WGK[i] * pair;
        res_abs += WGK[i] * (fv[i].abs() + fv[14 - i].abs());
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    kronrod += WGK[7] * fc;
    gauss += WG[3] * fc;
    res_abs += WGK[7] * fc.abs();

    let mean = kronrod * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for i in 0..7 {
        res_asc += WGK[i] * ((fv[i] - mean).abs() + (fv[14 - i] - mean).abs());
    }
    let err = rescale_error((kronrod - gauss) * half, res_abs * half.abs(), res_asc * half.abs());
    Ok((kronrod * half, err))
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    splittable: bool,
}

/// Adaptive integration of `f` over `[a, b]`.
///
/// `seeds` lists interior breakpoints for the initial subdivision (useful
/// when the caller knows where the mass concentrates); it may be empty.
/// Stops when the summed error estimate is below
/// `max(abs_tol, rel_tol * |integral|)`, errors with [`QuadError::ToleranceNotMet`]
/// when `max_panels` bisections cannot get there.
pub fn adaptive_quadrature<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_panels: usize,
    seeds: &[f64],
) -> Result<QuadResult> {
    let mut bounds: Vec<f64> = Vec::with_capacity(seeds.len() + 2);
    bounds.push(a);
    for &s in seeds {
        if s > a && s < b {
            bounds.push(s);
        }
    }
    bounds.push(b);
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();

    let mut evaluations = 0u64;
    let mut panels: Vec<Panel> = Vec::with_capacity(bounds.len() + 16);
    for w in bounds.windows(2) {
        let (value, err) = gk15(&f, w[0], w[1])?;
        evaluations += 15;
        panels.push(Panel {
            a: w[0],
            b: w[1],
            value,
            err,
            splittable: true,
        });
    }

    let width_floor = f64::EPSILON * (a.abs() + b.abs() + 1.0);
    loop {
        let total_err: f64 = panels.iter().map(|p| p.err).sum();
        let total_val: f64 = panels.iter().map(|p| p.value).sum();
        let target = abs_tol.max(rel_tol * total_val.abs());
        if total_err <= target {
            break;
        }
        // bisect the worst splittable panel
        let worst = panels
            .iter()
            .enumerate()
            .filter(|(_, p)| p.splittable)
            .max_by(|(_, x), (_, y)| x.err.total_cmp(&y.err).then(y.a.total_cmp(&x.a)))
            .map(|(i, _)| i);
        let Some(i) = worst else {
            return Err(QuadError::ToleranceNotMet {
                value: total_val,
                est_error: total_err,
                evaluations,
            });
        };
        if panels.len() >= max_panels {
            return Err(QuadError::ToleranceNotMet {
                value: total_val,
                est_error: total_err,
                evaluations,
            });
        }
        let p = panels[i];
        let mid = 0.5 * (p.a + p.b);
        if p.b - p.a <= width_floor || mid <= p.a || mid >= p.b {
            panels[i].splittable = false;
            continue;
        }
        let (lv, le) = gk15(&f, p.a, mid)?;
        let (rv, re) = gk15(&f, mid, p.b)?;
        evaluations += 30;
        panels[i] = Panel {
            a: p.a,
            b: mid,
            value: lv,
            err: le,
            splittable: true,
        };
        panels.push(Panel {
            a: mid,
            b: p.b,
            value: rv,
            err: re,
            splittable: true,
        });
    }

    // Deterministic final accumulation: left-to-right panel order.
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value: f64 = panels.iter().map(|p| p.value).sum();
    let est_error: f64 = panels.iter().map(|p| p.err).sum();
    Ok(QuadResult {
        value,
        est_error,
        evaluations,
    })
}

const UNIT_MAX_PANELS: usize = 4096;

/// Integral over ρ ∈ [lo, hi] ⊆ (−1, 1) of an integrand given as
/// `g(ρ, 1 − ρ²)`, using the substitution ρ = sin θ.
///
/// The substitution compactifies the interval with no truncation tail and
/// supplies `1 − ρ² = cos²θ` without cancellation, so integrable endpoint
/// singularities like `(1 − ρ²)^{α−1}` are tamed by the cos θ Jacobian
/// instead of defeating f64 near |ρ| = 1.
pub fn integrate_unit_interval<G: Fn(f64, f64) -> f64>(
    g: G,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    debug_assert!((-1.0..=1.0).contains(&lo) && (-1.0..=1.0).contains(&hi) && lo <= hi);
    let th_lo = lo.asin();
    let th_hi = hi.asin();
    let f = |theta: f64| {
        let c = theta.cos();
        g(theta.sin(), c * c) * c
    };
    let n_seed = 8;
    let seeds: Vec<f64> = (1..n_seed)
        .map(|i| th_lo + (th_hi - th_lo) * i as f64 / n_seed as f64)
        .collect();
    adaptive_quadrature(f, th_lo, th_hi, rel_tol, abs_tol, UNIT_MAX_PANELS, &seeds)
}
