//! `corrpost`: Bayesian inference for Pearson's correlation from the
//! command line. Exit codes: 0 ok, 1 verification failure, 2 validation
//! error, 3 numerical non-convergence.

mod report;
mod verify;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use corrpost_core::sampler::{run_chain, ChainConfig};
use corrpost_core::{
    ingest, posterior, read_csv_file, Alpha, Hyperparameters, ModelError, OracleError,
    PosteriorError, PosteriorModel, PriorPreset, QuadError, SamplerError, SpecFunError,
    SufficientStats,
};

use report::{
    format_sig17, AnalysisReport, Diagnostics, Interval, MomentDiag, Num, PosteriorSection,
    PriorEcho, SampleSummary, StatsEcho,
};

#[derive(Parser)]
#[command(
    name = "corrpost",
    version,
    about = "Analytic Bayesian inference for Pearson's correlation coefficient"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Posterior summary: moments, credible interval, density grid
    Analyze(AnalyzeArgs),
    /// Draw from the posterior with an independence-chain Metropolis sampler
    Sample(SampleArgs),
    /// Run numerical verification suites against the integration oracles
    Verify(VerifyArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Sample size (summary input; requires --r)
    #[arg(long)]
    n: Option<u32>,
    /// Sample correlation in (-1, 1)
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    /// Scale statistic s1 = sqrt(mean squared deviation), first column
    #[arg(long)]
    s1: Option<f64>,
    /// Scale statistic s2, second column
    #[arg(long)]
    s2: Option<f64>,
    /// Two-column numeric CSV file (optional single header row)
    #[arg(long, conflicts_with_all = ["n", "r", "s1", "s2"])]
    csv: Option<PathBuf>,
    /// Prior: jeffreys | lindley | right-haar | one-at-a-time |
    /// wishart:a,b | custom:alpha,beta,gamma,delta (alpha 0 or "limit"
    /// selects the improper reference limit)
    #[arg(long, default_value = "jeffreys")]
    prior: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Density grid points (odd, >= 3)
    #[arg(long, default_value_t = 2001)]
    grid: usize,
    /// Central credible-interval mass in (0, 1)
    #[arg(long, default_value_t = 0.95)]
    mass: f64,
    /// Also write the density grid as CSV to this path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Echoed in the report (analysis itself is deterministic)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of retained draws
    #[arg(long, default_value_t = corrpost_core::sampler::DEFAULT_DRAWS)]
    draws: usize,
    /// Burn-in iterations discarded before recording
    #[arg(long, default_value_t = corrpost_core::sampler::DEFAULT_BURN_IN)]
    burn_in: usize,
    /// RNG seed; synthesized and echoed when absent
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplier on the 1/sqrt(n) proposal standard deviation
    #[arg(long, default_value_t = 1.0)]
    proposal_multiplier: f64,
    /// Print a JSON summary instead of one draw per line
    #[arg(long)]
    summary_only: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite to run
    #[arg(value_enum)]
    scope: Scope,
    /// Sample size for the factorization check
    #[arg(long, default_value_t = 5)]
    n: u32,
    /// Sample correlation for the factorization check
    #[arg(long, default_value_t = 0.6, allow_hyphen_values = true)]
    r: f64,
}

#[derive(Copy, Clone, ValueEnum)]
enum Scope {
    Lemma,
    Theorem,
    Moments,
    All,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

const EXIT_VERIFICATION_FAILED: i32 = 1;
const EXIT_VALIDATION: i32 = 2;
const EXIT_NON_CONVERGENCE: i32 = 3;

fn is_non_convergence(err: &CliError) -> bool {
    fn spec(e: &SpecFunError) -> bool {
        matches!(e, SpecFunError::NonConvergence { .. })
    }
    fn quad(e: &QuadError) -> bool {
        matches!(e, QuadError::ToleranceNotMet { .. })
    }
    fn post(e: &PosteriorError) -> bool {
        match e {
            PosteriorError::SpecFun(s) => spec(s),
            PosteriorError::Quad(q) => quad(q),
            PosteriorError::Invalid(_) => false,
        }
    }
    fn oracle(e: &OracleError) -> bool {
        match e {
            OracleError::SpecFun(s) => spec(s),
            OracleError::Quad(q) => quad(q),
            OracleError::Posterior(p) => post(p),
            OracleError::Domain(_) => false,
        }
    }
    match err {
        CliError::Model(ModelError::SpecFun(s)) => spec(s),
        CliError::Posterior(p) => post(p),
        CliError::Oracle(o) => oracle(o),
        CliError::Sampler(SamplerError::Density { source, .. }) => post(source),
        _ => false,
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            if is_non_convergence(&e) {
                EXIT_NON_CONVERGENCE
            } else {
                EXIT_VALIDATION
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

/// (stats, scales-known, r-was-clamped, warnings)
fn resolve_input(input: &InputArgs) -> Result<(SufficientStats, bool, bool, Vec<String>), CliError> {
    let mut warnings = Vec::new();
    if let Some(path) = &input.csv {
        let pairs = read_csv_file(path)?;
        let clamped = SufficientStats::r_is_clamped(raw_correlation(&pairs));
        let stats = ingest(&pairs)?;
        if clamped {
            warnings.push(format!(
                "sample correlation clamped to {:+} (data are collinear)",
                stats.r
            ));
        }
        return Ok((stats, true, clamped, warnings));
    }
    let (Some(n), Some(r)) = (input.n, input.r) else {
        return Err(CliError::Validation(
            "need either --csv or both --n and --r".into(),
        ));
    };
    let scales_known = input.s1.is_some() && input.s2.is_some();
    let s1 = input.s1.unwrap_or(1.0);
    let s2 = input.s2.unwrap_or(1.0);
    let clamped = SufficientStats::r_is_clamped(r);
    if clamped {
        warnings.push(format!("correlation {r} clamped away from ±1"));
    }
    let stats = SufficientStats::new(n, 0.0, 0.0, s1, s2, r)?;
    Ok((stats, scales_known, clamped, warnings))
}

fn raw_correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

fn parse_prior(spec: &str) -> Result<Hyperparameters, CliError> {
    let preset = match spec {
        "jeffreys" => Some(PriorPreset::Jeffreys),
        "lindley" => Some(PriorPreset::Lindley),
        "right-haar" => Some(PriorPreset::RightHaar),
        "one-at-a-time" => Some(PriorPreset::OneAtATimeReference),
        _ => None,
    };
    if let Some(p) = preset {
        return Ok(p.resolve()?);
    }
    if let Some(rest) = spec.strip_prefix("wishart:") {
        let parts = parse_floats(rest, 2, spec)?;
        return Ok(PriorPreset::GeneralizedWishart {
            a: parts[0],
            b: parts[1],
        }
        .resolve()?);
    }
    if let Some(rest) = spec.strip_prefix("custom:") {
        let fields: Vec<&str> = rest.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Validation(format!(
                "custom prior needs alpha,beta,gamma,delta (got \"{spec}\")"
            )));
        }
        let alpha = match fields[0].trim() {
            "limit" => Alpha::Limit,
            v => {
                let x = v.parse::<f64>().map_err(|_| {
                    CliError::Validation(format!("bad alpha \"{v}\" in \"{spec}\""))
                })?;
                if x == 0.0 {
                    Alpha::Limit
                } else {
                    Alpha::Value(x)
                }
            }
        };
        let nums = parse_floats(&fields[1..].join(","), 3, spec)?;
        return Ok(Hyperparameters::new(alpha, nums[0], nums[1], nums[2])?);
    }
    Err(CliError::Validation(format!(
        "unknown prior \"{spec}\" (expected jeffreys | lindley | right-haar | one-at-a-time | wishart:a,b | custom:alpha,beta,gamma,delta)"
    )))
}

fn parse_floats(s: &str, want: usize, ctx: &str) -> Result<Vec<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if v.len() == want => Ok(v),
        _ => Err(CliError::Validation(format!(
            "expected {want} comma-separated numbers in \"{ctx}\""
        ))),
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<i32, CliError> {
    if args.grid < 3 || args.grid.is_multiple_of(2) {
        return Err(CliError::Validation(format!(
            "grid points must be odd and >= 3 (got {})",
            args.grid
        )));
    }
    if !(args.mass > 0.0 && args.mass < 1.0) {
        return Err(CliError::Validation(format!(
            "interval mass must lie in (0, 1) (got {})",
            args.mass
        )));
    }
    let (stats, scales_known, r_clamped, warnings) = resolve_input(&args.input)?;
    let eta = parse_prior(&args.input.prior)?;
    let model = PosteriorModel::new(stats, eta)?;

    let evaluator = model.moments();
    let mut moments = Vec::with_capacity(4);
    let mut moment_diags = Vec::with_capacity(4);
    for k in 1..=4u32 {
        let m = if eta.beta() == 0.0 {
            model.moment_beta0(k)?
        } else {
            evaluator.moment_general(k)?
        };
        moments.push(Num(m.value));
        moment_diags.push(MomentDiag {
            k,
            terms_used: m.terms_used,
            converged: m.converged,
        });
    }
    let mean = moments[0].0;
    let variance = moments[1].0 - mean * mean;

    let lower = model.quantile((1.0 - args.mass) / 2.0)?;
    let upper = model.quantile((1.0 + args.mass) / 2.0)?;

    let log_marginal = if scales_known {
        Some(Num(posterior::log_marginal_likelihood_rho0(
            &stats,
            eta.gamma(),
            eta.delta(),
        )?))
    } else {
        None
    };

    // symmetric grid containing 0 exactly, endpoints pulled in by 1e-9
    let margin = 1.0 - 1e-9;
    let half = (args.grid - 1) as f64 / 2.0;
    let grid: Vec<(Num, Num)> = (0..args.grid)
        .map(|i| {
            let rho = margin * (i as f64 - half) / half;
            model.density(rho).map(|d| (Num(rho), Num(d)))
        })
        .collect::<Result<_, _>>()?;

    if let Some(path) = &args.out {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "rho,density")?;
        for (rho, d) in &grid {
            writeln!(f, "{},{}", format_sig17(rho.0), format_sig17(d.0))?;
        }
    }

    let report = AnalysisReport {
        stats: StatsEcho::from(&stats),
        prior: PriorEcho::new(&args.input.prior, &eta),
        posterior: PosteriorSection {
            mean: Num(mean),
            variance: Num(variance),
            moments,
            interval: Interval {
                lower: Num(lower),
                upper: Num(upper),
                mass: Num(args.mass),
            },
            norm_constant: Num(model.norm_constant()?),
            log_marginal_likelihood: log_marginal,
        },
        density_grid: Some(grid),
        diagnostics: Diagnostics {
            moment_series: moment_diags,
            norm_series_terms: model.norm_terms(),
            r_clamped,
            warnings,
            seed: args.seed,
        },
    };
    println!("{}", report.to_json());
    Ok(0)
}

fn cmd_sample(args: SampleArgs) -> Result<i32, CliError> {
    let (stats, _, _, warnings) = resolve_input(&args.input)?;
    let eta = parse_prior(&args.input.prior)?;
    let model = PosteriorModel::new(stats, eta)?;
    let seed = args.seed.unwrap_or_else(rand::random::<u64>);
    let cfg = ChainConfig::for_model(&model, args.draws, args.burn_in, seed)
        .with_sd_multiplier(args.proposal_multiplier);
    let result = run_chain(&model, &cfg)?;

    let n = result.draws.len() as f64;
    let mean = result.draws.iter().sum::<f64>() / n;
    let sd = (result.draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let summary = SampleSummary {
        seed,
        n_draws: cfg.n_draws,
        burn_in: cfg.burn_in,
        proposal_mean: Num(cfg.proposal_mean),
        proposal_sd: Num(cfg.proposal_sd),
        acceptance_rate: Num(result.acceptance_rate),
        mean: Num(mean),
        sd: Num(sd),
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serialization");
    if args.summary_only {
        println!("{summary_json}");
    } else {
        let stdout = std::io::stdout();
        let mut out = std::io::BufWriter::new(stdout.lock());
        for d in &result.draws {
            writeln!(out, "{d}")?;
        }
        out.flush()?;
        eprintln!("{summary_json}");
    }
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32, CliError> {
    let mut outcome = verify::Outcome {
        passed: 0,
        failed: 0,
    };
    let to_cli = |e: Box<dyn std::error::Error>| CliError::Other(e.to_string());
    match args.scope {
        Scope::Lemma => outcome.merge(verify::run_lemma().map_err(to_cli)?),
        Scope::Theorem => outcome.merge(verify::run_theorem(args.n, args.r).map_err(to_cli)?),
        Scope::Moments => outcome.merge(verify::run_moments().map_err(to_cli)?),
        Scope::All => {
            outcome.merge(verify::run_lemma().map_err(to_cli)?);
            outcome.merge(verify::run_theorem(args.n, args.r).map_err(to_cli)?);
            outcome.merge(verify::run_moments().map_err(to_cli)?);
        }
    }
    println!(
        "verification: {} passed, {} failed",
        outcome.passed, outcome.failed
    );
    Ok(if outcome.all_passed() {
        0
    } else {
        EXIT_VERIFICATION_FAILED
    })
}
