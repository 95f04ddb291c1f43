//! Command-line front door: evaluate theta functions and layer sums, run
//! the verification suites, and emit machine-readable JSON reports.
//!
//! Exit codes: 0 pass, 1 contract violation or runtime failure, 2 usage
//! error, 3 inconclusive rank probe.

use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use fjtheta::fj::PeriodicFunctionHandle;
use fjtheta::n3::gtilde_counterexample;
use fjtheta::report::{run_suite, suite_rank_probe, Check, Report, RunConfig, SuiteOutcome};
use fjtheta::symmat::{HalfEvenMatrix, Rat, RatMat, UpperHalfPoint};
use fjtheta::theta::{theta_eval, ThetaChar};
use fjtheta::unimod::{g1_eval, psi_eval};
use fjtheta::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fjtheta",
    about = "Certified theta sums, layer decompositions, and verification suites"
)]
struct Cli {
    /// Absolute tail tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Cap on lattice enumeration radii.
    #[arg(long, global = true)]
    budget_radius: Option<usize>,
    /// Quadrature grid order for torus extractions.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Seed of the deterministic sample generator.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key = value configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a theta function with characteristic at one point.
    Theta(ThetaArgs),
    /// Evaluate the psi layer coefficient of a half-even matrix.
    Psi(PsiArgs),
    /// Evaluate the first unimodular layer g1 of a half-even matrix.
    G1(G1Args),
    /// Extract the theta coefficients of the first layer by torus quadrature.
    FjExtract(FjArgs),
    /// Probe the coefficient table for full rank.
    RankProbe(RankArgs),
    /// Compute the counterexample witness of the symmetry violation.
    Gtilde,
    /// Run a named verification suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ThetaArgs {
    /// Index of the characteristic (denominators divide 2m).
    #[arg(long, default_value = "1")]
    m: u32,
    /// Characteristic entries, comma-separated rationals.
    #[arg(long)]
    a: Option<String>,
    /// Point of the upper half space: rows separated by `;`, entries by `,`.
    #[arg(long = "Z")]
    z_mat: String,
    /// Elliptic argument vector, comma-separated complex numbers.
    #[arg(long = "z")]
    z_vec: Option<String>,
}

#[derive(Args)]
struct PsiArgs {
    /// Half-even matrix, rows separated by `;`, rational entries.
    #[arg(long)]
    t: String,
    /// Characteristic entries, comma-separated rationals.
    #[arg(long)]
    a: Option<String>,
    /// Leading-block point of the upper half space.
    #[arg(long = "Z")]
    z_mat: String,
}

#[derive(Args)]
struct G1Args {
    #[arg(long)]
    t: String,
    #[arg(long = "Z")]
    z_mat: String,
    /// Off-column argument vector, comma-separated complex numbers.
    #[arg(long = "z")]
    z_vec: Option<String>,
}

#[derive(Args)]
struct FjArgs {
    /// Half-even matrix with corner entry 1 defining the layer.
    #[arg(long)]
    t: String,
    /// Leading-block point of the upper half space.
    #[arg(long = "Z")]
    z_mat: String,
    /// Imaginary part of the corner variable (at least 1).
    #[arg(long, default_value = "1.5")]
    ynn: f64,
}

#[derive(Args)]
struct RankArgs {
    /// Degree (2 or 3).
    #[arg(long, default_value = "3")]
    n: usize,
    /// Largest block scale to try.
    #[arg(long)]
    q_max: Option<i64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name: theta-id, appendix, n3, prop1, rank-probe.
    suite: String,
    /// Degree for the rank-probe suite.
    #[arg(long, default_value = "3")]
    n: usize,
}

fn usage(msg: String) -> Error {
    Error::Precondition(msg)
}

fn parse_rat(s: &str) -> Result<Rat> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().map_err(|_| usage(format!("bad rational `{s}`")))?;
        let q: i64 = q.trim().parse().map_err(|_| usage(format!("bad rational `{s}`")))?;
        if q == 0 {
            return Err(usage(format!("zero denominator in `{s}`")));
        }
        Ok(Rat::new(p, q))
    } else {
        let p: i64 = s.parse().map_err(|_| usage(format!("bad rational `{s}`")))?;
        Ok(Rat::from_integer(p))
    }
}

fn parse_complex(s: &str) -> Result<Complex64> {
    let t: String = s.trim().chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err(usage("empty complex literal".into()));
    }
    let fail = || usage(format!("bad complex literal `{s}`"));
    let num = |piece: &str, imag: bool| -> Result<f64> {
        match piece {
            "" | "+" if imag => Ok(1.0),
            "-" if imag => Ok(-1.0),
            _ => piece.parse().map_err(|_| fail()),
        }
    };
    // split at the last sign that starts the second term (not leading, not
    // an exponent sign)
    let bytes = t.as_bytes();
    let mut split = None;
    for k in (1..bytes.len()).rev() {
        let c = bytes[k] as char;
        if (c == '+' || c == '-') && !matches!(bytes[k - 1] as char, 'e' | 'E') {
            split = Some(k);
            break;
        }
    }
    if let Some(k) = split {
        let (first, second) = t.split_at(k);
        if let Some(im) = second.strip_suffix('i') {
            Ok(Complex64::new(num(first, false)?, num(im, true)?))
        } else if let Some(im) = first.strip_suffix('i') {
            Ok(Complex64::new(num(second, false)?, num(im, true)?))
        } else {
            Err(fail())
        }
    } else if let Some(im) = t.strip_suffix('i') {
        Ok(Complex64::new(0.0, num(im, true)?))
    } else {
        Ok(Complex64::new(num(&t, false)?, 0.0))
    }
}

fn parse_complex_matrix(s: &str) -> Result<fjtheta::symmat::CMat> {
    let rows: Vec<Vec<Complex64>> = s
        .split(';')
        .map(|row| row.split(',').map(parse_complex).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(usage(format!("matrix `{s}` is not square")));
    }
    Ok(fjtheta::symmat::CMat::from_fn(n, n, |i, j| rows[i][j]))
}

fn parse_point(s: &str) -> Result<UpperHalfPoint> {
    UpperHalfPoint::from_complex(&parse_complex_matrix(s)?)
}

fn parse_rat_matrix(s: &str) -> Result<RatMat> {
    let rows: Vec<Vec<Rat>> = s
        .split(';')
        .map(|row| row.split(',').map(parse_rat).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(usage(format!("matrix `{s}` is not square")));
    }
    Ok(RatMat::from_fn(n, n, |i, j| rows[i][j]))
}

fn parse_char(m: u32, a: &Option<String>, d: usize) -> Result<ThetaChar> {
    match a {
        None => Ok(ThetaChar::zero(m, d)),
        Some(text) => {
            let entries = text.split(',').map(parse_rat).collect::<Result<Vec<_>>>()?;
            if entries.len() != d {
                return Err(usage(format!(
                    "characteristic has {} entries, point dimension is {d}",
                    entries.len()
                )));
            }
            ThetaChar::new(m, entries)
        }
    }
}

fn parse_vec(z: &Option<String>, d: usize) -> Result<Vec<Complex64>> {
    match z {
        None => Ok(vec![Complex64::new(0.0, 0.0); d]),
        Some(text) => {
            let v = text.split(',').map(parse_complex).collect::<Result<Vec<_>>>()?;
            if v.len() != d {
                return Err(usage(format!(
                    "vector has {} entries, point dimension is {d}",
                    v.len()
                )));
            }
            Ok(v)
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)?;
        cfg.apply_file(&text)?;
    }
    if let Some(v) = cli.tol {
        cfg.tol = v;
    }
    if let Some(v) = cli.budget_radius {
        cfg.budget_radius = v;
    }
    if let Some(v) = cli.grid {
        cfg.grid = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(report: &Report, out: &Option<String>, started: Instant) -> Result<()> {
    let json = report.to_json();
    match out {
        Some(path) => std::fs::write(path, &json)?,
        None => print!("{json}"),
    }
    let passed = report.checks.iter().filter(|c| c.pass).count();
    eprintln!(
        "{}: {passed}/{} checks passed in {:.2}s",
        report.suite,
        report.checks.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<SuiteOutcome> {
    let started = Instant::now();
    let cfg = build_config(cli)?;
    let budget = cfg.budget()?;
    let (report, outcome) = match &cli.command {
        Command::Theta(args) => {
            let zhat = parse_point(&args.z_mat)?;
            let d = zhat.dim();
            let a = parse_char(args.m, &args.a, d)?;
            let zvec = parse_vec(&args.z_vec, d)?;
            let value = theta_eval(&a, &zhat, &zvec, &budget)?;
            let mut r = Report::new("theta", &cfg);
            r.checks.push(Check::complex("theta_value", value, 0.0, true));
            r.checks.push(Check::le("certified_tail", cfg.tol, cfg.tol));
            (r, SuiteOutcome::Pass)
        }
        Command::Psi(args) => {
            let t = HalfEvenMatrix::new(parse_rat_matrix(&args.t)?)?;
            let zhat = parse_point(&args.z_mat)?;
            let a = parse_char(1, &args.a, zhat.dim())?;
            let value = psi_eval(&a, &t, &zhat, &budget)?;
            let mut r = Report::new("psi", &cfg);
            r.checks.push(Check::complex("psi_value", value, 0.0, true));
            (r, SuiteOutcome::Pass)
        }
        Command::G1(args) => {
            let t = HalfEvenMatrix::new(parse_rat_matrix(&args.t)?)?;
            let zhat = parse_point(&args.z_mat)?;
            let zvec = parse_vec(&args.z_vec, zhat.dim())?;
            let value = g1_eval(&t, &zhat, &zvec, &budget)?;
            let mut r = Report::new("g1", &cfg);
            r.checks.push(Check::complex("g1_value", value, 0.0, true));
            (r, SuiteOutcome::Pass)
        }
        Command::FjExtract(args) => {
            let t = HalfEvenMatrix::new(parse_rat_matrix(&args.t)?)?;
            let zhat = parse_point(&args.z_mat)?;
            let d = zhat.dim();
            if t.dim() != d + 1 {
                return Err(usage(format!(
                    "matrix dimension {} does not extend the point dimension {d}",
                    t.dim()
                )));
            }
            let layer = t.clone();
            let layer_budget = budget;
            let f = PeriodicFunctionHandle::new(move |z: &UpperHalfPoint| {
                let zhat = z.leading_block()?;
                let zvec: Vec<Complex64> = z.off_column().iter().copied().collect();
                let phase = (2.0 * std::f64::consts::PI * Complex64::i() * z.corner()).exp();
                Ok(g1_eval(&layer, &zhat, &zvec, &layer_budget)? * phase)
            });
            let mut r = Report::new("fj-extract", &cfg);
            for a in ThetaChar::half_integer_chars(d) {
                let phi = fjtheta::fj::extract_phi(
                    &f,
                    &a,
                    &zhat,
                    &vec![0.0; d],
                    args.ynn,
                    cfg.grid,
                    &budget,
                )?;
                // the layer couples the zero characteristic to T_1n = 0 and
                // the nonzero ones to T_1n = 1/2; the complementary
                // coefficients vanish identically
                let coupled = (t.t1n() == Rat::from_integer(0)) == a.is_zero();
                let reference = if coupled {
                    psi_eval(&a, &t, &zhat, &budget)?
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let name = format!(
                    "phi_{}",
                    a.a()
                        .iter()
                        .map(|r| r.to_string())
                        .collect::<Vec<_>>()
                        .join("_")
                );
                r.checks.push(Check::complex(&name, phi, 0.0, true));
                r.checks.push(Check::le(
                    &format!("{name}_layer_residual"),
                    (phi - reference).norm(),
                    (cfg.tol * 100.0).max(1e-9),
                ));
            }
            let outcome = if r.all_pass() {
                SuiteOutcome::Pass
            } else {
                SuiteOutcome::Fail
            };
            (r, outcome)
        }
        Command::RankProbe(args) => {
            let mut cfg2 = cfg.clone();
            if let Some(q) = args.q_max {
                cfg2.q_max = q;
            }
            suite_rank_probe(&cfg2, args.n)?
        }
        Command::Gtilde => {
            let grid: Vec<Complex64> = (0..4)
                .map(|j| Complex64::new(0.3, 1.0 + 0.2 * j as f64))
                .collect();
            let w = gtilde_counterexample(&grid, cfg.grid, &budget)?;
            let mut r = Report::new("gtilde", &cfg);
            r.checks.push(Check::le(
                "vanishing_theta_coefficient_max",
                w.psi_half0_11.iter().map(|v| v.norm()).fold(0.0, f64::max),
                1e-8,
            ));
            r.checks
                .push(Check::le("prefactor_error", (w.prefactor - 12.0).abs(), 1e-6));
            r.checks.push(Check {
                name: "fitted_exponent".into(),
                value: w.fitted_exponent.into(),
                bound: 0.0,
                pass: true,
            });
            r.checks
                .push(Check::le("bounded_entry_oracle_residual", w.oracle_residual, 1e-8));
            let outcome = if r.all_pass() {
                SuiteOutcome::Pass
            } else {
                SuiteOutcome::Fail
            };
            (r, outcome)
        }
        Command::Verify(args) => {
            if args.suite == "rank-probe" {
                suite_rank_probe(&cfg, args.n)?
            } else {
                run_suite(&args.suite, &cfg)?
            }
        }
    };
    emit(&report, &cli.out, started)?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(Error::Precondition(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
