//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad input or I/O error.
//! `INNER_CLT_THREADS` fixes the worker count (unset or 0 lets rayon choose);
//! outputs do not depend on it.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_complex::Complex64;

use crate::experiments::{self, ExperimentConfig, ExperimentError};
use crate::harmonic::{self, QuadratureGrid};
use crate::report::{self, ReportError};
use crate::stats;
use crate::transfer::{self, CoefficientSequence};

pub const THREADS_ENV: &str = "INNER_CLT_THREADS";

/// Residual tolerance for the checks in `verify`.
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "inner-clt", version, about = "Central limit experiments for iterates of inner functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the conditional moment identities and transfer bounds by quadrature.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Quadrature nodes (power of two, at least 1024).
        #[arg(long, default_value_t = harmonic::DEFAULT_NODES)]
        nodes: usize,
        /// Fourier truncation of the conditional expectation.
        #[arg(long, default_value_t = harmonic::DEFAULT_TRUNCATION)]
        truncation: usize,
    },
    /// Run the Monte Carlo sweep and write results.csv, metadata.json, ks_vs_N.svg.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also run the tail experiment from the config's `tail` table.
        #[arg(long)]
        tail: bool,
        /// Also write weak_law.csv.
        #[arg(long)]
        weak_law: bool,
    },
    /// Fit the decay exponent of ks_sup against N.
    Rate {
        /// results.csv, or the directory containing it.
        #[arg(long = "in")]
        input: PathBuf,
        /// Sample count for the noise floor; read from metadata.json when omitted.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print the Berry-Esseen bound for each N of a config.
    Bound {
        #[arg(long)]
        config: PathBuf,
    },
    /// Transfer a coefficient CSV to b_n = sum lambda^(n-k) a_k.
    Transfer {
        #[arg(long)]
        coeffs: PathBuf,
        /// `re,im`
        #[arg(long, allow_hyphen_values = true, value_parser = parse_complex)]
        lambda: Complex64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    let (re, im) = s.split_once(',').ok_or_else(|| format!("expected re,im, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok(Complex64::new(p(re)?, p(im)?))
}

#[derive(Debug)]
enum Failure {
    /// A check ran and did not hold.
    Check(String),
    /// Input or environment problem.
    Input(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::NoiseFloor { .. } => Failure::Check(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

macro_rules! input_err {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Input(e.to_string())
            }
        }
    )*};
}
input_err!(io::Error, ReportError, transfer::TransferError, stats::StatsError, harmonic::HarmonicError, serde_json::Error);

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                eprintln!("error: {THREADS_ENV}={s:?} is not a thread count");
                return 2;
            }
        },
        Err(_) => 0,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            1
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Verify {
            config,
            nodes,
            truncation,
        } => verify(config.as_deref(), nodes, truncation),
        Command::Simulate {
            config,
            out,
            tail,
            weak_law,
        } => simulate(&config, &out, tail, weak_law),
        Command::Rate { input, samples } => rate(&input, samples),
        Command::Bound { config } => bound(&config),
        Command::Transfer { coeffs, lambda, out } => transfer_cmd(&coeffs, lambda, out.as_deref()),
    }
}

/// Reads a TOML config, or JSON when the extension is `.json`.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        ExperimentConfig::from_json_str(&text)
    } else {
        ExperimentConfig::from_toml_str(&text)
    }
}

fn verify(config: Option<&Path>, nodes: usize, truncation: usize) -> Result<(), Failure> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let f = &cfg.f;
    let grid = QuadratureGrid::new(nodes)?;
    let n_max = grid.n_max(f, truncation).min(6);
    let sp = f.schwarz_pick_data();
    let mut out = io::stdout().lock();
    writeln!(out, "f = {f}")?;
    writeln!(out, "lambda = {:.6e}, mu = {:.6e}", sp.lambda, sp.mu)?;
    if n_max == 0 {
        return Err(Failure::Input(format!(
            "{nodes} nodes cannot resolve f∘2 at truncation {truncation}"
        )));
    }
    let mut failed = Vec::new();
    let unimodular = grid
        .nodes()
        .iter()
        .map(|&w| (f.eval_boundary(w).value().norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let pick = sp.mu.norm() - (1.0 - sp.lambda.norm_sqr());
    let ok = unimodular <= 1e-12 && pick <= 1e-12;
    writeln!(
        out,
        "[{}] boundary modulus error {unimodular:.1e}, |mu| - (1 - |lambda|^2) = {pick:.3e}",
        if ok { "ok" } else { "FAIL" }
    )?;
    if !ok {
        failed.push("boundary values".into());
    }
    for n in 1..=n_max {
        let mut worst = harmonic::MartingaleResiduals::default();
        for j in 0..8 {
            let alpha = Complex64::from_polar(1.0, std::f64::consts::TAU * j as f64 / 8.0);
            let r = harmonic::verify_martingale_identities(f, n, alpha, &grid, truncation)?;
            worst = worst.worst(&r);
        }
        let ok = worst.max_all() <= IDENTITY_TOLERANCE;
        writeln!(
            out,
            "[{}] n = {n}: mean {:.1e}, |Y|^2 {:.1e}, Y^2 {:.1e}, Re^2 {:.1e}, tail {:.1e}",
            if ok { "ok" } else { "FAIL" },
            worst.mean_zero,
            worst.abs_square,
            worst.square,
            worst.real_part,
            worst.tail
        )?;
        if !ok {
            failed.push(format!("identities at n = {n}"));
        }
    }
    let n = *cfg.n_grid.last().expect("validated");
    let a = cfg.family.generate(n)?;
    let nb = transfer::norm_bounds_check(&a, sp.lambda)?;
    let back = transfer::invert_transfer(&transfer::transfer(&a, sp.lambda)?);
    let roundtrip = a
        .values()
        .iter()
        .zip(back.values())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
        / a.values().iter().map(|x| x.norm()).fold(0.0, f64::max);
    let ok = nb.lower_ok && nb.upper_ok && nb.energy_ok && roundtrip <= 1e-12;
    writeln!(
        out,
        "[{}] transfer of {} (N = {n}): |b|/|a| = {:.6}, sigma^2/|a|^2 = {:.6}, round trip {:.1e}",
        if ok { "ok" } else { "FAIL" },
        cfg.family,
        nb.norm_ratio,
        nb.energy_ratio,
        roundtrip
    )?;
    if !ok {
        failed.push("transfer bounds".into());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}

fn simulate(config: &Path, out: &Path, tail: bool, weak_law: bool) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let mut report = experiments::clt_experiment(&cfg)?;
    if tail {
        let t = cfg
            .tail
            .ok_or_else(|| Failure::Input("--tail needs a [tail] table in the config".into()))?;
        report.tail = Some(experiments::tail_clt_experiment(&cfg, t.start, t.truncation)?);
    }
    report.write_dir(out)?;
    if weak_law {
        let rows = experiments::weak_law_experiment(&cfg)?;
        let mut w = csv::Writer::from_path(out.join("weak_law.csv")).map_err(|e| Failure::Input(e.to_string()))?;
        w.write_record(["N", "second_moment", "stderr", "exact", "envelope", "concentration"])
            .map_err(|e| Failure::Input(e.to_string()))?;
        for r in &rows {
            w.write_record([
                r.n.to_string(),
                report::fmt_f64(r.second_moment),
                report::fmt_f64(r.stderr),
                report::fmt_f64(r.exact),
                report::fmt_f64(r.envelope),
                report::fmt_f64(r.concentration),
            ])
            .map_err(|e| Failure::Input(e.to_string()))?;
        }
        w.flush()?;
    }
    let mut so = io::stdout().lock();
    writeln!(so, "{:>8} {:>12} {:>12} {:>12}", "N", "ks_sup", "rhs_bound", "sigma_N")?;
    for r in &report.rows {
        writeln!(so, "{:>8} {:>12.5e} {:>12.5e} {:>12.5e}", r.n, r.ks_sup, r.rhs_bound, r.sigma_n)?;
    }
    if let Some(fit) = report.fitted {
        writeln!(so, "fitted exponent {:.4} ± {:.4}", fit.exponent, fit.stderr)?;
    }
    if let Some(t) = report.tail {
        writeln!(so, "tail N = {}..{}: ks_sup {:.5e}", t.start, t.truncation, t.ks_sup)?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn rate(input: &Path, samples: Option<usize>) -> Result<(), Failure> {
    let csv_path = if input.is_dir() {
        input.join(report::RESULTS_FILE)
    } else {
        input.to_path_buf()
    };
    let rows = report::read_results_csv(fs::File::open(&csv_path)?)?;
    let samples = match samples {
        Some(s) => Some(s),
        None => {
            let meta = csv_path.with_file_name(report::METADATA_FILE);
            fs::read_to_string(meta)
                .ok()
                .and_then(|t| report::samples_from_metadata(&t))
        }
    };
    let fit = experiments::fit_rows(&rows, samples)?;
    writeln!(
        io::stdout(),
        "exponent {:.4} ± {:.4} over {} points",
        fit.exponent,
        fit.stderr,
        fit.points
    )?;
    Ok(())
}

fn bound(config: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let report = experiments::clt_experiment(&cfg)?;
    let mut so = io::stdout().lock();
    writeln!(
        so,
        "{:>8} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "N", "martingale", "remainder", "rhs_bound", "ks_sup", "ks/rhs"
    )?;
    for (r, d) in report.rows.iter().zip(&report.diagnostics) {
        writeln!(
            so,
            "{:>8} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e}",
            r.n,
            d.bound.martingale,
            d.bound.remainder,
            r.rhs_bound,
            r.ks_sup,
            r.ks_sup / r.rhs_bound
        )?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn transfer_cmd(coeffs: &Path, lambda: Complex64, out: Option<&Path>) -> Result<(), Failure> {
    let a = CoefficientSequence::read_csv_path(coeffs)?;
    let b = transfer::transfer(&a, lambda)?;
    let seq = CoefficientSequence::new(b.values().to_vec())?;
    match out {
        Some(p) => seq.write_csv(fs::File::create(p)?)?,
        None => seq.write_csv(io::stdout().lock())?,
    }
    let lr = transfer::lindeberg_ratios(a.values())?;
    eprintln!("rho_N = {:.16e}", b.rho());
    eprintln!("sigma_N = {:.16e}", b.sigma());
    eprintln!("sigma_N^2 = {:.16e}", b.sigma2());
    eprintln!(
        "lindeberg: last {:.6e}, max {:.6e}{}",
        lr.last_ratio,
        lr.max_ratio,
        if lr.degenerate { " (degenerate)" } else { "" }
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_arguments() {
        assert_eq!(parse_complex("-0.5,0.25").unwrap(), Complex64::new(-0.5, 0.25));
        assert_eq!(parse_complex(" 1 , -2 ").unwrap(), Complex64::new(1.0, -2.0));
        assert!(parse_complex("1").is_err());
        assert!(parse_complex("a,b").is_err());
    }

    #[test]
    fn negative_lambda_parses() {
        let cli = Cli::try_parse_from(["inner-clt", "transfer", "--coeffs", "a.csv", "--lambda", "-0.5,0"]).unwrap();
        match cli.command {
            Command::Transfer { lambda, .. } => assert_eq!(lambda, Complex64::new(-0.5, 0.0)),
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["inner-clt", "frobnicate"]), 2);
        assert_eq!(run(["inner-clt", "simulate"]), 2);
        assert_eq!(run(["inner-clt", "--help"]), 0);
    }

    #[test]
    fn missing_config_is_input_error() {
        assert_eq!(run(["inner-clt", "bound", "--config", "/nonexistent/x.toml"]), 2);
    }
}
