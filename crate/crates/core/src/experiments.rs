//! Seeded Monte Carlo experiments over uniform boundary points.
//!
//! Sample `i` draws its point from a ChaCha8 stream keyed by `(seed, i)`, so
//! any sample can be regenerated on its own. Work is split into fixed blocks
//! of [`BLOCK`] samples that are reduced in index order, which keeps every
//! float sum independent of how many worker threads run.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blaschke::{BlaschkeProduct, UnitComplex};
use crate::numeric::{self, CompensatedSum};
use crate::report::{ExperimentReport, ReportRow, RowDiagnostics};
use crate::stats::{self, BoundParams, ComplexSampleBatch, StatsError};
use crate::transfer::{self, CoefficientFamily, TransferError, TransferredSequence};

/// Samples per reduction block.
pub const BLOCK: usize = 1024;

/// Minimum sample count for distributional tests.
pub const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sigma_N vanishes (all coefficients zero)")]
    DegenerateSigma,
    #[error("only {above} grid points above the noise floor {floor:.4}; need {needed}")]
    NoiseFloor { above: usize, needed: usize, floor: f64 },
    #[error("family {0} is not square summable")]
    NotSquareSummable(CoefficientFamily),
    #[error("discarded tail mass ratio {ratio:e} exceeds {limit:e}")]
    TruncationTooCoarse { ratio: f64, limit: f64 },
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Thresholds calibrated from pilot runs of this code, not theoretical values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// KS sup at the largest `N` of the CLT run.
    pub clt_ks_max: f64,
    /// KS sup of the normalized tail sum.
    pub tail_ks_max: f64,
    /// Largest acceptable fitted log-log slope.
    pub rate_exponent_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            clt_ks_max: 0.02,
            tail_ks_max: 0.05,
            rate_exponent_max: -0.15,
        }
    }
}

/// Tail experiment settings: sum `a_n f∘n` over `start..=truncation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    pub start: usize,
    pub truncation: usize,
}

fn default_alpha_count() -> usize {
    64
}
fn one() -> f64 {
    1.0
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_alpha() -> UnitComplex {
    UnitComplex::ONE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub f: BlaschkeProduct,
    pub family: CoefficientFamily,
    pub n_grid: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default = "default_alpha_count")]
    pub alpha_count: usize,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "one")]
    pub c_user: f64,
    /// Direction used for the martingale-array diagnostics.
    #[serde(default = "default_alpha")]
    pub diagnostic_alpha: UnitComplex,
    /// Threshold in the conditional Lindeberg indicator.
    #[serde(default = "default_epsilon")]
    pub lindeberg_epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailConfig>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            f: BlaschkeProduct::z_times_factor(Complex64::new(0.5, 0.0)).expect("valid"),
            family: CoefficientFamily::Ones,
            n_grid: vec![10, 100, 1000],
            samples: 100_000,
            seed: 0x5eed_1234,
            alpha_count: 64,
            delta: 1.0,
            c_user: 1.0,
            diagnostic_alpha: UnitComplex::ONE,
            lindeberg_epsilon: 0.1,
            tail: None,
            thresholds: Thresholds::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.n_grid.is_empty() {
            return bad("n_grid is empty");
        }
        if self.n_grid[0] == 0 {
            return bad("n_grid entries must be positive");
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing");
        }
        if self.samples < MIN_SAMPLES {
            return Err(ExperimentError::Config(format!(
                "samples = {} is below the minimum {MIN_SAMPLES}",
                self.samples
            )));
        }
        if self.alpha_count < 4 {
            return bad("alpha_count must be at least 4");
        }
        BoundParams::new(self.delta, self.c_user, self.lambda())?;
        if !(self.lindeberg_epsilon > 0.0) {
            return bad("lindeberg_epsilon must be positive");
        }
        if let Some(t) = self.tail {
            if t.start == 0 || t.truncation <= t.start {
                return bad("tail needs 1 <= start < truncation");
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> Complex64 {
        self.f.schwarz_pick_data().lambda
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// The boundary point of sample `index`.
pub fn sample_point(seed: u64, index: u64) -> UnitComplex {
    UnitComplex::from_turns(sample_rng(seed, index).random::<f64>())
}

/// Orbits `[f∘1(omega_i), ..., f∘len(omega_i)]` of the sample points.
///
/// For `f = c z^d` the float orbit is not usable: each step multiplies the
/// angle by `d`, so after about 53 / log2(d) steps nothing of `omega` is left
/// and, for `d = 2`, binary rounding pins the orbit near 1. Those maps are
/// iterated exactly instead, as `t -> d t + arg(c)/2pi mod 1` on a fixed-point
/// angle carrying enough random bits from the sample's stream for `len`
/// steps. Its leading 53 bits are those of [`sample_point`].
#[derive(Debug, Clone)]
pub struct OrbitSampler<'a> {
    f: &'a BlaschkeProduct,
    seed: u64,
    exact: Option<ExactAngle>,
}

#[derive(Debug, Clone)]
struct ExactAngle {
    degree: u64,
    /// `arg(c) / 2pi` as a fixed-point fraction, most significant limb first.
    shift: Vec<u64>,
}

impl<'a> OrbitSampler<'a> {
    pub fn new(f: &'a BlaschkeProduct, seed: u64, len: usize) -> Self {
        let exact = f.zeros().iter().all(|z| z.re == 0.0 && z.im == 0.0).then(|| {
            let degree = f.degree() as u64;
            let bits = (len as f64 * (degree as f64).log2()).ceil() as usize + 128;
            let gamma = UnitComplex::normalize(f.rotation()).turns();
            let limbs = bits.div_ceil(64).max(fixed_point_limbs(gamma));
            ExactAngle {
                degree,
                shift: to_fixed_point(gamma, limbs),
            }
        });
        OrbitSampler { f, seed, exact }
    }

    /// Whether orbits are computed from an exact angle.
    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn fill(&self, index: u64, len: usize, out: &mut Vec<UnitComplex>) {
        let mut rng = sample_rng(self.seed, index);
        match &self.exact {
            None => self.f.orbit_into(UnitComplex::from_turns(rng.random::<f64>()), len, out),
            Some(e) => {
                let mut t: Vec<u64> = (0..e.shift.len()).map(|_| rng.next_u64()).collect();
                out.clear();
                for _ in 0..len {
                    // t <- d t + gamma, integer part dropped
                    let mut carry = 0u128;
                    for (limb, &g) in t.iter_mut().zip(&e.shift).rev() {
                        let v = *limb as u128 * e.degree as u128 + g as u128 + carry;
                        *limb = v as u64;
                        carry = v >> 64;
                    }
                    let turns = t[0] as f64 * (-64f64).exp2() + t[1] as f64 * (-128f64).exp2();
                    out.push(UnitComplex::from_turns(turns));
                }
            }
        }
    }
}

/// Limbs needed to hold `x in [0, 1)` exactly.
fn fixed_point_limbs(x: f64) -> usize {
    if x == 0.0 {
        return 2;
    }
    // x = m 2^e with odd integer m, so bits below 2^-(-e) are zero
    let e = x.log2().floor() as i64 - 52;
    ((-e).max(64) as usize).div_ceil(64) + 1
}

fn to_fixed_point(x: f64, limbs: usize) -> Vec<u64> {
    let mut out = vec![0u64; limbs];
    let mut rest = x;
    for limb in out.iter_mut() {
        if rest == 0.0 {
            break;
        }
        // exact: rest * 2^64 keeps the mantissa, the floor splits it cleanly
        let scaled = rest * 64f64.exp2();
        let hi = scaled.floor();
        *limb = hi as u64;
        rest = scaled - hi;
    }
    out
}

/// Everything one pass over the samples yields at a fixed `N`.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub n: usize,
    pub batch: ComplexSampleBatch,
    pub transferred: TransferredSequence,
    /// `S_N = sum |a_n|`
    pub sum_abs: f64,
    pub sum2: f64,
    pub diagnostics: ArrayDiagnostics,
}

/// Martingale-array diagnostics at one `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArrayDiagnostics {
    /// `rho^-2 max_n ((1-|l|^2)|b_n|^2/2 + avg Re(alpha^2 mu b_n^2 f∘(n+1))/2)`
    pub mn_est: f64,
    /// `max |b_n|^2 / rho^2`
    pub mn_bound: f64,
    /// Monte Carlo mean of `V_N^2`.
    pub vn2_est: f64,
    pub vn2_stderr: f64,
    /// `(1 - |lambda|^2) / 2`
    pub vn2_limit: f64,
    /// Fraction of samples with `max_n |Re(alpha b_n Y_n)| / rho > eps`.
    pub lindeberg_frequency: f64,
    /// Deterministic bound `(1+|l|) max|b_n| / rho` on that maximum.
    pub lindeberg_max_bound: f64,
    /// Largest per-sample `|sum a f∘n - sum b Y - l b_N f∘(N+1)| / sum |a_n|`.
    pub decomposition_residual: f64,
    /// Monte Carlo `E|S_N^-1 sum a_n f∘n|^2`.
    pub weak_law_moment: f64,
    pub weak_law_stderr: f64,
    /// `sigma_N^2 / S_N^2` from the exact variance identity.
    pub weak_law_exact: f64,
    /// `((1+|l|)/(1-|l|)) sum |a_n|^2 / S_N^2`
    pub weak_law_envelope: f64,
    /// `E|sum b_n^2 f∘(n+1)|^(1+d) / (sum |b_n|^4)^((1+d)/2)`; logged only.
    pub moment_ratio: f64,
    pub mean_abs2: f64,
    pub mean: Complex64,
}

struct BlockOut {
    z: Vec<Complex64>,
    vn2: Vec<f64>,
    weak: Vec<f64>,
    moment: CompensatedSum,
    lindeberg_hits: usize,
    decomposition: f64,
    per_n: Vec<f64>,
}

/// Runs the pass for the first `n` coefficients.
pub fn simulate(config: &ExperimentConfig, n: usize) -> Result<Simulation, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::Config("N must be positive".into()));
    }
    let f = &config.f;
    let sp = f.schwarz_pick_data();
    let (lambda, mu) = (sp.lambda, sp.mu);
    let a = config.family.generate(n)?;
    let b = transfer::transfer(&a, lambda)?;
    let sigma = b.sigma();
    if !(sigma > 0.0) {
        return Err(ExperimentError::DegenerateSigma);
    }
    let rho = b.rho();
    let rho2 = rho * rho;
    let l2 = lambda.norm_sqr();
    let alpha = config.diagnostic_alpha.value();
    let a2mu = alpha * alpha * mu;
    let eps = config.lindeberg_epsilon;
    let delta = config.delta;
    let sum_abs = a.sum_abs();
    let av = a.values();
    let bv = b.values();
    let b2: Vec<Complex64> = bv.iter().map(|x| x * x).collect();
    let b_last = b.last();

    let samples = config.samples;
    let sampler = OrbitSampler::new(f, config.seed, n + 1);
    let blocks = samples.div_ceil(BLOCK);
    let outs: Vec<BlockOut> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let lo = blk * BLOCK;
            let hi = (lo + BLOCK).min(samples);
            let mut out = BlockOut {
                z: Vec::with_capacity(hi - lo),
                vn2: Vec::with_capacity(hi - lo),
                weak: Vec::with_capacity(hi - lo),
                moment: CompensatedSum::new(),
                lindeberg_hits: 0,
                decomposition: 0.0,
                per_n: vec![0.0; n],
            };
            let mut orbit = Vec::with_capacity(n + 1);
            for i in lo..hi {
                sampler.fill(i as u64, n + 1, &mut orbit);
                let mut raw = Complex64::new(0.0, 0.0);
                let mut mart = Complex64::new(0.0, 0.0);
                let mut quad = Complex64::new(0.0, 0.0);
                let mut vn = 0.0;
                let mut worst = 0.0f64;
                for k in 0..n {
                    let w = orbit[k].value();
                    let w_next = orbit[k + 1].value();
                    raw += av[k] * w;
                    let y = w - lambda * w_next;
                    mart += bv[k] * y;
                    let t = (a2mu * b2[k] * w_next).re;
                    vn += t;
                    out.per_n[k] += t;
                    quad += b2[k] * w_next;
                    worst = worst.max((alpha * bv[k] * y).re.abs());
                }
                mart += lambda * b_last * orbit[n].value();
                out.decomposition = out.decomposition.max((raw - mart).norm() / sum_abs);
                out.z.push(raw / sigma);
                out.vn2.push(0.5 * (1.0 - l2) + 0.5 * vn / rho2);
                out.weak.push(raw.norm_sqr() / (sum_abs * sum_abs));
                out.moment.add(quad.norm().powf(1.0 + delta));
                if worst / rho > eps {
                    out.lindeberg_hits += 1;
                }
            }
            out
        })
        .collect();

    let mut z = Vec::with_capacity(samples);
    let mut vn2 = Vec::with_capacity(samples);
    let mut weak = Vec::with_capacity(samples);
    let mut moment = CompensatedSum::new();
    let mut hits = 0;
    let mut decomposition = 0.0f64;
    let mut per_n = vec![CompensatedSum::new(); n];
    for out in outs {
        z.extend(out.z);
        vn2.extend(out.vn2);
        weak.extend(out.weak);
        moment.add(out.moment.value());
        hits += out.lindeberg_hits;
        decomposition = decomposition.max(out.decomposition);
        for (acc, v) in per_n.iter_mut().zip(out.per_n) {
            acc.add(v);
        }
    }

    let ns = samples as f64;
    let mn_est = bv
        .iter()
        .zip(&per_n)
        .map(|(bk, acc)| 0.5 * (1.0 - l2) * bk.norm_sqr() + 0.5 * acc.value() / ns)
        .fold(f64::NEG_INFINITY, f64::max)
        / rho2;
    let max_b2 = bv.iter().map(|x| x.norm_sqr()).fold(0.0, f64::max);
    let (vn2_est, vn2_stderr) = numeric::mean_and_stderr(&vn2);
    let (weak_law_moment, weak_law_stderr) = numeric::mean_and_stderr(&weak);
    let sum4_b = numeric::sum(bv.iter().map(|x| x.norm_sqr().powi(2)));
    let l = lambda.norm();
    let mean_abs2 = numeric::sum(z.iter().map(|v| v.norm_sqr())) / ns;
    let mean = numeric::complex_sum(z.iter().copied()) / ns;

    let diagnostics = ArrayDiagnostics {
        mn_est,
        mn_bound: max_b2 / rho2,
        vn2_est,
        vn2_stderr,
        vn2_limit: 0.5 * (1.0 - l2),
        lindeberg_frequency: hits as f64 / ns,
        lindeberg_max_bound: (1.0 + l) * max_b2.sqrt() / rho,
        decomposition_residual: decomposition,
        weak_law_moment,
        weak_law_stderr,
        weak_law_exact: b.sigma2() / (sum_abs * sum_abs),
        weak_law_envelope: (1.0 + l) / (1.0 - l) * a.sum2() / (sum_abs * sum_abs),
        moment_ratio: moment.value() / ns / sum4_b.powf(0.5 * (1.0 + delta)),
        mean_abs2,
        mean,
    };
    Ok(Simulation {
        n,
        batch: ComplexSampleBatch::new(z, config.seed),
        transferred: b,
        sum_abs,
        sum2: a.sum2(),
        diagnostics,
    })
}

/// Draws of `Z_N = sigma_N^-1 sum_{n<=N} a_n f∘n(omega)`.
pub fn sample_zn(config: &ExperimentConfig, n: usize) -> Result<ComplexSampleBatch, ExperimentError> {
    Ok(simulate(config, n)?.batch)
}

pub fn brown_eagleson_diagnostics(config: &ExperimentConfig, n: usize) -> Result<ArrayDiagnostics, ExperimentError> {
    Ok(simulate(config, n)?.diagnostics)
}

/// Warns when the largest coefficient share is not shrinking along the grid.
pub fn lindeberg_warning(config: &ExperimentConfig) -> Result<Option<String>, ExperimentError> {
    let last_n = *config.n_grid.last().expect("validated");
    let a = config.family.generate(last_n)?;
    let last = transfer::lindeberg_ratios(a.values())?;
    let first = transfer::lindeberg_ratios(&a.values()[..config.n_grid[0]])?;
    let shrinking = config.n_grid.len() < 2 || last.max_ratio < first.max_ratio * (1.0 - 1e-9);
    if last.max_ratio >= 0.5 || !shrinking {
        return Ok(Some(format!(
            "family {} does not look Lindeberg-negligible: max |a_n|^2 share {:.4} at N = {last_n}",
            config.family, last.max_ratio
        )));
    }
    Ok(None)
}

/// Full per-`N` sweep: KS sup, bound, diagnostics.
pub fn clt_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let mut warnings = Vec::new();
    if let Some(w) = lindeberg_warning(config)? {
        warnings.push(w);
    }
    let max_n = *config.n_grid.last().expect("validated");
    let a_full = config.family.generate(max_n)?;
    let params = BoundParams::new(config.delta, config.c_user, config.lambda())?;

    let mut rows = Vec::new();
    let mut diags = Vec::new();
    for &n in &config.n_grid {
        let sim = simulate(config, n)?;
        let cw = stats::cramer_wold_discrepancy(&sim.batch, config.alpha_count)?;
        let bound = stats::berry_esseen_bound(&a_full, &params, n)?;
        let (p_n, q_n) = stats::scale_shift_diagnostics(&sim.transferred);
        let d = sim.diagnostics;
        rows.push(ReportRow {
            n,
            sigma_n: sim.transferred.sigma(),
            rho_n: sim.transferred.rho(),
            abs_b_n: sim.transferred.last().norm(),
            ks_sup: cw.sup_discrepancy,
            rhs_bound: bound.total(),
            mn_est: d.mn_est,
            vn2_est: d.vn2_est,
            weak_law_moment: d.weak_law_moment,
        });
        diags.push(RowDiagnostics {
            n,
            worst_alpha: cw.worst_alpha,
            bound,
            p_n,
            q_n,
            lindeberg: transfer::lindeberg_ratios(&a_full.values()[..n])?,
            array: d,
        });
    }
    let mut report = ExperimentReport::new(config.clone(), rows, diags, warnings);
    report.fitted = rate_fit(&report).ok();
    report.metadata.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Slope of `log ks` against `log N` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Ordinary least squares on `(log n, log ks)`.
pub fn fit_power_law(ns: &[f64], ks: &[f64]) -> Option<RateFit> {
    let m = ns.len();
    if m < 2 || m != ks.len() {
        return None;
    }
    let xs: Vec<f64> = ns.iter().map(|x| x.ln()).collect();
    let ys: Vec<f64> = ks.iter().map(|y| y.ln()).collect();
    let mf = m as f64;
    let mx = numeric::sum(xs.iter().copied()) / mf;
    let my = numeric::sum(ys.iter().copied()) / mf;
    let sxx = numeric::sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let sxy = numeric::sum(xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)));
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if m > 2 {
        let ssr = numeric::sum(xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)));
        (ssr / (mf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(RateFit {
        exponent: slope,
        stderr,
        intercept,
        points: m,
    })
}

/// Monte Carlo noise floor `1.5 / sqrt(samples)` for KS distances.
pub fn noise_floor(samples: usize) -> f64 {
    1.5 / (samples as f64).sqrt()
}

/// Minimum number of grid points above the noise floor for a fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Rate fit over rows whose KS distance clears the noise floor.
pub fn fit_rows(rows: &[ReportRow], samples: Option<usize>) -> Result<RateFit, ExperimentError> {
    let floor = samples.map_or(0.0, noise_floor);
    let (ns, ks): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.ks_sup > floor)
        .map(|r| (r.n as f64, r.ks_sup))
        .unzip();
    if ns.len() < MIN_FIT_POINTS {
        return Err(ExperimentError::NoiseFloor {
            above: ns.len(),
            needed: MIN_FIT_POINTS,
            floor,
        });
    }
    fit_power_law(&ns, &ks).ok_or_else(|| ExperimentError::Config("degenerate N grid".into()))
}

pub fn rate_fit(report: &ExperimentReport) -> Result<RateFit, ExperimentError> {
    fit_rows(&report.rows, Some(report.metadata.config.samples))
}

/// One weak-law row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakLawRow {
    pub n: usize,
    pub second_moment: f64,
    pub stderr: f64,
    /// `sigma_N^2 / S_N^2`
    pub exact: f64,
    pub envelope: f64,
    /// `sum |a_n|^2 / S_N^2`
    pub concentration: f64,
    /// Monte Carlo estimate within three standard errors of the envelope.
    pub within_envelope: bool,
}

pub fn weak_law_experiment(config: &ExperimentConfig) -> Result<Vec<WeakLawRow>, ExperimentError> {
    config.validate()?;
    config
        .n_grid
        .iter()
        .map(|&n| {
            let sim = simulate(config, n)?;
            let d = sim.diagnostics;
            Ok(WeakLawRow {
                n,
                second_moment: d.weak_law_moment,
                stderr: d.weak_law_stderr,
                exact: d.weak_law_exact,
                envelope: d.weak_law_envelope,
                concentration: sim.sum2 / (sim.sum_abs * sim.sum_abs),
                within_envelope: d.weak_law_moment <= d.weak_law_envelope + 3.0 * d.weak_law_stderr,
            })
        })
        .collect()
}

/// Result of [`tail_clt_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailReport {
    pub start: usize,
    pub truncation: usize,
    pub ks_sup: f64,
    pub worst_alpha: UnitComplex,
    /// `sigma(N)` of the truncated tail from the exact variance identity.
    pub sigma_tail: f64,
    /// Bound on the dropped `l^2` mass divided by `sigma(N)^2`.
    pub discarded_ratio: f64,
    /// `|a_N|^2 / sum_{n >= N} |a_n|^2` over the kept terms.
    pub lindeberg_tail_ratio: f64,
}

/// Largest allowed dropped-mass ratio.
pub const TAIL_DISCARD_LIMIT: f64 = 1e-4;

/// KS discrepancy of `sigma(N)^-1 sum_{n=N}^{M} a_n f∘n` against `N(0, 1/2)`
/// projections.
pub fn tail_clt_experiment(
    config: &ExperimentConfig,
    start: usize,
    truncation: usize,
) -> Result<TailReport, ExperimentError> {
    if start == 0 || truncation <= start {
        return Err(ExperimentError::Config("tail needs 1 <= start < truncation".into()));
    }
    if !config.family.is_square_summable() {
        return Err(ExperimentError::NotSquareSummable(config.family));
    }
    let a = config.family.generate(truncation)?;
    let shifted = transfer::CoefficientSequence::new(a.values()[start - 1..].to_vec())?;
    let lambda = config.lambda();
    let b = transfer::transfer(&shifted, lambda)?;
    let sigma = b.sigma();
    if !(sigma > 0.0) {
        return Err(ExperimentError::DegenerateSigma);
    }
    let dropped = config
        .family
        .tail_mass_bound(truncation)
        .ok_or(ExperimentError::NotSquareSummable(config.family))?;
    let discarded_ratio = dropped / (sigma * sigma);
    if discarded_ratio > TAIL_DISCARD_LIMIT {
        return Err(ExperimentError::TruncationTooCoarse {
            ratio: discarded_ratio,
            limit: TAIL_DISCARD_LIMIT,
        });
    }
    let sampler = OrbitSampler::new(&config.f, config.seed, truncation);
    let av = a.values();
    let samples = config.samples;
    let z: Vec<Complex64> = (0..samples.div_ceil(BLOCK))
        .into_par_iter()
        .map(|blk| {
            let lo = blk * BLOCK;
            let hi = (lo + BLOCK).min(samples);
            let mut orbit = Vec::with_capacity(truncation);
            (lo..hi)
                .map(|i| {
                    sampler.fill(i as u64, truncation, &mut orbit);
                    let s: Complex64 = (start - 1..truncation).map(|k| av[k] * orbit[k].value()).sum();
                    s / sigma
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let cw = stats::cramer_wold_discrepancy(&ComplexSampleBatch::new(z, config.seed), config.alpha_count)?;
    Ok(TailReport {
        start,
        truncation,
        ks_sup: cw.sup_discrepancy,
        worst_alpha: cw.worst_alpha,
        sigma_tail: sigma,
        discarded_ratio,
        lindeberg_tail_ratio: shifted.values()[0].norm_sqr() / shifted.sum2(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::{inner_product, QuadratureGrid};

    fn small(f: BlaschkeProduct, family: CoefficientFamily, n_grid: Vec<usize>, samples: usize) -> ExperimentConfig {
        ExperimentConfig {
            f,
            family,
            n_grid,
            samples,
            seed: 42,
            ..ExperimentConfig::default()
        }
    }

    fn half() -> BlaschkeProduct {
        BlaschkeProduct::z_times_factor(Complex64::new(0.5, 0.0)).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::default();
        assert!(c.validate().is_ok());
        c.n_grid = vec![10, 10];
        assert!(c.validate().is_err());
        c.n_grid = vec![];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.samples = 10;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.delta = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_and_json_agree() {
        let toml_src = r#"
            family = "ones"
            n_grid = [10, 100]
            samples = 2000
            seed = 7
            f = { zeros = [[0.0, 0.0], [0.5, 0.0]], rotation = [1.0, 0.0] }
        "#;
        let json_src = r#"{"f": {"zeros": [[0.0, 0.0], [0.5, 0.0]], "rotation": [1.0, 0.0]},
            "family": "ones", "n_grid": [10, 100], "samples": 2000, "seed": 7}"#;
        let a = ExperimentConfig::from_toml_str(toml_src).unwrap();
        let b = ExperimentConfig::from_json_str(json_src).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.alpha_count, 64);
        let again = ExperimentConfig::from_toml_str(&a.to_toml_string()).unwrap();
        assert_eq!(again, a);
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn single_term_has_unit_modulus() {
        let cfg = small(BlaschkeProduct::power(2).unwrap(), CoefficientFamily::Ones, vec![1], 1000);
        let z = sample_zn(&cfg, 1).unwrap();
        assert!(z.values().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_coefficients_are_rejected() {
        let cfg = small(half(), CoefficientFamily::Geometric(0.0), vec![5], 1000);
        assert!(matches!(simulate(&cfg, 5), Err(ExperimentError::DegenerateSigma)));
    }

    #[test]
    fn mean_and_normalization() {
        let cfg = small(half(), CoefficientFamily::Ones, vec![50], 20_000);
        let s = simulate(&cfg, 50).unwrap();
        let n = cfg.samples as f64;
        assert!(s.diagnostics.mean.norm() <= 4.0 / n.sqrt());
        assert!((s.diagnostics.mean_abs2 - 1.0).abs() <= 5.0 / n.sqrt());
        assert!(s.diagnostics.decomposition_residual <= 1e-12);
    }

    #[test]
    fn exact_angle_matches_float_orbit_early() {
        for f in [
            BlaschkeProduct::power(2).unwrap(),
            BlaschkeProduct::power(3).unwrap(),
            BlaschkeProduct::new(vec![Complex64::new(0.0, 0.0); 2], Complex64::from_polar(1.0, 1.0)).unwrap(),
        ] {
            let sampler = OrbitSampler::new(&f, 4, 200);
            assert!(sampler.is_exact());
            let mut exact = Vec::new();
            for i in 0..200 {
                sampler.fill(i, 200, &mut exact);
                let float = f.orbit_row(sample_point(4, i), 20);
                for (n, (a, b)) in exact.iter().zip(&float).enumerate() {
                    let tol = 1e-14 * (f.degree() as f64).powi(n as i32 + 1);
                    assert!((a.value() - b.value()).norm() <= tol, "{f} n = {}", n + 1);
                }
                assert!(exact.iter().all(|w| (w.value().norm() - 1.0).abs() < 1e-15));
            }
        }
        assert!(!OrbitSampler::new(&half(), 4, 10).is_exact());
    }

    #[test]
    fn squaring_orbit_stays_uniform_past_float_precision() {
        // depth 53 is where a float orbit of z^2 collapses towards 1
        let f = BlaschkeProduct::power(2).unwrap();
        let sampler = OrbitSampler::new(&f, 6, 60);
        let mut orbit = Vec::new();
        let u: Vec<f64> = (0..50_000)
            .map(|i| {
                sampler.fill(i, 60, &mut orbit);
                orbit[52].turns()
            })
            .collect();
        let batch = stats::SampleBatch::new(u, 6).unwrap();
        let d = stats::ks_distance(&batch, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d < stats::ks_critical_001(50_000), "{d}");
    }

    #[test]
    fn fixed_point_conversion_is_exact() {
        for x in [0.0, 0.5, 0.1, 1.0 / 3.0, 1e-30, 0.999_999_999_999] {
            let limbs = fixed_point_limbs(x);
            let fx = to_fixed_point(x, limbs);
            let back: f64 = fx.iter().enumerate().map(|(k, &l)| l as f64 * (-64.0 * (k + 1) as f64).exp2()).sum();
            assert_eq!(back, x);
        }
    }

    #[test]
    fn sample_points_are_uniform() {
        let u: Vec<f64> = (0..100_000).map(|i| sample_point(3, i).turns()).collect();
        let batch = stats::SampleBatch::new(u, 3).unwrap();
        let d = stats::ks_distance(&batch, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d < stats::ks_critical_001(100_000));
    }

    #[test]
    fn boundary_map_preserves_lebesgue_measure() {
        for f in [half(), BlaschkeProduct::z_times_factor(Complex64::new(0.3, 0.4)).unwrap()] {
            let u: Vec<f64> = (0..100_000).map(|i| f.eval_boundary(sample_point(8, i)).turns()).collect();
            let batch = stats::SampleBatch::new(u, 8).unwrap();
            let d = stats::ks_distance(&batch, |x| x.clamp(0.0, 1.0)).unwrap();
            assert!(d < stats::ks_critical_001(100_000), "{f}: {d}");
        }
    }

    #[test]
    fn zero_lambda_variance_split() {
        let cfg = small(BlaschkeProduct::power(2).unwrap(), CoefficientFamily::Ones, vec![20], 5000);
        let d = brown_eagleson_diagnostics(&cfg, 20).unwrap();
        assert_eq!(d.vn2_limit, 0.5);
        assert!(d.mn_est <= d.mn_bound);
    }

    #[test]
    fn impulse_triggers_warning() {
        let cfg = small(half(), CoefficientFamily::Impulse, vec![10, 100], 1000);
        assert!(lindeberg_warning(&cfg).unwrap().is_some());
        let cfg = small(half(), CoefficientFamily::Ones, vec![10, 100], 1000);
        assert!(lindeberg_warning(&cfg).unwrap().is_none());
    }

    #[test]
    fn exact_power_law_fit() {
        let ns = [10.0, 100.0, 1000.0, 10000.0];
        let ks: Vec<f64> = ns.iter().map(|n: &f64| n.powf(-0.25)).collect();
        let fit = fit_power_law(&ns, &ks).unwrap();
        assert!((fit.exponent + 0.25).abs() <= 1e-12);
        assert!(fit.stderr <= 1e-12);
    }

    #[test]
    fn noisy_power_law_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ns: Vec<f64> = (0..12).map(|i| 10f64.powf(1.0 + 0.25 * i as f64)).collect();
        let ks: Vec<f64> = ns
            .iter()
            .map(|n| 0.7 * n.powf(-0.2) * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0)))
            .collect();
        let fit = fit_power_law(&ns, &ks).unwrap();
        assert!((fit.exponent + 0.2).abs() <= 0.02, "{fit:?}");
    }

    #[test]
    fn fit_refuses_points_under_floor() {
        let rows: Vec<ReportRow> = [10usize, 100, 1000, 10000]
            .iter()
            .map(|&n| ReportRow {
                n,
                ks_sup: 1e-4,
                ..ReportRow::default()
            })
            .collect();
        assert!(matches!(fit_rows(&rows, Some(1000)), Err(ExperimentError::NoiseFloor { .. })));
        assert!(fit_rows(&rows, None).is_ok());
    }

    #[test]
    fn weak_law_closed_forms() {
        let cfg = small(half(), CoefficientFamily::Ones, vec![10, 40], 2000);
        for row in weak_law_experiment(&cfg).unwrap() {
            assert!((row.concentration - 1.0 / row.n as f64).abs() < 1e-15);
            assert!((row.envelope - 3.0 / row.n as f64).abs() < 1e-14);
            assert!(row.exact <= row.envelope);
            assert!(row.within_envelope);
        }
        let cfg = small(half(), CoefficientFamily::Linear, vec![10, 20, 40], 2000);
        let rows = weak_law_experiment(&cfg).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].concentration < w[0].concentration);
        }
        let n = 40.0f64;
        let expect = (n * (n + 1.0) * (2.0 * n + 1.0) / 6.0) / (n * (n + 1.0) / 2.0).powi(2);
        assert!((rows[2].concentration - expect).abs() < 1e-15);
    }

    #[test]
    fn exact_weak_law_never_exceeds_envelope() {
        let f = BlaschkeProduct::z_times_factor(Complex64::new(0.3, 0.4)).unwrap();
        let lambda = f.schwarz_pick_data().lambda;
        for seed in 0..1000u64 {
            let a = CoefficientFamily::Random(seed).generate(1 + (seed as usize % 97)).unwrap();
            let b = transfer::transfer(&a, lambda).unwrap();
            let l = lambda.norm();
            let exact = b.sigma().powi(2) / a.sum_abs().powi(2);
            let envelope = (1.0 + l) / (1.0 - l) * a.sum2() / a.sum_abs().powi(2);
            assert!(exact <= envelope * (1.0 + 1e-12));
        }
    }

    #[test]
    fn tail_truncation_rules() {
        let cfg = small(half(), CoefficientFamily::Geometric(0.5), vec![5], 1000);
        let r = tail_clt_experiment(&cfg, 5, 60).unwrap();
        assert!(r.discarded_ratio <= TAIL_DISCARD_LIMIT);
        assert!(matches!(
            tail_clt_experiment(&cfg, 5, 8),
            Err(ExperimentError::TruncationTooCoarse { .. })
        ));
        let ones = small(half(), CoefficientFamily::Ones, vec![5], 1000);
        assert!(matches!(
            tail_clt_experiment(&ones, 5, 60),
            Err(ExperimentError::NotSquareSummable(_))
        ));
    }

    #[test]
    fn tail_sigma_matches_quadrature() {
        // sigma(N)^2 of the shifted sequence equals the quadrature norm of the
        // tail sum, since f∘(N-1) preserves Lebesgue measure.
        let f = half();
        let cfg = small(f.clone(), CoefficientFamily::Geometric(0.5), vec![2], 1000);
        let (start, trunc) = (2usize, 5usize);
        let a = cfg.family.generate(trunc).unwrap();
        let grid = QuadratureGrid::new(1 << 16).unwrap();
        let sum = grid.sample(None, |w| {
            let row = f.orbit_row(w, trunc);
            (start - 1..trunc).map(|k| a.values()[k] * row[k].value()).sum()
        });
        let q = inner_product(&sum, &sum, &grid).unwrap().re.sqrt();
        let shifted = transfer::CoefficientSequence::new(a.values()[start - 1..].to_vec()).unwrap();
        let b = transfer::transfer(&shifted, cfg.lambda()).unwrap();
        assert!((q - b.sigma()).abs() <= 1e-6 * b.sigma());
    }
}
