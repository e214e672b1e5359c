//! Normal distribution helpers, the exact one-sample KS statistic, the
//! normal-shift perturbation constant, and the Berry-Esseen right-hand side.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::blaschke::UnitComplex;
use crate::transfer::{CoefficientSequence, TransferredSequence};

/// Constant in `sup_x |Phi(px+q) - Phi(x)| <= C (|p-1| + |q|)` for
/// `p in [1/2, 3/2]`, `q in [-1, 1]`, `Phi` the `N(0, 1/2)` cdf.
pub const NORMAL_SHIFT_CONSTANT: f64 = 1.35;

/// Factor in front of the remainder term: twice [`NORMAL_SHIFT_CONSTANT`].
pub const REMAINDER_FACTOR: f64 = 2.0 * NORMAL_SHIFT_CONSTANT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("variance must be positive, got {0}")]
    NonpositiveVariance(f64),
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFiniteSample,
    #[error("delta must be at least 1, got {0}")]
    DeltaTooSmall(f64),
    #[error("bound constant must be positive, got {0}")]
    NonpositiveConstant(f64),
    #[error("|lambda| = {0} is not below 1")]
    LambdaNotContractive(f64),
    #[error("N = {n} outside 1..={len}")]
    BadPrefix { n: usize, len: usize },
    #[error("need at least 4 directions, got {0}")]
    TooFewDirections(usize),
}

/// cdf of `N(0, variance)`.
pub fn normal_cdf(x: f64, variance: f64) -> Result<f64, StatsError> {
    if !(variance > 0.0) {
        return Err(StatsError::NonpositiveVariance(variance));
    }
    Ok(0.5 * erfc(-x / (2.0 * variance).sqrt()))
}

/// cdf of `N(0, 1/2)`, the law of `Re(alpha Z)` for `Z ~ CN(0, 1)`.
#[inline]
pub fn half_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x)
}

/// Sorted real sample tagged with the seed it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    values: Vec<f64>,
    seed: u64,
}

impl SampleBatch {
    pub fn new(mut values: Vec<f64>, seed: u64) -> Result<Self, StatsError> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFiniteSample);
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(SampleBatch { values, seed })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }
}

/// Complex draws in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSampleBatch {
    values: Vec<Complex64>,
    seed: u64,
}

impl ComplexSampleBatch {
    pub fn new(values: Vec<Complex64>, seed: u64) -> Self {
        ComplexSampleBatch { values, seed }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    /// Sorted `Re(alpha z)`.
    pub fn project(&self, alpha: Complex64) -> Result<SampleBatch, StatsError> {
        SampleBatch::new(self.values.iter().map(|z| (alpha * z).re).collect(), self.seed)
    }

    /// Every draw multiplied by `gamma`.
    pub fn rotate(&self, gamma: Complex64) -> Self {
        ComplexSampleBatch {
            values: self.values.iter().map(|z| gamma * z).collect(),
            seed: self.seed,
        }
    }
}

/// `max_i max(i/n - F(x_i), F(x_i) - (i-1)/n)` over the sorted sample.
pub fn ks_distance(samples: &SampleBatch, cdf: impl Fn(f64) -> f64) -> Result<f64, StatsError> {
    let n = samples.count();
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    let nf = n as f64;
    Ok(samples
        .values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let fx = cdf(x);
            ((i + 1) as f64 / nf - fx).max(fx - i as f64 / nf)
        })
        .fold(0.0, f64::max))
}

/// Approximate 0.1% critical value of the one-sample KS statistic.
pub fn ks_critical_001(n: usize) -> f64 {
    1.95 / (n as f64).sqrt()
}

/// Parameter rectangle and spacings for [`normal_shift_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftGrid {
    pub p_range: (f64, f64),
    pub q_range: (f64, f64),
    pub x_range: (f64, f64),
    pub p_step: f64,
    pub q_step: f64,
    pub x_step: f64,
}

impl Default for ShiftGrid {
    fn default() -> Self {
        ShiftGrid {
            p_range: (0.5, 1.5),
            q_range: (-1.0, 1.0),
            x_range: (-10.0, 10.0),
            p_step: 1e-3,
            q_step: 1e-3,
            x_step: 1e-3,
        }
    }
}

fn axis(range: (f64, f64), step: f64) -> Vec<f64> {
    let count = ((range.1 - range.0) / step).round() as usize;
    (0..=count).map(|i| range.0 + i as f64 * step).collect()
}

/// Result of [`normal_shift_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalShiftReport {
    /// `max |Phi(px+q) - Phi(x)| / (|p-1| + |q|)` over the grid.
    pub max_ratio: f64,
    /// `(p, q, x)` attaining `max_ratio`.
    pub argmax: (f64, f64, f64),
    /// Grid maximum of the mean-value envelope
    /// `max(sup_x |x| e^{-m(x)^2}, 1) / sqrt(pi)`, `m(x) = max(0, |x|/2 - 1)`.
    pub envelope_constant: f64,
    pub envelope_argmax: f64,
}

#[inline]
fn shift_gap(p: f64, q: f64, x: f64) -> f64 {
    (half_normal_cdf(p * x + q) - half_normal_cdf(x)).abs()
}

/// Real roots of `(1-p^2) x^2 - 2pq x - q^2 + ln p = 0`, the critical points
/// of `x -> Phi(px+q) - Phi(x)`.
fn shift_critical_points(p: f64, q: f64) -> Vec<f64> {
    let a = 1.0 - p * p;
    let b = -2.0 * p * q;
    let c = p.ln() - q * q;
    if a.abs() < 1e-14 {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let s = disc.sqrt();
    let t = -0.5 * (b + b.signum() * s);
    let mut roots = Vec::with_capacity(2);
    if t != 0.0 {
        roots.push(t / a);
        roots.push(c / t);
    } else {
        roots.push(0.0);
    }
    roots
}

/// Grid maximum over `x` of `|Phi(px+q) - Phi(x)|`.
///
/// The difference is monotone between consecutive critical points, so its
/// maximum over the `x` nodes is attained next to a critical point or at an
/// end of the range. Evaluating those few nodes gives the same answer as a
/// full scan.
pub fn max_shift_gap_on_grid(p: f64, q: f64, x_range: (f64, f64), x_step: f64) -> (f64, f64) {
    let last = ((x_range.1 - x_range.0) / x_step).round() as i64;
    let node = |j: i64| x_range.0 + j as f64 * x_step;
    let mut candidates = vec![0, last];
    for r in shift_critical_points(p, q) {
        if !r.is_finite() {
            continue;
        }
        let j = ((r - x_range.0) / x_step).floor() as i64;
        for k in j - 1..=j + 2 {
            if (0..=last).contains(&k) {
                candidates.push(k);
            }
        }
    }
    candidates
        .into_iter()
        .map(|j| (shift_gap(p, q, node(j)), node(j)))
        .fold((0.0, x_range.0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// Same maximum by evaluating every node.
pub fn max_shift_gap_scan(p: f64, q: f64, x_range: (f64, f64), x_step: f64) -> (f64, f64) {
    axis(x_range, x_step)
        .into_iter()
        .map(|x| (shift_gap(p, q, x), x))
        .fold((0.0, x_range.0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// Grid search for the normal-shift perturbation constant.
pub fn normal_shift_bound_check(grid: &ShiftGrid) -> NormalShiftReport {
    let ps = axis(grid.p_range, grid.p_step);
    let qs = axis(grid.q_range, grid.q_step);

    // (ratio, p index, q index, x); ties go to the smallest indices
    let best = ps
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut best = (f64::NEG_INFINITY, i, 0usize, 0.0);
            for (j, &q) in qs.iter().enumerate() {
                let denom = (p - 1.0).abs() + q.abs();
                if denom < 1e-12 {
                    continue;
                }
                let (gap, x) = max_shift_gap_on_grid(p, q, grid.x_range, grid.x_step);
                let ratio = gap / denom;
                if ratio > best.0 {
                    best = (ratio, i, j, x);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX, usize::MAX, 0.0),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            },
        );

    let (envelope_constant, envelope_argmax) = mean_value_envelope(grid.x_range, grid.x_step);
    NormalShiftReport {
        max_ratio: best.0,
        argmax: (ps[best.1], qs[best.2], best.3),
        envelope_constant,
        envelope_argmax,
    }
}

/// `max(sup_x |x| e^{-m(x)^2}, 1) / sqrt(pi)` over the `x` grid.
pub fn mean_value_envelope(x_range: (f64, f64), x_step: f64) -> (f64, f64) {
    let (sup, arg) = axis(x_range, x_step)
        .into_iter()
        .map(|x| {
            let m = (x.abs() / 2.0 - 1.0).max(0.0);
            (x.abs() * (-m * m).exp(), x)
        })
        .fold((0.0, 0.0), |best, cur| if cur.0 > best.0 { cur } else { best });
    (sup.max(1.0) / PI.sqrt(), arg)
}

/// Inputs to [`berry_esseen_bound`]; `c_user` stands in for the unknown
/// constant of the martingale term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub delta: f64,
    pub c_user: f64,
    pub lambda: Complex64,
}

impl BoundParams {
    pub fn new(delta: f64, c_user: f64, lambda: Complex64) -> Result<Self, StatsError> {
        if !(delta >= 1.0) {
            return Err(StatsError::DeltaTooSmall(delta));
        }
        if !(c_user > 0.0) {
            return Err(StatsError::NonpositiveConstant(c_user));
        }
        if !(lambda.norm() < 1.0) {
            return Err(StatsError::LambdaNotContractive(lambda.norm()));
        }
        Ok(BoundParams { delta, c_user, lambda })
    }
}

/// `((1+d)/(6+4d), (1+d)/(3+2d))`: exponents of `sum |a|^4` and of
/// `1 / sum |a|^2` in the martingale term.
pub fn bound_exponents(delta: f64) -> (f64, f64) {
    ((1.0 + delta) / (6.0 + 4.0 * delta), (1.0 + delta) / (3.0 + 2.0 * delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundTerms {
    /// `C (sum |a_n|^4)^e4 (sum |a_n|^2)^-e2`
    pub martingale: f64,
    /// `2.7 |l|/(1-|l|) |b_N| / sqrt(sum |a_n|^2)`
    pub remainder: f64,
    /// `|b_N| = |sum lambda^{N-n} a_n|`
    pub abs_b_n: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.martingale + self.remainder
    }
}

/// Right-hand side of the Berry-Esseen estimate for the first `n` terms of `a`.
pub fn berry_esseen_bound(
    a: &CoefficientSequence,
    params: &BoundParams,
    n: usize,
) -> Result<BoundTerms, StatsError> {
    let params = BoundParams::new(params.delta, params.c_user, params.lambda)?;
    if n == 0 || n > a.len() {
        return Err(StatsError::BadPrefix { n, len: a.len() });
    }
    let prefix = a.prefix(n).expect("n >= 1");
    let (e4, e2) = bound_exponents(params.delta);
    let martingale = params.c_user * prefix.sum4().powf(e4) * prefix.sum2().powf(-e2);
    let lambda = params.lambda;
    let b_n = prefix
        .values()
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &x| lambda * acc + x);
    let l = lambda.norm();
    let remainder = REMAINDER_FACTOR * (l / (1.0 - l)) * b_n.norm() / prefix.sum2().sqrt();
    Ok(BoundTerms {
        martingale,
        remainder,
        abs_b_n: b_n.norm(),
    })
}

/// `p_N = sigma_N / (sqrt(1-|l|^2) rho_N)` and
/// `q_N = |l| / sqrt(1-|l|^2) * |b_N| / rho_N`; always `|p_N - 1| <= q_N`.
pub fn scale_shift_diagnostics(b: &TransferredSequence) -> (f64, f64) {
    let l = b.lambda().norm();
    let s = (1.0 - l * l).sqrt();
    (b.sigma() / (s * b.rho()), l / s * b.last().norm() / b.rho())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CramerWold {
    pub sup_discrepancy: f64,
    pub worst_alpha: UnitComplex,
    pub worst_index: usize,
}

/// Largest KS distance of `Re(alpha z)` against `N(0, 1/2)` over
/// `alpha = e^{2 pi i j / alpha_count}`.
pub fn cramer_wold_discrepancy(
    z: &ComplexSampleBatch,
    alpha_count: usize,
) -> Result<CramerWold, StatsError> {
    if alpha_count < 4 {
        return Err(StatsError::TooFewDirections(alpha_count));
    }
    if z.count() == 0 {
        return Err(StatsError::EmptySample);
    }
    let per_dir: Vec<f64> = (0..alpha_count)
        .into_par_iter()
        .map(|j| {
            let alpha = Complex64::from_polar(1.0, TAU * j as f64 / alpha_count as f64);
            ks_distance(&z.project(alpha)?, half_normal_cdf)
        })
        .collect::<Result<_, _>>()?;
    let (worst_index, sup) = per_dir
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, d)| if d > b.1 { (i, d) } else { b });
    Ok(CramerWold {
        sup_discrepancy: sup,
        worst_alpha: UnitComplex::from_turns(worst_index as f64 / alpha_count as f64),
        worst_index,
    })
}
