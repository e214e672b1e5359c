//! Coefficient transfer `a -> b`, `b_n = sum_{k<=n} lambda^{n-k} a_k`.
//!
//! With `Y_n = f∘n - lambda f∘(n+1)` the iterate sum rewrites as
//! `sum a_n f∘n = sum b_n Y_n + lambda b_N f∘(N+1)`, and since the `Y_n` are
//! orthogonal with `E|Y_n|^2 = 1 - |lambda|^2`,
//! `sigma_N^2 = (1 - |lambda|^2) rho_N^2 + |lambda|^2 |b_N|^2`
//! where `rho_N^2 = sum |b_n|^2`.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("|lambda| = {0} is not below 1")]
    LambdaNotContractive(f64),
    #[error("coefficient sequence is empty")]
    Empty,
    #[error("all coefficients are zero")]
    AllZero,
    #[error("unknown coefficient family {0:?}")]
    UnknownFamily(String),
    #[error("coefficient csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("coefficient csv row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Finite complex sequence `a_1..a_N` with its compensated power sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSequence {
    values: Vec<Complex64>,
    sum_abs: f64,
    sum2: f64,
    sum4: f64,
}

impl CoefficientSequence {
    pub fn new(values: Vec<Complex64>) -> Result<Self, TransferError> {
        if values.is_empty() {
            return Err(TransferError::Empty);
        }
        let sum_abs = numeric::sum(values.iter().map(|a| a.norm()));
        let sum2 = numeric::sum(values.iter().map(|a| a.norm_sqr()));
        let sum4 = numeric::sum(values.iter().map(|a| a.norm_sqr().powi(2)));
        Ok(CoefficientSequence {
            values,
            sum_abs,
            sum2,
            sum4,
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `S_N = sum |a_n|`.
    pub fn sum_abs(&self) -> f64 {
        self.sum_abs
    }

    /// `sum |a_n|^2`.
    pub fn sum2(&self) -> f64 {
        self.sum2
    }

    /// `sum |a_n|^4`.
    pub fn sum4(&self) -> f64 {
        self.sum4
    }

    pub fn l2_norm(&self) -> f64 {
        self.sum2.sqrt()
    }

    /// First `n` terms.
    pub fn prefix(&self, n: usize) -> Result<Self, TransferError> {
        Self::new(self.values[..n.min(self.len())].to_vec())
    }

    /// Writes the `n,re_a,im_a` csv form.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), TransferError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "re_a", "im_a"])?;
        for (i, a) in self.values.iter().enumerate() {
            out.write_record([(i + 1).to_string(), fmt_f64(a.re), fmt_f64(a.im)])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads `n,re_a,im_a` rows; a header line is optional. Rows must be
    /// numbered `1, 2, ...` in order.
    pub fn read_csv<R: io::Read>(r: R) -> Result<Self, TransferError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(r);
        let mut values = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if row == 0 && rec.get(0).is_some_and(|s| s.parse::<f64>().is_err()) {
                continue;
            }
            let bad = |msg: String| TransferError::BadRow { row: row + 1, msg };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", rec.len())));
            }
            let n: usize = rec[0].parse().map_err(|e| bad(format!("index: {e}")))?;
            if n != values.len() + 1 {
                return Err(bad(format!("expected index {}, got {n}", values.len() + 1)));
            }
            let re: f64 = rec[1].parse().map_err(|e| bad(format!("re_a: {e}")))?;
            let im: f64 = rec[2].parse().map_err(|e| bad(format!("im_a: {e}")))?;
            values.push(Complex64::new(re, im));
        }
        Self::new(values)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, TransferError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// 17 significant digits, enough to re-parse to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Named coefficient generators.
///
/// String forms: `ones`, `sqrt`, `linear`, `impulse`, `geometric <r>`,
/// `power <p>` (`a_n = n^-p`), `random <seed>`. A colon works in place of
/// the space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientFamily {
    /// `a_n = 1`
    Ones,
    /// `a_n = sqrt(n)`
    Sqrt,
    /// `a_n = n`
    Linear,
    /// `a = (1, 0, 0, ...)`
    Impulse,
    /// `a_n = r^n`
    Geometric(f64),
    /// `a_n = n^(-p)`
    Power(f64),
    /// i.i.d. standard complex normal entries
    Random(u64),
}

impl CoefficientFamily {
    pub fn coefficient(&self, n: usize) -> Complex64 {
        debug_assert!(n >= 1);
        let x = n as f64;
        let re = match *self {
            CoefficientFamily::Ones => 1.0,
            CoefficientFamily::Sqrt => x.sqrt(),
            CoefficientFamily::Linear => x,
            CoefficientFamily::Impulse => {
                if n == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            CoefficientFamily::Geometric(r) => r.powi(n as i32),
            CoefficientFamily::Power(p) => x.powf(-p),
            CoefficientFamily::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(n as u64);
                let g: [f64; 2] = [standard_normal(&mut rng), standard_normal(&mut rng)];
                return Complex64::new(g[0], g[1]) * std::f64::consts::FRAC_1_SQRT_2;
            }
        };
        Complex64::new(re, 0.0)
    }

    /// `a_1..a_len`.
    pub fn generate(&self, len: usize) -> Result<CoefficientSequence, TransferError> {
        CoefficientSequence::new((1..=len).map(|n| self.coefficient(n)).collect())
    }

    /// Whether the family is square summable.
    pub fn is_square_summable(&self) -> bool {
        match *self {
            CoefficientFamily::Impulse => true,
            CoefficientFamily::Geometric(r) => r.abs() < 1.0,
            CoefficientFamily::Power(p) => p > 0.5,
            _ => false,
        }
    }

    /// Upper bound on `sum_{n > m} |a_n|^2`, when the family is square summable.
    pub fn tail_mass_bound(&self, m: usize) -> Option<f64> {
        match *self {
            CoefficientFamily::Impulse => Some(if m >= 1 { 0.0 } else { 1.0 }),
            CoefficientFamily::Geometric(r) if r.abs() < 1.0 => {
                let r2 = r * r;
                Some(r2.powi(m as i32 + 1) / (1.0 - r2))
            }
            // sum_{n>m} n^-2p <= int_m^inf x^-2p dx
            CoefficientFamily::Power(p) if p > 0.5 && m >= 1 => {
                Some((m as f64).powf(1.0 - 2.0 * p) / (2.0 * p - 1.0))
            }
            _ => None,
        }
    }
}

/// Box-Muller; kept local so `Random` coefficients depend only on the seed.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl fmt::Display for CoefficientFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientFamily::Ones => write!(f, "ones"),
            CoefficientFamily::Sqrt => write!(f, "sqrt"),
            CoefficientFamily::Linear => write!(f, "linear"),
            CoefficientFamily::Impulse => write!(f, "impulse"),
            CoefficientFamily::Geometric(r) => write!(f, "geometric {r}"),
            CoefficientFamily::Power(p) => write!(f, "power {p}"),
            CoefficientFamily::Random(s) => write!(f, "random {s}"),
        }
    }
}

impl FromStr for CoefficientFamily {
    type Err = TransferError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || TransferError::UnknownFamily(s.to_string());
        let mut parts = s.trim().splitn(2, |c: char| c == ' ' || c == ':');
        let name = parts.next().unwrap_or("").to_ascii_lowercase();
        let arg = parts.next().map(str::trim);
        let fam = match (name.as_str(), arg) {
            ("ones", None) => CoefficientFamily::Ones,
            ("sqrt", None) => CoefficientFamily::Sqrt,
            ("linear", None) => CoefficientFamily::Linear,
            ("impulse", None) => CoefficientFamily::Impulse,
            ("geometric", Some(r)) => CoefficientFamily::Geometric(r.parse().map_err(|_| unknown())?),
            ("power", Some(p)) => CoefficientFamily::Power(p.parse().map_err(|_| unknown())?),
            ("random", Some(seed)) => CoefficientFamily::Random(seed.parse().map_err(|_| unknown())?),
            _ => return Err(unknown()),
        };
        Ok(fam)
    }
}

impl Serialize for CoefficientFamily {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CoefficientFamily {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `b`, `rho_N`, `sigma_N` for a given `a` and `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferredSequence {
    values: Vec<Complex64>,
    lambda: Complex64,
    rho: f64,
    sigma2: f64,
}

impl TransferredSequence {
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    /// `rho_N = sqrt(sum |b_n|^2)`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `sigma_N = ||sum a_n f∘n||_2`.
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// `sigma_N^2 = (1 - |lambda|^2) rho_N^2 + |lambda|^2 |b_N|^2`, without a
    /// square-root round trip.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn last(&self) -> Complex64 {
        *self.values.last().expect("non-empty by construction")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `b_1 = a_1`, `b_n = lambda b_{n-1} + a_n`.
pub fn transfer(a: &CoefficientSequence, lambda: Complex64) -> Result<TransferredSequence, TransferError> {
    if !(lambda.norm() < 1.0) {
        return Err(TransferError::LambdaNotContractive(lambda.norm()));
    }
    let mut values = Vec::with_capacity(a.len());
    let mut prev = Complex64::new(0.0, 0.0);
    for &x in a.values() {
        prev = lambda * prev + x;
        values.push(prev);
    }
    Ok(from_b(values, lambda))
}

fn from_b(values: Vec<Complex64>, lambda: Complex64) -> TransferredSequence {
    let rho2 = numeric::sum(values.iter().map(|b| b.norm_sqr()));
    let l2 = lambda.norm_sqr();
    let last = values.last().map_or(0.0, |b| b.norm_sqr());
    let sigma2 = (1.0 - l2) * rho2 + l2 * last;
    TransferredSequence {
        values,
        lambda,
        rho: rho2.sqrt(),
        sigma2,
    }
}

/// `a_1 = b_1`, `a_n = b_n - lambda b_{n-1}`.
pub fn invert_transfer(b: &TransferredSequence) -> CoefficientSequence {
    let lambda = b.lambda;
    let values = b
        .values
        .iter()
        .enumerate()
        .map(|(i, &bn)| if i == 0 { bn } else { bn - lambda * b.values[i - 1] })
        .collect();
    CoefficientSequence::new(values).expect("b is non-empty")
}

/// Builds a transferred sequence directly from `b` (for inversion tests and
/// csv input).
pub fn transferred_from_b(b: Vec<Complex64>, lambda: Complex64) -> Result<TransferredSequence, TransferError> {
    if b.is_empty() {
        return Err(TransferError::Empty);
    }
    if !(lambda.norm() < 1.0) {
        return Err(TransferError::LambdaNotContractive(lambda.norm()));
    }
    Ok(from_b(b, lambda))
}

/// Finite-`N` check of the two-sided `l^2` bounds between `a`, `b` and the
/// iterate sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormBoundsReport {
    /// `||a|| / (1 + |lambda|) <= ||b||`
    pub lower_ok: bool,
    /// `||b|| <= ||a|| / (1 - |lambda|)`
    pub upper_ok: bool,
    /// `((1-|l|)/(1+|l|)) ||a||^2 <= sigma_N^2 <= ((1+|l|)/(1-|l|)) ||a||^2`,
    /// each side allowed the boundary slack `|lambda|^2 |b_N|^2`.
    pub energy_ok: bool,
    /// Same two-sided energy bound with no slack.
    pub energy_strict_ok: bool,
    /// `||b|| / ||a||`
    pub norm_ratio: f64,
    /// `sigma_N^2 / ||a||^2`
    pub energy_ratio: f64,
    pub slack: f64,
}

pub fn norm_bounds_check(a: &CoefficientSequence, lambda: Complex64) -> Result<NormBoundsReport, TransferError> {
    let b = transfer(a, lambda)?;
    let l = lambda.norm();
    let na = a.l2_norm();
    let nb = b.rho;
    // relative rounding allowance; the bounds themselves are exact
    let eps = 1e-12;
    let lower_ok = na / (1.0 + l) <= nb * (1.0 + eps);
    let upper_ok = nb <= na / (1.0 - l) * (1.0 + eps);
    let s2 = b.sigma2;
    let a2 = a.sum2();
    let slack = l * l * b.last().norm_sqr();
    let lo = (1.0 - l) / (1.0 + l) * a2;
    let hi = (1.0 + l) / (1.0 - l) * a2;
    let energy_ok = lo <= (s2 + slack) * (1.0 + eps) && s2 <= (hi + slack) * (1.0 + eps);
    let energy_strict_ok = lo <= s2 * (1.0 + eps) && s2 <= hi * (1.0 + eps);
    Ok(NormBoundsReport {
        lower_ok,
        upper_ok,
        energy_ok,
        energy_strict_ok,
        norm_ratio: if na > 0.0 { nb / na } else { f64::NAN },
        energy_ratio: if a2 > 0.0 { s2 / a2 } else { f64::NAN },
        slack,
    })
}

/// Share of the largest and of the last term in `sum |a_n|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LindebergRatios {
    /// `|a_N|^2 / sum |a_n|^2`
    pub last_ratio: f64,
    /// `max_n |a_n|^2 / sum |a_n|^2`
    pub max_ratio: f64,
    /// A single term carries all the mass.
    pub degenerate: bool,
}

pub fn lindeberg_ratios(values: &[Complex64]) -> Result<LindebergRatios, TransferError> {
    let total = numeric::sum(values.iter().map(|a| a.norm_sqr()));
    if values.is_empty() {
        return Err(TransferError::Empty);
    }
    if total == 0.0 {
        return Err(TransferError::AllZero);
    }
    let last_ratio = values.last().unwrap().norm_sqr() / total;
    let max_ratio = values.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max) / total;
    Ok(LindebergRatios {
        last_ratio,
        max_ratio,
        degenerate: max_ratio >= 1.0 - 1e-12,
    })
}

/// Largest-term share of `b` against the bound
/// `((1+|l|)/(1-|l|))^2 * max_ratio(a)`, which follows from
/// `max|b_n| <= max|a_n| / (1-|l|)` and `||a|| <= (1+|l|) ||b||`.
pub fn lindeberg_transfer_bound(a: &CoefficientSequence, lambda: Complex64) -> Result<(f64, f64), TransferError> {
    let b = transfer(a, lambda)?;
    let ra = lindeberg_ratios(a.values())?.max_ratio;
    let rb = lindeberg_ratios(b.values())?.max_ratio;
    let l = lambda.norm();
    Ok((rb, ((1.0 + l) / (1.0 - l)).powi(2) * ra))
}

fn horner(coeffs: &[Complex64], z: Complex64) -> Complex64 {
    // sum_{n=1}^N c_n z^n
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| (acc + c) * z)
}

/// `max_z |A_N(z) - (1 - lambda z) B_N(z) - lambda b_N z^(N+1)|` with
/// `A_N`, `B_N` the generating polynomials of `a` and `b`.
pub fn generating_identity_check(
    a: &CoefficientSequence,
    lambda: Complex64,
    z_samples: &[Complex64],
) -> Result<f64, TransferError> {
    let b = transfer(a, lambda)?;
    let n = a.len() as i32;
    let bn = b.last();
    Ok(z_samples
        .iter()
        .map(|&z| {
            let lhs = horner(a.values(), z);
            let rhs = (1.0 - lambda * z) * horner(b.values(), z) + lambda * bn * z.powi(n + 1);
            (lhs - rhs).norm()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn real(xs: &[f64]) -> CoefficientSequence {
        CoefficientSequence::new(xs.iter().map(|&x| c(x, 0.0)).collect()).unwrap()
    }

    /// The convolution definition, as an oracle for the recurrence.
    fn convolution(a: &[Complex64], lambda: Complex64) -> Vec<Complex64> {
        (0..a.len())
            .map(|n| (0..=n).map(|k| lambda.powi((n - k) as i32) * a[k]).sum())
            .collect()
    }

    #[test]
    fn zero_lambda_collapses() {
        let b = transfer(&real(&[1.0, 1.0, 1.0]), c(0.0, 0.0)).unwrap();
        assert_eq!(b.values(), &[c(1.0, 0.0); 3]);
        assert_eq!(b.sigma2(), 3.0);
    }

    #[test]
    fn geometric_response() {
        let mut a = vec![0.0; 20];
        a[0] = 1.0;
        let b = transfer(&real(&a), c(0.5, 0.0)).unwrap();
        for (n, v) in b.values().iter().enumerate() {
            assert_eq!(*v, c(0.5f64.powi(n as i32), 0.0));
        }
    }

    #[test]
    fn two_term_example() {
        let b = transfer(&real(&[1.0, 1.0]), c(0.5, 0.0)).unwrap();
        assert_eq!(b.values(), &[c(1.0, 0.0), c(1.5, 0.0)]);
        assert!((b.sigma().powi(2) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_noncontractive_lambda() {
        assert!(matches!(
            transfer(&real(&[1.0]), c(0.6, 0.8)),
            Err(TransferError::LambdaNotContractive(_))
        ));
    }

    #[test]
    fn recurrence_matches_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in [1usize, 2, 10, 200, 1000] {
            let a: Vec<Complex64> = (0..len).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let lambda = Complex64::from_polar(0.9 * rng.random::<f64>(), 6.0 * rng.random::<f64>());
            let b = transfer(&CoefficientSequence::new(a.clone()).unwrap(), lambda).unwrap();
            for (x, y) in b.values().iter().zip(convolution(&a, lambda)) {
                assert!((x - y).norm() <= 1e-12 * (1.0 + y.norm()));
            }
        }
    }

    #[test]
    fn inversion_examples() {
        let b = transferred_from_b(vec![c(1.0, 0.0), c(0.5, 0.0), c(0.25, 0.0)], c(0.5, 0.0)).unwrap();
        assert_eq!(invert_transfer(&b).values(), &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let a = real(&[3.0, -1.0, 2.0]);
        assert_eq!(invert_transfer(&transfer(&a, c(0.0, 0.0)).unwrap()), a);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let len = rng.random_range(1..=200);
            let a: Vec<Complex64> = (0..len).map(|_| c(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)).collect();
            let lambda = Complex64::from_polar(0.9 * rng.random::<f64>(), 6.3 * rng.random::<f64>());
            let back = invert_transfer(&transfer(&CoefficientSequence::new(a.clone()).unwrap(), lambda).unwrap());
            for (x, y) in back.values().iter().zip(&a) {
                assert!((x - y).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn norm_bounds_examples() {
        let r = norm_bounds_check(&real(&[1.0, -2.0, 0.5]), c(0.0, 0.0)).unwrap();
        assert!(r.lower_ok && r.upper_ok && r.energy_ok && r.energy_strict_ok);
        assert!((r.norm_ratio - 1.0).abs() < 1e-15);

        let mut a = vec![0.0; 50];
        a[0] = 1.0;
        let r = norm_bounds_check(&real(&a), c(0.5, 0.0)).unwrap();
        // sum_{n<50} 0.25^n = (4/3)(1 - 0.25^50)
        assert!((r.norm_ratio.powi(2) - 4.0 / 3.0).abs() < 1e-14);
        assert!(r.norm_ratio.powi(2) >= 1.0 / 2.25 && r.norm_ratio.powi(2) <= 4.0);
        assert!(r.lower_ok && r.upper_ok && r.energy_ok);
    }

    #[test]
    fn norm_bounds_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let len = rng.random_range(1..=60);
            let a: Vec<Complex64> = (0..len).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let lambda = Complex64::from_polar(0.99 * rng.random::<f64>(), 6.3 * rng.random::<f64>());
            let r = norm_bounds_check(&CoefficientSequence::new(a).unwrap(), lambda).unwrap();
            assert!(r.lower_ok && r.upper_ok && r.energy_ok, "{r:?}");
            assert!(r.energy_strict_ok, "{r:?}");
        }
    }

    #[test]
    fn lindeberg_examples() {
        let r = lindeberg_ratios(&[c(1.0, 0.0); 100]).unwrap();
        assert!((r.last_ratio - 0.01).abs() < 1e-15);
        let mut imp = vec![c(0.0, 0.0); 10];
        imp[0] = c(1.0, 0.0);
        let r = lindeberg_ratios(&imp).unwrap();
        assert_eq!(r.max_ratio, 1.0);
        assert!(r.degenerate);
        let sq: Vec<_> = (1..=10).map(|n| c((n as f64).sqrt(), 0.0)).collect();
        let r = lindeberg_ratios(&sq).unwrap();
        assert!((r.last_ratio - 10.0 / 55.0).abs() < 1e-15);
        assert!(matches!(lindeberg_ratios(&[c(0.0, 0.0); 3]), Err(TransferError::AllZero)));
    }

    #[test]
    fn lindeberg_is_preserved_with_explicit_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let len = rng.random_range(1..=100);
            let a: Vec<Complex64> = (0..len).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let lambda = Complex64::from_polar(0.95 * rng.random::<f64>(), 6.3 * rng.random::<f64>());
            let (rb, bound) = lindeberg_transfer_bound(&CoefficientSequence::new(a).unwrap(), lambda).unwrap();
            assert!(rb <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn generating_identity() {
        let a = real(&[1.0, 1.0]);
        assert!(generating_identity_check(&a, c(0.5, 0.0), &[c(1.0, 0.0)]).unwrap() < 1e-15);
        let zs: Vec<Complex64> = (0..256).map(|j| Complex64::from_polar(1.0, j as f64 * 0.0245)).collect();
        assert_eq!(generating_identity_check(&real(&[1.0, 2.0, 3.0]), c(0.0, 0.0), &zs).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<Complex64> = (0..100).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let a = CoefficientSequence::new(a).unwrap();
        let res = generating_identity_check(&a, c(0.9, 0.0), &zs).unwrap();
        assert!(res <= 1e-10 * a.sum_abs(), "{res}");
    }

    #[test]
    fn family_strings() {
        for s in ["ones", "sqrt", "linear", "impulse", "geometric 0.5", "power 2", "random 42"] {
            let f: CoefficientFamily = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert_eq!("geometric:0.25".parse::<CoefficientFamily>().unwrap(), CoefficientFamily::Geometric(0.25));
        assert!("geometric".parse::<CoefficientFamily>().is_err());
        assert!("cubes".parse::<CoefficientFamily>().is_err());
    }

    #[test]
    fn random_family_is_reproducible() {
        let f = CoefficientFamily::Random(9);
        assert_eq!(f.generate(50).unwrap(), f.generate(50).unwrap());
        assert_eq!(f.generate(50).unwrap().values()[..10], f.generate(10).unwrap().values()[..]);
        assert_ne!(f.generate(5).unwrap(), CoefficientFamily::Random(10).generate(5).unwrap());
    }

    #[test]
    fn geometric_tail_bound() {
        let f = CoefficientFamily::Geometric(0.5);
        let exact: f64 = (61..400).map(|n| 0.25f64.powi(n)).sum();
        assert!((f.tail_mass_bound(60).unwrap() - exact).abs() <= 1e-15 * exact);
        assert_eq!(CoefficientFamily::Ones.tail_mass_bound(10), None);
    }

    #[test]
    fn csv_accepts_missing_header_and_rejects_gaps() {
        let a = CoefficientSequence::read_csv("1,1.0,0.0\n2, 1.0, 0.5\n".as_bytes()).unwrap();
        assert_eq!(a.values(), &[c(1.0, 0.0), c(1.0, 0.5)]);
        assert!(CoefficientSequence::read_csv("n,re_a,im_a\n1,1,0\n3,1,0\n".as_bytes()).is_err());
        assert!(CoefficientSequence::read_csv("n,re_a,im_a\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(values in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..40)) {
            let a = CoefficientSequence::new(values.iter().map(|&(r, i)| c(r, i)).collect()).unwrap();
            let mut buf = Vec::new();
            a.write_csv(&mut buf).unwrap();
            prop_assert_eq!(CoefficientSequence::read_csv(&buf[..]).unwrap(), a);
        }

        #[test]
        fn sigma_identity_holds_as_stored(
            values in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..80),
            r in 0.0f64..0.99, t in 0.0f64..6.3,
        ) {
            let a = CoefficientSequence::new(values.iter().map(|&(x, y)| c(x, y)).collect()).unwrap();
            let lambda = Complex64::from_polar(r, t);
            let b = transfer(&a, lambda).unwrap();
            let rho2: f64 = b.values().iter().map(|v| v.norm_sqr()).sum();
            let expect = (1.0 - r * r) * rho2 + r * r * b.last().norm_sqr();
            prop_assert!((b.sigma().powi(2) - expect).abs() <= 1e-12 * (1.0 + expect));
        }
    }
}
