//! Trapezoidal quadrature on the circle and projections onto the
//! sigma-algebra generated by an inner function.
//!
//! For an inner function `eta` with `eta(0) = 0`, the powers `eta^k`, `k` in
//! `Z`, are an orthonormal basis of the `eta`-measurable part of `L^2`, so
//! conditional expectation given `eta` is `h -> sum_k <h, eta^k> eta^k`. On an
//! `M`-node grid this is exact up to aliasing as long as `M` comfortably
//! exceeds the frequencies involved; see [`nyquist_ok`].

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blaschke::{BlaschkeProduct, UnitComplex};
use crate::numeric;

pub const MIN_NODES: usize = 1 << 10;
pub const DEFAULT_NODES: usize = 1 << 14;
pub const DEFAULT_TRUNCATION: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonicError {
    #[error("grid size {0} must be a power of two and at least {MIN_NODES}")]
    BadGridSize(usize),
    #[error("grid functions have {left} and {right} samples")]
    GridMismatch { left: usize, right: usize },
    #[error("frequency content {needed} exceeds the budget of {nodes} nodes")]
    NyquistViolation { needed: u64, nodes: usize },
    #[error("conditioning function is not unimodular on the grid (max deviation {0:e})")]
    NotInner(f64),
    #[error("truncation order must be at least 1")]
    ZeroTruncation,
    #[error("iterate index must be at least 1")]
    ZeroIterate,
}

/// `M` equispaced nodes `e^{2 pi i j / M}`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    nodes: Vec<UnitComplex>,
}

impl QuadratureGrid {
    pub fn new(m: usize) -> Result<Self, HarmonicError> {
        if !m.is_power_of_two() || m < MIN_NODES {
            return Err(HarmonicError::BadGridSize(m));
        }
        let nodes = (0..m)
            .map(|j| UnitComplex::from_turns(j as f64 / m as f64))
            .collect();
        Ok(QuadratureGrid { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[UnitComplex] {
        &self.nodes
    }

    /// Samples `g` at every node. `bandwidth` is the frequency bound used by
    /// the aliasing checks, if one is known.
    pub fn sample(
        &self,
        bandwidth: Option<u64>,
        g: impl Fn(UnitComplex) -> Complex64,
    ) -> GridFunction {
        GridFunction {
            values: self.nodes.iter().map(|&w| g(w)).collect(),
            bandwidth,
        }
    }

    /// The monomial `z^k`.
    pub fn monomial(&self, k: i32) -> GridFunction {
        self.sample(Some(k.unsigned_abs() as u64), |w| w.value().powi(k))
    }

    /// `f∘n` on the grid; bandwidth `degree^n`.
    pub fn iterate(&self, f: &BlaschkeProduct, n: usize) -> GridFunction {
        let bw = (f.degree() as u64).checked_pow(n as u32);
        self.sample(bw, |w| f.iterate_boundary(w, n).value())
    }

    /// Largest `n` with `4 K degree^(n+1) <= M`, i.e. the deepest iterate
    /// whose conditional identities can be checked at truncation `K`.
    pub fn n_max(&self, f: &BlaschkeProduct, truncation: usize) -> usize {
        let mut n = 0;
        while nyquist_ok(truncation as u64, (f.degree() as u64).checked_pow(n as u32 + 2), self.len()) {
            n += 1;
        }
        n
    }
}

/// `4 K bandwidth <= M`. Unknown or overflowing bandwidth fails.
pub fn nyquist_ok(truncation: u64, bandwidth: Option<u64>, nodes: usize) -> bool {
    match bandwidth.and_then(|b| b.checked_mul(4 * truncation.max(1))) {
        Some(need) => need <= nodes as u64,
        None => false,
    }
}

/// Values of a function at the nodes of a [`QuadratureGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<Complex64>,
    bandwidth: Option<u64>,
}

impl GridFunction {
    pub fn from_values(values: Vec<Complex64>, bandwidth: Option<u64>) -> Self {
        GridFunction { values, bandwidth }
    }

    pub fn constant(grid: &QuadratureGrid, c: Complex64) -> Self {
        GridFunction {
            values: vec![c; grid.len()],
            bandwidth: Some(0),
        }
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

    pub fn bandwidth(&self) -> Option<u64> {
        self.bandwidth
    }

    /// Pointwise map; bandwidth is forgotten.
    pub fn map(&self, g: impl Fn(Complex64) -> Complex64) -> GridFunction {
        GridFunction {
            values: self.values.iter().map(|&z| g(z)).collect(),
            bandwidth: None,
        }
    }

    /// Pointwise combination with another function on the same grid.
    pub fn zip_with(
        &self,
        other: &GridFunction,
        g: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<GridFunction, HarmonicError> {
        check_same_len(self, other)?;
        Ok(GridFunction {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| g(a, b)).collect(),
            bandwidth: None,
        })
    }

    /// Integer power, negative powers taken as conjugates (valid on the circle).
    pub fn unimodular_pow(&self, k: i32) -> GridFunction {
        GridFunction {
            values: self
                .values
                .iter()
                .map(|&z| if k >= 0 { z.powi(k) } else { z.conj().powi(-k) })
                .collect(),
            bandwidth: self.bandwidth.and_then(|b| b.checked_mul(k.unsigned_abs() as u64)),
        }
    }

    /// Discrete `L^2` norm, `sqrt(mean |g|^2)`.
    pub fn l2_norm(&self) -> f64 {
        (numeric::sum(self.values.iter().map(|z| z.norm_sqr())) / self.len() as f64).sqrt()
    }

    /// Quadrature mean.
    pub fn mean(&self) -> Complex64 {
        numeric::complex_sum(self.values.iter().copied()) / self.len() as f64
    }

    fn max_unimodular_deviation(&self) -> f64 {
        self.values.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn check_same_len(a: &GridFunction, b: &GridFunction) -> Result<(), HarmonicError> {
    if a.len() != b.len() {
        return Err(HarmonicError::GridMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// `(1/M) sum_j g(w_j) conj(h(w_j))`.
pub fn inner_product(
    g: &GridFunction,
    h: &GridFunction,
    grid: &QuadratureGrid,
) -> Result<Complex64, HarmonicError> {
    check_same_len(g, h)?;
    if g.len() != grid.len() {
        return Err(HarmonicError::GridMismatch {
            left: g.len(),
            right: grid.len(),
        });
    }
    let s = numeric::complex_sum(g.values.iter().zip(&h.values).map(|(&a, &b)| a * b.conj()));
    Ok(s / grid.len() as f64)
}

/// All Fourier coefficients `<g, z^k>` via FFT. Index `k` holds frequency
/// `k` for `k < M/2` and frequency `k - M` above.
pub fn fourier_coefficients(g: &GridFunction) -> Vec<Complex64> {
    let m = g.len();
    let mut buf = g.values.clone();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    for v in &mut buf {
        *v /= m as f64;
    }
    buf
}

/// `[<z^j, f^k> : k = 1..=kmax]` where `f^k` is the k-th power.
pub fn power_inner_products(
    f: &BlaschkeProduct,
    j: i32,
    kmax: usize,
    grid: &QuadratureGrid,
) -> Result<Vec<Complex64>, HarmonicError> {
    let needed = (kmax as u64).saturating_mul(f.degree() as u64).max(j.unsigned_abs() as u64);
    if needed.saturating_mul(4) > grid.len() as u64 {
        return Err(HarmonicError::NyquistViolation {
            needed,
            nodes: grid.len(),
        });
    }
    let zj = grid.monomial(j);
    let fv = grid.iterate(f, 1);
    (1..=kmax)
        .map(|k| inner_product(&zj, &fv.unimodular_pow(k as i32), grid))
        .collect()
}

/// Output of [`conditional_expectation`].
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    truncation: usize,
    coefficients: Vec<Complex64>,
    pub projected: GridFunction,
    /// `sqrt(|c_K|^2 + |c_-K|^2)`: mass at the truncation edge.
    pub tail: f64,
}

impl ProjectionResult {
    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// `<h, eta^k>` for `|k| <= K`, zero outside.
    pub fn coefficient(&self, k: i64) -> Complex64 {
        let kk = self.truncation as i64;
        if k.abs() > kk {
            Complex64::new(0.0, 0.0)
        } else {
            self.coefficients[(k + kk) as usize]
        }
    }

    /// `(k, <h, eta^k>)` for `k = -K..=K`.
    pub fn coefficients(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        let kk = self.truncation as i64;
        self.coefficients.iter().enumerate().map(move |(i, &c)| (i as i64 - kk, c))
    }

    pub fn coefficient_energy(&self) -> f64 {
        numeric::sum(self.coefficients.iter().map(|c| c.norm_sqr()))
    }
}

/// `E[h | eta] ~ sum_{|k| <= K} <h, eta^k> eta^k`.
pub fn conditional_expectation(
    h: &GridFunction,
    eta: &GridFunction,
    truncation: usize,
    grid: &QuadratureGrid,
) -> Result<ProjectionResult, HarmonicError> {
    if truncation == 0 {
        return Err(HarmonicError::ZeroTruncation);
    }
    check_same_len(h, eta)?;
    let dev = eta.max_unimodular_deviation();
    if dev > 1e-9 {
        return Err(HarmonicError::NotInner(dev));
    }
    if let Some(bw) = eta.bandwidth {
        if !nyquist_ok(truncation as u64, Some(bw), grid.len()) {
            return Err(HarmonicError::NyquistViolation {
                needed: bw.saturating_mul(4 * truncation as u64),
                nodes: grid.len(),
            });
        }
    }

    let m = grid.len();
    let kk = truncation;
    // powers[k] = eta^k for k = 0..=K; negative powers are conjugates.
    let mut powers: Vec<Vec<Complex64>> = Vec::with_capacity(kk + 1);
    powers.push(vec![Complex64::new(1.0, 0.0); m]);
    for k in 1..=kk {
        let next = powers[k - 1].iter().zip(&eta.values).map(|(&p, &e)| p * e).collect();
        powers.push(next);
    }

    let mut coefficients = vec![Complex64::new(0.0, 0.0); 2 * kk + 1];
    for k in 0..=kk {
        let pos = numeric::complex_sum(h.values.iter().zip(&powers[k]).map(|(&a, &p)| a * p.conj()));
        coefficients[kk + k] = pos / m as f64;
        if k > 0 {
            let neg = numeric::complex_sum(h.values.iter().zip(&powers[k]).map(|(&a, &p)| a * p));
            coefficients[kk - k] = neg / m as f64;
        }
    }

    let mut projected = vec![Complex64::new(0.0, 0.0); m];
    for (j, out) in projected.iter_mut().enumerate() {
        let mut acc = coefficients[kk];
        for k in 1..=kk {
            let p = powers[k][j];
            acc += coefficients[kk + k] * p + coefficients[kk - k] * p.conj();
        }
        *out = acc;
    }

    let tail = (coefficients[0].norm_sqr() + coefficients[2 * kk].norm_sqr()).sqrt();
    Ok(ProjectionResult {
        truncation,
        coefficients,
        projected: GridFunction::from_values(projected, None),
        tail,
    })
}

/// Gram matrix `<eta^j, eta^k>` for `|j|, |k| <= K`.
pub fn gram_matrix(
    eta: &GridFunction,
    truncation: usize,
    grid: &QuadratureGrid,
) -> Result<Vec<Vec<Complex64>>, HarmonicError> {
    let kk = truncation as i32;
    let powers: Vec<GridFunction> = (-kk..=kk).map(|k| eta.unimodular_pow(k)).collect();
    powers
        .iter()
        .map(|a| powers.iter().map(|b| inner_product(a, b, grid)).collect())
        .collect()
}

/// `L^2` residuals of the conditional identities for
/// `Y_n = f∘n - lambda f∘(n+1)` given `F_{n+1} = sigma(f∘(n+1))`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MartingaleResiduals {
    /// `E[Y_n | F_{n+1}]`, which should vanish.
    pub mean_zero: f64,
    /// `E[|Y_n|^2 | F_{n+1}] - (1 - |lambda|^2)`.
    pub abs_square: f64,
    /// `E[Y_n^2 | F_{n+1}] - mu f∘(n+1)`.
    pub square: f64,
    /// `E[(Re alpha Y_n)^2 | F_{n+1}] - (1-|lambda|^2)|alpha|^2/2 - Re(alpha^2 mu f∘(n+1))/2`.
    pub real_part: f64,
    /// Largest truncation-edge coefficient magnitude among the projections.
    pub tail: f64,
}

impl MartingaleResiduals {
    pub fn max_identity(&self) -> f64 {
        self.abs_square.max(self.square).max(self.real_part)
    }

    pub fn max_all(&self) -> f64 {
        self.max_identity().max(self.mean_zero)
    }

    /// Componentwise maximum.
    pub fn worst(&self, other: &Self) -> Self {
        MartingaleResiduals {
            mean_zero: self.mean_zero.max(other.mean_zero),
            abs_square: self.abs_square.max(other.abs_square),
            square: self.square.max(other.square),
            real_part: self.real_part.max(other.real_part),
            tail: self.tail.max(other.tail),
        }
    }
}

fn l2_distance(a: &GridFunction, b: &GridFunction) -> f64 {
    let m = a.len() as f64;
    (numeric::sum(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).norm_sqr())) / m).sqrt()
}

pub fn verify_martingale_identities(
    f: &BlaschkeProduct,
    n: usize,
    alpha: Complex64,
    grid: &QuadratureGrid,
    truncation: usize,
) -> Result<MartingaleResiduals, HarmonicError> {
    if n == 0 {
        return Err(HarmonicError::ZeroIterate);
    }
    let sp = f.schwarz_pick_data();
    let (lambda, mu) = (sp.lambda, sp.mu);

    let fn_ = grid.iterate(f, n);
    // one more application of f, carrying the bandwidth along
    let eta = GridFunction {
        values: fn_.values.iter().map(|&z| f.eval_boundary(UnitComplex::normalize(z)).value()).collect(),
        bandwidth: fn_.bandwidth.and_then(|b| b.checked_mul(f.degree() as u64)),
    };
    let y = fn_.zip_with(&eta, |a, b| a - lambda * b)?;

    let project = |h: &GridFunction| conditional_expectation(h, &eta, truncation, grid);

    let p_mean = project(&y)?;
    let zero = GridFunction::constant(grid, Complex64::new(0.0, 0.0));
    let mean_zero = l2_distance(&p_mean.projected, &zero);

    let p_abs = project(&y.map(|z| Complex64::new(z.norm_sqr(), 0.0)))?;
    let target_abs = GridFunction::constant(grid, Complex64::new(1.0 - lambda.norm_sqr(), 0.0));
    let abs_square = l2_distance(&p_abs.projected, &target_abs);

    let p_sq = project(&y.map(|z| z * z))?;
    let target_sq = eta.map(|e| mu * e);
    let square = l2_distance(&p_sq.projected, &target_sq);

    let p_re = project(&y.map(|z| Complex64::new((alpha * z).re.powi(2), 0.0)))?;
    let base = 0.5 * (1.0 - lambda.norm_sqr()) * alpha.norm_sqr();
    let target_re = eta.map(|e| Complex64::new(base + 0.5 * (alpha * alpha * mu * e).re, 0.0));
    let real_part = l2_distance(&p_re.projected, &target_re);

    let tail = [p_mean.tail, p_abs.tail, p_sq.tail, p_re.tail]
        .into_iter()
        .fold(0.0, f64::max);
    Ok(MartingaleResiduals {
        mean_zero,
        abs_square,
        square,
        real_part,
        tail,
    })
}
