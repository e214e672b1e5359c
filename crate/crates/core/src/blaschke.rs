//! Finite Blaschke products vanishing at the origin and their boundary maps.
//!
//! A product is stored as its list of zeros plus a unimodular rotation. Each
//! nonzero zero `a` contributes the factor `(|a|/a) (a - z) / (1 - conj(a) z)`,
//! which maps `0` to `|a|`; a zero at the origin contributes `z`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on `|a_j|`. Zeros closer to the circle make boundary
/// evaluation lose digits to cancellation in `1 - conj(a) z`.
pub const DEFAULT_ZERO_CAP: f64 = 0.95;

/// Tolerance on `| |z| - 1 |` for values treated as points of the circle.
pub const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlaschkeError {
    #[error("zero {zero} lies on or outside the unit circle")]
    ZeroOnBoundary { zero: Complex64 },
    #[error("zero {zero} has modulus {modulus} above the cap {cap}")]
    ZeroExceedsCap { zero: Complex64, modulus: f64, cap: f64 },
    #[error("no zero at the origin, so f(0) != 0")]
    MissingOriginZero,
    #[error("degree {degree} product is a rotation; need degree >= 2")]
    RotationInput { degree: usize },
    #[error("rotation factor {0} is not unimodular")]
    NonUnimodularRotation(Complex64),
    #[error("value {0} is not on the unit circle")]
    NotUnimodular(Complex64),
    #[error("non-finite input")]
    NonFinite,
}

/// A complex number of modulus one (up to [`UNIT_TOLERANCE`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct UnitComplex(Complex64);

impl UnitComplex {
    pub const ONE: UnitComplex = UnitComplex(Complex64 { re: 1.0, im: 0.0 });

    /// Checks `z` against the circle and snaps it onto it.
    pub fn new(z: Complex64) -> Result<Self, BlaschkeError> {
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(BlaschkeError::NonFinite);
        }
        // Inputs such as (0.6, 0.8) are off by an ulp or two; accept those.
        if (z.norm() - 1.0).abs() > 1e-9 {
            return Err(BlaschkeError::NotUnimodular(z));
        }
        Ok(Self::normalize(z))
    }

    /// `e^{i theta}`.
    pub fn from_angle(theta: f64) -> Self {
        UnitComplex(Complex64::from_polar(1.0, theta))
    }

    /// `e^{2 pi i t}`.
    pub fn from_turns(t: f64) -> Self {
        Self::from_angle(std::f64::consts::TAU * t)
    }

    /// Projects a nonzero complex number radially onto the circle.
    pub fn normalize(z: Complex64) -> Self {
        let r = z.norm();
        debug_assert!(r > 0.0 && r.is_finite());
        UnitComplex(z / r)
    }

    #[inline]
    pub fn value(self) -> Complex64 {
        self.0
    }

    /// Argument in `[0, 1)` turns.
    pub fn turns(self) -> f64 {
        let t = self.0.arg() / std::f64::consts::TAU;
        if t < 0.0 {
            t + 1.0
        } else {
            t
        }
    }

    pub fn conj(self) -> Self {
        UnitComplex(self.0.conj())
    }
}

impl std::ops::Mul for UnitComplex {
    type Output = UnitComplex;
    fn mul(self, rhs: UnitComplex) -> UnitComplex {
        UnitComplex::normalize(self.0 * rhs.0)
    }
}

impl From<UnitComplex> for Complex64 {
    fn from(u: UnitComplex) -> Complex64 {
        u.0
    }
}

impl From<UnitComplex> for [f64; 2] {
    fn from(u: UnitComplex) -> [f64; 2] {
        [u.0.re, u.0.im]
    }
}

impl TryFrom<[f64; 2]> for UnitComplex {
    type Error = BlaschkeError;
    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        UnitComplex::new(Complex64::new(v[0], v[1]))
    }
}

impl fmt::Display for UnitComplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `lambda = conj(f'(0))` and `mu = conj(f''(0)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchwarzPickData {
    pub lambda: Complex64,
    pub mu: Complex64,
}

/// Wire form: `{"zeros": [[re, im], ...], "rotation": [re, im]}`.
#[derive(Serialize, Deserialize)]
struct BlaschkeRepr {
    zeros: Vec<[f64; 2]>,
    rotation: [f64; 2],
}

/// A finite Blaschke product with `f(0) = 0` and degree at least two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlaschkeRepr", into = "BlaschkeRepr")]
pub struct BlaschkeProduct {
    zeros: Vec<Complex64>,
    rotation: Complex64,
}

impl BlaschkeProduct {
    /// Builds a product with the default zero cap.
    pub fn new(zeros: Vec<Complex64>, rotation: Complex64) -> Result<Self, BlaschkeError> {
        Self::with_cap(zeros, rotation, DEFAULT_ZERO_CAP)
    }

    pub fn with_cap(
        zeros: Vec<Complex64>,
        rotation: Complex64,
        cap: f64,
    ) -> Result<Self, BlaschkeError> {
        if !(rotation.re.is_finite() && rotation.im.is_finite()) {
            return Err(BlaschkeError::NonFinite);
        }
        if (rotation.norm() - 1.0).abs() > 1e-9 {
            return Err(BlaschkeError::NonUnimodularRotation(rotation));
        }
        for &zero in &zeros {
            if !(zero.re.is_finite() && zero.im.is_finite()) {
                return Err(BlaschkeError::NonFinite);
            }
            let modulus = zero.norm();
            if modulus >= 1.0 {
                return Err(BlaschkeError::ZeroOnBoundary { zero });
            }
            if modulus > cap {
                return Err(BlaschkeError::ZeroExceedsCap { zero, modulus, cap });
            }
        }
        if zeros.len() < 2 {
            return Err(BlaschkeError::RotationInput { degree: zeros.len() });
        }
        if !zeros.iter().any(|z| *z == Complex64::new(0.0, 0.0)) {
            return Err(BlaschkeError::MissingOriginZero);
        }
        Ok(BlaschkeProduct {
            zeros,
            rotation: rotation / rotation.norm(),
        })
    }

    /// `z^d`.
    pub fn power(d: usize) -> Result<Self, BlaschkeError> {
        Self::new(vec![Complex64::new(0.0, 0.0); d], Complex64::new(1.0, 0.0))
    }

    /// `z * b_a(z)`, the simplest product that is not a monomial.
    pub fn z_times_factor(a: Complex64) -> Result<Self, BlaschkeError> {
        Self::new(vec![Complex64::new(0.0, 0.0), a], Complex64::new(1.0, 0.0))
    }

    pub fn zeros(&self) -> &[Complex64] {
        &self.zeros
    }

    pub fn rotation(&self) -> Complex64 {
        self.rotation
    }

    pub fn degree(&self) -> usize {
        self.zeros.len()
    }

    /// Evaluates `f(z)` for `|z| <= 1`, with no renormalization.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        debug_assert!(z.norm() <= 1.0 + 1e-9, "eval outside the closed disc: {z}");
        let mut acc = self.rotation;
        for &a in &self.zeros {
            acc *= factor(a, z);
        }
        acc
    }

    /// Boundary map: `f(omega)` snapped back onto the circle.
    #[inline]
    pub fn eval_boundary(&self, omega: UnitComplex) -> UnitComplex {
        UnitComplex::normalize(self.eval(omega.value()))
    }

    /// Taylor coefficients of `f` at the origin up to order two, obtained by
    /// multiplying the truncated series of each factor.
    pub fn taylor2(&self) -> [Complex64; 3] {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let mut series = [self.rotation, zero, zero];
        for &a in &self.zeros {
            let f = if a == zero {
                [zero, one, zero]
            } else {
                // (|a|/a)(a - z)(1 + conj(a) z + conj(a)^2 z^2 + ...)
                let r = a.norm();
                let u = r / a;
                let s = r * r - 1.0;
                [Complex64::new(r, 0.0), u * s, u * a.conj() * s]
            };
            series = [
                series[0] * f[0],
                series[0] * f[1] + series[1] * f[0],
                series[0] * f[2] + series[1] * f[1] + series[2] * f[0],
            ];
        }
        series
    }

    /// `(lambda, mu)` from the closed-form Taylor coefficients.
    pub fn schwarz_pick_data(&self) -> SchwarzPickData {
        let [_, c1, c2] = self.taylor2();
        SchwarzPickData {
            lambda: c1.conj(),
            mu: c2.conj(),
        }
    }

    /// `f∘n(omega)`, renormalized after every step.
    pub fn iterate_boundary(&self, omega: UnitComplex, n: usize) -> UnitComplex {
        (0..n).fold(omega, |w, _| self.eval_boundary(w))
    }

    /// `[f∘1(omega), ..., f∘len(omega)]` in one sequential pass.
    pub fn orbit_row(&self, omega: UnitComplex, len: usize) -> Vec<UnitComplex> {
        let mut out = Vec::with_capacity(len);
        self.orbit_into(omega, len, &mut out);
        out
    }

    /// Same as [`orbit_row`](Self::orbit_row) but reuses `out`.
    pub fn orbit_into(&self, omega: UnitComplex, len: usize, out: &mut Vec<UnitComplex>) {
        out.clear();
        let mut w = omega;
        for _ in 0..len {
            w = self.eval_boundary(w);
            out.push(w);
        }
    }
}

#[inline]
fn factor(a: Complex64, z: Complex64) -> Complex64 {
    if a.re == 0.0 && a.im == 0.0 {
        z
    } else {
        (a.norm() / a) * (a - z) / (1.0 - a.conj() * z)
    }
}

impl TryFrom<BlaschkeRepr> for BlaschkeProduct {
    type Error = BlaschkeError;
    fn try_from(r: BlaschkeRepr) -> Result<Self, Self::Error> {
        let zeros = r.zeros.iter().map(|z| Complex64::new(z[0], z[1])).collect();
        let rotation = Complex64::new(r.rotation[0], r.rotation[1]);
        // Keep the exact stored rotation so serialization round-trips bit for bit.
        let mut f = BlaschkeProduct::new(zeros, rotation)?;
        f.rotation = rotation;
        Ok(f)
    }
}

impl From<BlaschkeProduct> for BlaschkeRepr {
    fn from(f: BlaschkeProduct) -> Self {
        BlaschkeRepr {
            zeros: f.zeros.iter().map(|z| [z.re, z.im]).collect(),
            rotation: [f.rotation.re, f.rotation.im],
        }
    }
}

impl fmt::Display for BlaschkeProduct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B(rotation={}, zeros=[", self.rotation)?;
        for (i, z) in self.zeros.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{z}")?;
        }
        write!(f, "])")
    }
}
