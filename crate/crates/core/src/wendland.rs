//! Wendland radial profiles as exact piecewise polynomials.
//!
//! A profile is a polynomial `p(r) = Σ c_j r^j` on `[0, 1]` that vanishes for
//! `r > 1`. The Wendland profile of smoothness index `k` in dimension `d` is
//! built from the truncated power `(1 - r)_+^ℓ`, `ℓ = ⌊d/2⌋ + k + 1`, by `k`
//! applications of the integral operator `Iφ(r) = ∫_r^1 t φ(t) dt`.
//!
//! Coefficients are kept as exact rationals while the profile is built and
//! mirrored into `f64` for evaluation. Profiles are never normalised.

use num::{BigInt, BigRational, One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Polynomial on `[0, 1]`, identically zero for `r > 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePoly1D {
    coeffs: Vec<BigRational>,
    float: Vec<f64>,
    /// Float coefficients of `p(1 − s)` in powers of `s`.
    shifted: Vec<f64>,
}

impl PiecewisePoly1D {
    /// Builds a profile from exact coefficients `c_0..c_m`. Trailing zeros are trimmed.
    pub fn new(mut coeffs: Vec<BigRational>) -> Self {
        while coeffs.last().is_some_and(Zero::is_zero) {
            coeffs.pop();
        }
        let to_f64 = |c: &BigRational| c.to_f64().unwrap_or(f64::NAN);
        let float = coeffs.iter().map(to_f64).collect();
        let shifted = (0..coeffs.len())
            .map(|j| {
                let mut b = BigRational::zero();
                for (i, c) in coeffs.iter().enumerate().skip(j) {
                    b += c * BigRational::from_integer(binomial(i, j));
                }
                if j % 2 == 1 {
                    b = -b;
                }
                to_f64(&b)
            })
            .collect();
        Self {
            coeffs,
            float,
            shifted,
        }
    }

    pub fn zero() -> Self {
        Self::new(Vec::new())
    }

    /// Convenience constructor from integer ratios `(numerator, denominator)`.
    pub fn from_ratios(ratios: &[(i64, i64)]) -> Self {
        Self::new(
            ratios
                .iter()
                .map(|&(n, d)| BigRational::new(BigInt::from(n), BigInt::from(d)))
                .collect(),
        )
    }

    pub fn coeffs(&self) -> &[BigRational] {
        &self.coeffs
    }

    pub fn float_coeffs(&self) -> &[f64] {
        &self.float
    }

    /// Degree of the polynomial piece; `None` for the zero profile.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Evaluates the profile, rejecting negative or NaN radii.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if r.is_nan() || r < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "profile radius must be nonnegative, got {r}"
            )));
        }
        Ok(self.eval_unchecked(r))
    }

    /// Horner evaluation for a radius already known to be nonnegative.
    /// Radii past one half are evaluated in `1 − r` to avoid cancellation
    /// near the edge of the support.
    #[inline]
    pub fn eval_unchecked(&self, r: f64) -> f64 {
        if r > 1.0 {
            return 0.0;
        }
        if r > 0.5 {
            let s = 1.0 - r;
            return self.shifted.iter().rev().fold(0.0, |acc, &c| acc * s + c);
        }
        self.float.iter().rev().fold(0.0, |acc, &c| acc * r + c)
    }

    /// Exact value at a rational radius in `[0, 1]`.
    pub fn eval_exact(&self, r: &BigRational) -> BigRational {
        self.coeffs
            .iter()
            .rev()
            .fold(BigRational::zero(), |acc, c| acc * r + c)
    }
}

fn binomial(n: usize, k: usize) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `(1 - r)_+^ℓ` expanded binomially on `[0, 1]`.
pub fn truncated_power(ell: usize) -> PiecewisePoly1D {
    let coeffs = (0..=ell)
        .map(|j| {
            let c = binomial(ell, j);
            let c = if j % 2 == 1 { -c } else { c };
            BigRational::from_integer(c)
        })
        .collect();
    PiecewisePoly1D::new(coeffs)
}

/// Applies `Iφ(r) = ∫_r^1 t φ(t) dt`.
///
/// For `p = Σ c_j t^j` the result is `Σ c_j (1 - r^{j+2}) / (j + 2)`, so the
/// degree grows by two and the result vanishes at `r = 1`.
#[allow(non_snake_case)]
pub fn apply_I(p: &PiecewisePoly1D) -> PiecewisePoly1D {
    if p.is_zero() {
        return PiecewisePoly1D::zero();
    }
    let m = p.coeffs.len() - 1;
    let mut out = vec![BigRational::zero(); m + 3];
    for (j, c) in p.coeffs.iter().enumerate() {
        let w = c / BigRational::from_integer(BigInt::from(j + 2));
        out[0] += &w;
        out[j + 2] -= w;
    }
    PiecewisePoly1D::new(out)
}

/// Exponent `⌊d/2 + k + 1⌋` of the truncated power underlying the profile.
pub fn truncated_power_exponent(dim: usize, k: usize) -> usize {
    dim / 2 + k + 1
}

/// Wendland profile `I^k (1 - r)_+^{⌊d/2 + k + 1⌋}` (unnormalised).
pub fn wendland_rho(dim: usize, k: usize) -> Result<PiecewisePoly1D> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "Wendland dimension must be at least 1".into(),
        ));
    }
    let mut p = truncated_power(truncated_power_exponent(dim, k));
    for _ in 0..k {
        p = apply_I(&p);
    }
    Ok(p)
}

/// Evaluates a profile at `r`; `0` outside the support.
pub fn eval_profile(p: &PiecewisePoly1D, r: f64) -> Result<f64> {
    p.eval(r)
}
