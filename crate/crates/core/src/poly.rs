//! Real-coefficient polynomials and rational transfer functions.
//!
//! Coefficients are stored in ascending powers of `s`: `coeffs[i]` multiplies
//! `s^i`. Constructors trim trailing coefficients whose magnitude falls below
//! `TRIM_RELATIVE * max|coeff|`, so the last stored coefficient is the leading
//! one. The zero polynomial is stored as `[0.0]`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{CompanionFilter, StateSpaceBlock};

/// Relative threshold below which trailing coefficients are treated as dust.
pub const TRIM_RELATIVE: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("denominator is the zero polynomial")]
    ZeroDenominator,
    #[error("transfer function is improper: numerator degree {num} exceeds denominator degree {den}")]
    Improper { num: usize, den: usize },
    #[error("polynomial coefficient {index} is not finite")]
    NonFinite { index: usize },
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial from ascending-power coefficients.
    pub fn new(coeffs: impl Into<Vec<f64>>) -> Self {
        let mut coeffs = coeffs.into();
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        let mut p = Self { coeffs };
        p.trim();
        p
    }

    /// Builds a polynomial from descending-power coefficients, the order in
    /// which polynomials are usually written by hand.
    pub fn from_descending(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().rev().copied().collect::<Vec<_>>())
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    /// `s^k`.
    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0;
        Self { coeffs }
    }

    /// Monic polynomial with the given real roots.
    pub fn from_real_roots(roots: &[f64]) -> Self {
        roots.iter().fold(Self::one(), |acc, &r| acc.mul(&Self::new(vec![-r, 1.0])))
    }

    /// Monic polynomial with the given roots; complex roots must come in
    /// conjugate pairs (only roots with nonnegative imaginary part are read
    /// for pairs, so pass each pair once as `re + j·|im|`).
    pub fn from_roots(roots: &[Complex64]) -> Self {
        roots.iter().fold(Self::one(), |acc, r| {
            if r.im == 0.0 {
                acc.mul(&Self::new(vec![-r.re, 1.0]))
            } else {
                acc.mul(&Self::new(vec![r.norm_sqr(), -2.0 * r.re, 1.0]))
            }
        })
    }

    /// `(s + a)^k`.
    pub fn binomial_power(a: f64, k: usize) -> Self {
        (0..k).fold(Self::one(), |acc, _| acc.mul(&Self::new(vec![a, 1.0])))
    }

    fn trim(&mut self) {
        let scale = self.max_abs_coeff();
        let threshold = TRIM_RELATIVE * scale;
        while self.coeffs.len() > 1 && self.coeffs.last().map_or(false, |c| c.abs() <= threshold) {
            self.coeffs.pop();
        }
        if self.coeffs.len() == 1 && self.coeffs[0].abs() <= threshold && scale == 0.0 {
            self.coeffs[0] = 0.0;
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficients in descending powers.
    pub fn descending(&self) -> Vec<f64> {
        self.coeffs.iter().rev().copied().collect()
    }

    /// Coefficient of `s^i`, zero beyond the degree.
    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().expect("polynomial is never empty")
    }

    pub fn is_monic(&self) -> bool {
        self.leading() == 1.0
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Divides through by the leading coefficient.
    pub fn to_monic(&self) -> Self {
        if self.is_zero() {
            return self.clone();
        }
        self.scale(1.0 / self.leading())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::new(self.coeffs.iter().map(|a| a * c).collect::<Vec<_>>())
    }

    /// Horner evaluation at a real point.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero();
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| c * i as f64)
                .collect::<Vec<_>>(),
        )
    }

    /// `s^k · self`.
    pub fn shift(&self, k: usize) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let mut coeffs = vec![0.0; k];
        coeffs.extend_from_slice(&self.coeffs);
        Self { coeffs }
    }

    pub fn mul(&self, other: &Self) -> Self {
        poly_mul(self, other)
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial({:?})", self.coeffs)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, &c) in self.coeffs.iter().enumerate().rev() {
            if c == 0.0 {
                continue;
            }
            let sign = if c < 0.0 { "-" } else { "+" };
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let mag = c.abs();
            match i {
                0 => write!(f, "{mag}")?,
                _ if mag == 1.0 => {}
                _ => write!(f, "{mag}")?,
            }
            match i {
                0 => {}
                1 => write!(f, "s")?,
                _ => write!(f, "s^{i}")?,
            }
            first = false;
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Polynomial {
    type Error = PolyError;

    /// Ascending-power coefficients; used by serde.
    fn try_from(coeffs: Vec<f64>) -> Result<Self, Self::Error> {
        if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(PolyError::NonFinite { index });
        }
        Ok(Self::new(coeffs))
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

/// Coefficient convolution.
pub fn poly_mul(a: &Polynomial, b: &Polynomial) -> Polynomial {
    if a.is_zero() || b.is_zero() {
        return Polynomial::zero();
    }
    let mut out = vec![0.0; a.coeffs.len() + b.coeffs.len() - 1];
    for (i, &ai) in a.coeffs.iter().enumerate() {
        for (j, &bj) in b.coeffs.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    Polynomial::new(out)
}

/// `a + c·b`.
pub fn poly_add_scaled(a: &Polynomial, b: &Polynomial, c: f64) -> Polynomial {
    let len = a.coeffs.len().max(b.coeffs.len());
    let out: Vec<f64> = (0..len).map(|i| a.coeff(i) + c * b.coeff(i)).collect();
    Polynomial::new(out)
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        poly_add_scaled(self, rhs, 1.0)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        poly_add_scaled(self, rhs, -1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        poly_mul(self, rhs)
    }
}

impl Mul<f64> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Outcome of the Routh–Hurwitz tabular test.
#[derive(Debug, Clone, PartialEq)]
pub struct RouthReport {
    /// All roots strictly in the open left half-plane.
    pub hurwitz: bool,
    /// Degree-0 input: there are no roots, so the verdict is vacuously true.
    pub vacuous: bool,
    /// Sign changes in the first column, i.e. the number of open right
    /// half-plane roots.
    pub sign_changes: usize,
    /// A whole row vanished and was rebuilt from the auxiliary polynomial
    /// derivative (roots symmetric about the origin, typically on the
    /// imaginary axis).
    pub zero_row: bool,
    /// A zero pivot was replaced by a small positive epsilon.
    pub epsilon_substituted: bool,
    pub first_column: Vec<f64>,
}

/// Routh–Hurwitz test with epsilon substitution for zero pivots and the
/// auxiliary-polynomial rule for vanishing rows.
pub fn routh_hurwitz(p: &Polynomial) -> RouthReport {
    let p = p.to_monic();
    let n = p.degree();
    if n == 0 {
        log::warn!("Hurwitz test on a degree-0 polynomial is vacuous");
        return RouthReport {
            hurwitz: true,
            vacuous: true,
            sign_changes: 0,
            zero_row: false,
            epsilon_substituted: false,
            first_column: vec![p.coeff(0)],
        };
    }

    let desc = p.descending();
    let width = n / 2 + 1;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    rows.push((0..width).map(|j| desc.get(2 * j).copied().unwrap_or(0.0)).collect());
    rows.push((0..width).map(|j| desc.get(2 * j + 1).copied().unwrap_or(0.0)).collect());

    let scale = p.max_abs_coeff().max(1.0);
    let tol = 1e-12 * scale;
    let epsilon = 1e-9 * scale;
    let mut zero_row = false;
    let mut epsilon_substituted = false;

    // Row `k` corresponds to power s^(n-k).
    for k in 1..=n {
        if rows[k].iter().all(|v| v.abs() <= tol) {
            // Auxiliary polynomial from the row above, order n-k+1, even/odd
            // powers stepping by two; replace this row with its derivative.
            zero_row = true;
            let order = n - k + 1;
            let above = rows[k - 1].clone();
            rows[k] = (0..width)
                .map(|j| {
                    let power = order as i64 - 2 * j as i64;
                    if power > 0 {
                        above[j] * power as f64
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        if rows[k][0].abs() <= tol {
            epsilon_substituted = true;
            rows[k][0] = epsilon;
        }
        if k == n {
            break;
        }
        let (a, b) = (&rows[k - 1], &rows[k]);
        let next: Vec<f64> = (0..width)
            .map(|j| {
                let a_next = a.get(j + 1).copied().unwrap_or(0.0);
                let b_next = b.get(j + 1).copied().unwrap_or(0.0);
                (b[0] * a_next - a[0] * b_next) / b[0]
            })
            .collect();
        rows.push(next);
    }

    let first_column: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let sign_changes = first_column
        .windows(2)
        .filter(|w| (w[0] > 0.0) != (w[1] > 0.0))
        .count();
    let hurwitz = sign_changes == 0
        && !zero_row
        && !epsilon_substituted
        && first_column.iter().all(|&v| v > 0.0);

    RouthReport {
        hurwitz,
        vacuous: false,
        sign_changes,
        zero_row,
        epsilon_substituted,
        first_column,
    }
}

/// True iff every root of `p` lies in the open left half-plane.
pub fn is_hurwitz(p: &Polynomial) -> bool {
    routh_hurwitz(p).hurwitz
}

/// `gain · num(s) / den(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalTf {
    pub num: Polynomial,
    pub den: Polynomial,
    pub gain: f64,
}

impl RationalTf {
    pub fn new(num: Polynomial, den: Polynomial, gain: f64) -> Result<Self, PolyError> {
        if den.is_zero() {
            return Err(PolyError::ZeroDenominator);
        }
        Ok(Self { num, den, gain })
    }

    /// `1 / den(s)`.
    pub fn all_pole(den: Polynomial) -> Result<Self, PolyError> {
        Self::new(Polynomial::one(), den, 1.0)
    }

    pub fn is_proper(&self) -> bool {
        self.num.degree() <= self.den.degree() || self.num.is_zero()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num.is_zero() || self.num.degree() < self.den.degree()
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval_complex(s) * self.gain / self.den.eval_complex(s)
    }

    pub fn dc_gain(&self) -> f64 {
        self.gain * self.num.coeff(0) / self.den.coeff(0)
    }
}

/// Controllable canonical form realization.
///
/// The denominator is normalized to be monic. States satisfy
/// `x_{i+1} = d/dt x_i`, so `x_i = s^(i-1)/den(s) [u]`; the feedthrough is the
/// gain times the numerator's `s^n` coefficient (zero when strictly proper).
pub fn realize_ccf(tf: &RationalTf) -> Result<StateSpaceBlock, PolyError> {
    Ok(CompanionFilter::from_tf(tf)?.to_state_space())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_coeffs(p: &Polynomial, expected: &[f64], tol: f64) {
        assert_eq!(p.coeffs().len(), expected.len(), "{p:?} vs {expected:?}");
        for (a, b) in p.coeffs().iter().zip(expected) {
            assert!((a - b).abs() <= tol, "{p:?} vs {expected:?}");
        }
    }

    /// Direct convolution written independently of `poly_mul`'s loop order.
    fn convolve_oracle(a: &[f64], b: &[f64]) -> Vec<f64> {
        (0..a.len() + b.len() - 1)
            .map(|k| {
                (0..=k)
                    .filter(|&i| i < a.len() && k - i < b.len())
                    .map(|i| a[i] * b[k - i])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn binomial_square() {
        let p = Polynomial::new(vec![1.0, 1.0]);
        assert_coeffs(&poly_mul(&p, &p), &[1.0, 2.0, 1.0], 0.0);
    }

    #[test]
    fn zero_annihilates() {
        let a = Polynomial::new(vec![3.0, -1.0, 2.0]);
        assert!(poly_mul(&a, &Polynomial::zero()).is_zero());
    }

    #[test]
    fn boeing_zero_times_reference_model() {
        let z = Polynomial::from_descending(&[1.0, 0.767, 0.050]);
        let rm = Polynomial::from_descending(&[1.0, 21.0, 108.0]);
        let oracle = convolve_oracle(z.coeffs(), rm.coeffs());
        // s^4 + 21.767 s^3 + 124.157 s^2 + 83.886 s + 5.4
        let expected_desc = [1.0, 21.767, 124.157, 83.886, 5.4];
        for (o, e) in oracle.iter().rev().zip(expected_desc) {
            assert!((o - e).abs() < 1e-12);
        }
        assert_coeffs(&poly_mul(&z, &rm), &oracle, 1e-12);
    }

    #[test]
    fn add_scaled_cancels_leading_term() {
        let a = Polynomial::new(vec![1.0, 0.0, 1.0]);
        let b = Polynomial::new(vec![0.0, 0.0, -1.0]);
        assert_coeffs(&poly_add_scaled(&a, &b, 1.0), &[1.0], 0.0);
        assert_coeffs(&poly_add_scaled(&a, &b, 0.0), a.coeffs(), 0.0);
    }

    #[test]
    fn boeing_plant_minus_zero_times_rm_drops_to_degree_three() {
        let p = Polynomial::from_descending(&[1.0, 1.379, 2.174, 0.989, 0.065]);
        let z = Polynomial::from_descending(&[1.0, 0.767, 0.050]);
        let rm = Polynomial::from_descending(&[1.0, 21.0, 108.0]);
        let diff = poly_add_scaled(&p, &poly_mul(&z, &rm), -1.0);
        assert_eq!(diff.degree(), 3);
        // Hand subtraction: (1.379-21.767, 2.174-124.157, 0.989-83.886, 0.065-5.4).
        assert_coeffs(&diff, &[0.065 - 5.4, 0.989 - 83.886, 2.174 - 124.157, 1.379 - 21.767], 1e-12);
    }

    #[test]
    fn hurwitz_examples() {
        assert!(is_hurwitz(&Polynomial::new(vec![1.0, 1.0])));
        assert!(is_hurwitz(&Polynomial::from_descending(&[1.0, 0.767, 0.050])));
        assert!(!is_hurwitz(&Polynomial::new(vec![-1.0, 0.0, 1.0])));
        assert!(is_hurwitz(&Polynomial::from_descending(&[1.0, 8.0, 18.25, 11.25])));
        assert!(is_hurwitz(&Polynomial::from_descending(&[1.0, 1.379, 2.174, 0.989, 0.065])));
    }

    #[test]
    fn hurwitz_degree_zero_is_vacuous() {
        let r = routh_hurwitz(&Polynomial::new(vec![2.0]));
        assert!(r.hurwitz && r.vacuous);
    }

    #[test]
    fn hurwitz_negative_leading_is_normalized() {
        assert!(is_hurwitz(&Polynomial::new(vec![-2.0, -1.0])));
    }

    #[test]
    fn routh_zero_row_uses_auxiliary_polynomial() {
        // s^3 + s^2 + s + 1 = (s+1)(s^2+1): imaginary-axis pair.
        let r = routh_hurwitz(&Polynomial::new(vec![1.0, 1.0, 1.0, 1.0]));
        assert!(r.zero_row);
        assert!(!r.hurwitz);
        assert_eq!(r.sign_changes, 0);
        // s^4 + 0 s^3 ... with (s^2-1)(s^2+2): roots ±1, ±j√2.
        let p = poly_mul(&Polynomial::new(vec![-1.0, 0.0, 1.0]), &Polynomial::new(vec![2.0, 0.0, 1.0]));
        let r = routh_hurwitz(&p);
        assert!(r.zero_row && !r.hurwitz);
        assert_eq!(r.sign_changes, 1);
    }

    #[test]
    fn routh_epsilon_counts_right_half_plane_roots() {
        // s^4 + s^3 + 2 s^2 + 2 s + 3: zero pivot in the s^2 row, two RHP roots.
        let r = routh_hurwitz(&Polynomial::from_descending(&[1.0, 1.0, 2.0, 2.0, 3.0]));
        assert!(r.epsilon_substituted);
        assert_eq!(r.sign_changes, 2);
        assert!(!r.hurwitz);
    }

    #[test]
    fn routh_counts_rhp_roots() {
        // (s-1)(s-2)(s+3)
        let p = Polynomial::from_real_roots(&[1.0, 2.0, -3.0]);
        let r = routh_hurwitz(&p);
        assert_eq!(r.sign_changes, 2);
    }

    fn companion_eigen_stable(p: &Polynomial) -> Option<bool> {
        let p = p.to_monic();
        let n = p.degree();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n - 1 {
            m[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            m[(n - 1, j)] = -p.coeff(j);
        }
        let eig = m.complex_eigenvalues();
        let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        // Too close to the axis for either method to be decisive.
        if max_re.abs() < 1e-6 {
            None
        } else {
            Some(max_re < 0.0)
        }
    }

    #[test]
    fn hurwitz_agrees_with_eigenvalue_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        let mut stable_seen = 0;
        while checked < 1000 {
            let degree = rng.gen_range(1..=6);
            let p = if rng.gen_bool(0.5) {
                // Random roots straddling the imaginary axis.
                let mut roots = Vec::new();
                while roots.len() < degree {
                    if degree - roots.len() >= 2 && rng.gen_bool(0.5) {
                        let re = rng.gen_range(-3.0..0.6);
                        let im = rng.gen_range(0.1..3.0);
                        roots.push(Complex64::new(re, im));
                        roots.push(Complex64::new(re, -im));
                    } else {
                        roots.push(Complex64::new(rng.gen_range(-3.0..0.6), 0.0));
                    }
                }
                let pairs: Vec<Complex64> = roots.into_iter().filter(|r| r.im >= 0.0).collect();
                Polynomial::from_roots(&pairs)
            } else {
                let mut c: Vec<f64> = (0..degree).map(|_| rng.gen_range(-0.5..4.0)).collect();
                c.push(1.0);
                Polynomial::new(c)
            };
            if let Some(expected) = companion_eigen_stable(&p) {
                assert_eq!(is_hurwitz(&p), expected, "{p:?}");
                stable_seen += usize::from(expected);
                checked += 1;
            }
        }
        assert!(stable_seen > 100);
    }

    #[test]
    fn realize_first_order_lag() {
        let tf = RationalTf::all_pole(Polynomial::new(vec![1.0, 1.0])).unwrap();
        let ss = realize_ccf(&tf).unwrap();
        assert_eq!(ss.a, DMatrix::from_row_slice(1, 1, &[-1.0]));
        assert_eq!(ss.b, DMatrix::from_row_slice(1, 1, &[1.0]));
        assert_eq!(ss.c, DMatrix::from_row_slice(1, 1, &[1.0]));
        assert_eq!(ss.d, DMatrix::from_row_slice(1, 1, &[0.0]));
    }

    #[test]
    fn realize_biproper_cancellation() {
        let rm = Polynomial::from_descending(&[1.0, 21.0, 108.0]);
        let ss = realize_ccf(&RationalTf::new(rm.clone(), rm, 1.0).unwrap()).unwrap();
        assert_eq!(ss.d[(0, 0)], 1.0);
        assert!(ss.c.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn realize_strictly_proper_dc_gain() {
        let tf = RationalTf::new(
            Polynomial::new(vec![2.0, 1.0]),
            Polynomial::new(vec![2.0, 3.0, 1.0]),
            1.0,
        )
        .unwrap();
        let ss = realize_ccf(&tf).unwrap();
        assert_eq!(ss.order(), 2);
        assert_eq!(ss.d[(0, 0)], 0.0);
        let g0 = ss.frequency_response(Complex64::new(0.0, 0.0));
        assert!((g0.re - 1.0).abs() < 1e-12 && g0.im.abs() < 1e-12);
    }

    #[test]
    fn realize_rejects_improper() {
        let tf = RationalTf::new(Polynomial::new(vec![0.0, 0.0, 1.0]), Polynomial::new(vec![1.0, 1.0]), 1.0)
            .unwrap();
        assert!(matches!(realize_ccf(&tf), Err(PolyError::Improper { num: 2, den: 1 })));
    }

    #[test]
    fn zero_denominator_rejected() {
        assert_eq!(
            RationalTf::new(Polynomial::one(), Polynomial::zero(), 1.0),
            Err(PolyError::ZeroDenominator)
        );
    }

    #[test]
    fn display_reads_naturally() {
        let p = Polynomial::from_descending(&[1.0, -21.0, 108.0]);
        assert_eq!(p.to_string(), "s^2 - 21s + 108");
    }

    fn poly_strategy() -> impl Strategy<Value = Polynomial> {
        prop::collection::vec(-10.0..10.0f64, 1..7).prop_map(Polynomial::new)
    }

    fn rel_close(a: &Polynomial, b: &Polynomial) -> bool {
        let scale = a.max_abs_coeff().max(b.max_abs_coeff()).max(1.0);
        let len = a.coeffs().len().max(b.coeffs().len());
        (0..len).all(|i| (a.coeff(i) - b.coeff(i)).abs() <= 1e-12 * scale)
    }

    proptest! {
        #[test]
        fn multiplication_distributes_over_addition(a in poly_strategy(), b in poly_strategy(), c in poly_strategy()) {
            let lhs = poly_mul(&a, &poly_add_scaled(&b, &c, 1.0));
            let rhs = poly_add_scaled(&poly_mul(&a, &b), &poly_mul(&a, &c), 1.0);
            prop_assert!(rel_close(&lhs, &rhs), "{:?} vs {:?}", lhs, rhs);
        }

        #[test]
        fn product_degree_adds(a in poly_strategy(), b in poly_strategy()) {
            prop_assume!(!a.is_zero() && !b.is_zero());
            prop_assert_eq!(poly_mul(&a, &b).degree(), a.degree() + b.degree());
        }

        #[test]
        fn realization_matches_direct_evaluation(
            num in prop::collection::vec(-5.0..5.0f64, 1..5),
            den_tail in prop::collection::vec(0.1..5.0f64, 4),
            gain in -3.0..3.0f64,
        ) {
            let mut den = den_tail.clone();
            den.push(1.0);
            let tf = RationalTf::new(Polynomial::new(num), Polynomial::new(den), gain).unwrap();
            let ss = realize_ccf(&tf).unwrap();
            for k in 0..20 {
                let w = 0.05 * 1.5f64.powi(k);
                let s = Complex64::new(0.0, w);
                let direct = tf.eval(s);
                let realized = ss.frequency_response(s);
                prop_assert!((direct - realized).norm() <= 1e-9 * direct.norm().max(1e-300),
                    "w={} direct={} realized={}", w, direct, realized);
            }
        }
    }
}
