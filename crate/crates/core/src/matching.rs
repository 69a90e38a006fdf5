//! Ideal controller gains from the model-matching polynomial identity
//!
//! ```text
//! θ1ᵀ b(s) P(s) + (θ2ᵀ b(s) + θ3 Ω(s)) kp Z(s) = Ω(s) (P(s) − kp θ4 Z(s) Rm(s))
//! ```
//!
//! with `b(s) = [1, s, …, s^(n−2)]ᵀ` and `θ4 = 1/kp`. Both sides have degree at
//! most `2n−2`, so matching coefficients gives a square `(2n−1)`-dimensional
//! linear system in `(θ1, θ2, θ3)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{is_hurwitz, poly_add_scaled, poly_mul, Polynomial};

/// Condition number above which the solve is flagged as unreliable.
pub const CONDITION_WARNING: f64 = 1e12;
/// Singular values below `RANK_TOL · σ_max` count as zero.
pub const RANK_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("high-frequency gain must be nonzero")]
    ZeroGain,
    #[error("{name} must be monic, leading coefficient is {leading}")]
    NotMonic { name: &'static str, leading: f64 },
    #[error("{name} has degree {actual}, expected {expected}")]
    Degree { name: &'static str, actual: usize, expected: usize },
    #[error("{name} = {poly} is not Hurwitz")]
    NotHurwitz { name: &'static str, poly: String },
    #[error("relative degree must be at least 1 (deg Z = {m}, deg P = {n})")]
    RelativeDegree { n: usize, m: usize },
    #[error("matching system is singular and inconsistent (condition estimate {condition:e})")]
    Singular { condition: f64 },
}

/// Ideal gains, plus the derived quantities the adaptive law estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedGains {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub theta3: f64,
    pub theta4: f64,
    /// `kp · [θ1; θ2; θ3; θ4]`; its last entry is 1.
    pub theta_p: Vec<f64>,
    pub rho_star: f64,
    pub lambda_star: f64,
    pub condition: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl MatchedGains {
    /// Plant order `n`.
    pub fn order(&self) -> usize {
        self.theta1.len() + 1
    }

    /// `θ* = [θ1; θ2; θ3; θ4]`, length `2n`.
    pub fn theta(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.order());
        v.extend_from_slice(&self.theta1);
        v.extend_from_slice(&self.theta2);
        v.push(self.theta3);
        v.push(self.theta4);
        v
    }

    /// `θ̄* = [θ*; θp*; ρ*]`, length `4n+1`.
    pub fn theta_bar(&self) -> Vec<f64> {
        let mut v = self.theta();
        v.extend_from_slice(&self.theta_p);
        v.push(self.rho_star);
        v
    }

    /// `Θ* = [θ*; θp*; ρ*; λ*]`, length `4n+2`.
    pub fn theta_star_full(&self) -> Vec<f64> {
        let mut v = self.theta_bar();
        v.push(self.lambda_star);
        v
    }
}

fn check_monic(name: &'static str, p: &Polynomial) -> Result<(), MatchingError> {
    if p.is_monic() {
        Ok(())
    } else {
        Err(MatchingError::NotMonic { name, leading: p.leading() })
    }
}

fn check_hurwitz(name: &'static str, p: &Polynomial) -> Result<(), MatchingError> {
    if p.degree() == 0 || is_hurwitz(p) {
        Ok(())
    } else {
        Err(MatchingError::NotHurwitz { name, poly: p.to_string() })
    }
}

/// Validates the design inputs of the matching identity.
pub fn check_design(
    p: &Polynomial,
    z: &Polynomial,
    kp: f64,
    omega: &Polynomial,
    rm: &Polynomial,
) -> Result<(), MatchingError> {
    if kp == 0.0 || !kp.is_finite() {
        return Err(MatchingError::ZeroGain);
    }
    check_monic("P", p)?;
    check_monic("Z", z)?;
    check_monic("Omega", omega)?;
    check_monic("Rm", rm)?;
    let (n, m) = (p.degree(), z.degree());
    if m >= n {
        return Err(MatchingError::RelativeDegree { n, m });
    }
    if omega.degree() != n - 1 {
        return Err(MatchingError::Degree { name: "Omega", actual: omega.degree(), expected: n - 1 });
    }
    if rm.degree() != n - m {
        return Err(MatchingError::Degree { name: "Rm", actual: rm.degree(), expected: n - m });
    }
    check_hurwitz("Z", z)?;
    check_hurwitz("Omega", omega)?;
    check_hurwitz("Rm", rm)?;
    Ok(())
}

/// Solves the matching identity by coefficient comparison.
pub fn solve_matching(
    p: &Polynomial,
    z: &Polynomial,
    kp: f64,
    omega: &Polynomial,
    rm: &Polynomial,
) -> Result<MatchedGains, MatchingError> {
    check_design(p, z, kp, omega, rm)?;
    let n = p.degree();
    let dim = 2 * n - 1;

    let kz = z.scale(kp);
    let mut columns: Vec<Polynomial> = Vec::with_capacity(dim);
    columns.extend((0..n - 1).map(|i| p.shift(i)));
    columns.extend((0..n - 1).map(|i| kz.shift(i)));
    columns.push(poly_mul(omega, &kz));

    // kp·θ4 = 1 cancels the leading s^n of P against Z·Rm.
    let rhs_poly = poly_mul(omega, &poly_add_scaled(p, &poly_mul(z, rm), -1.0));

    let a = DMatrix::from_fn(dim, dim, |row, col| columns[col].coeff(row));
    let b = DVector::from_fn(dim, |row, _| rhs_poly.coeff(row));

    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    let rank_deficient = !condition.is_finite() || s_min <= RANK_TOL * s_max;
    let (solution, warning) = if rank_deficient {
        // A common root of P and Z divides every column and the right side,
        // so the system stays consistent; the minimum-norm solution is one
        // of infinitely many.
        let x = svd.solve(&b, RANK_TOL * s_max).map_err(|_| MatchingError::Singular { condition })?;
        let misfit = (&a * &x - &b).amax();
        if !(misfit <= 1e-9 * (s_max * x.amax() + b.amax()).max(f64::MIN_POSITIVE)) {
            return Err(MatchingError::Singular { condition });
        }
        let msg = format!(
            "matching system is rank deficient (condition {condition:e}); P and Z share a root, returning the minimum-norm gains"
        );
        log::warn!("{msg}");
        (x, Some(msg))
    } else {
        let x = a.lu().solve(&b).ok_or(MatchingError::Singular { condition })?;
        let warning = (condition > CONDITION_WARNING).then(|| {
            let msg = format!("matching system is ill-conditioned (condition {condition:e})");
            log::warn!("{msg}");
            msg
        });
        (x, warning)
    };

    let theta1 = solution.rows(0, n - 1).iter().copied().collect::<Vec<_>>();
    let theta2 = solution.rows(n - 1, n - 1).iter().copied().collect::<Vec<_>>();
    let theta3 = solution[dim - 1];
    let theta4 = 1.0 / kp;

    let mut gains = MatchedGains {
        theta1,
        theta2,
        theta3,
        theta4,
        theta_p: Vec::new(),
        rho_star: kp,
        lambda_star: theta4,
        condition,
        warning,
    };
    gains.theta_p = gains.theta().iter().map(|v| kp * v).collect();
    Ok(gains)
}

/// Left side minus right side of the matching identity for the given gains.
pub fn matching_residual(
    g: &MatchedGains,
    p: &Polynomial,
    z: &Polynomial,
    kp: f64,
    omega: &Polynomial,
    rm: &Polynomial,
) -> Polynomial {
    let kz = z.scale(kp);
    let mut lhs = Polynomial::zero();
    for (i, &t) in g.theta1.iter().enumerate() {
        lhs = poly_add_scaled(&lhs, &p.shift(i), t);
    }
    let mut filt = omega.scale(g.theta3);
    for (i, &t) in g.theta2.iter().enumerate() {
        filt = poly_add_scaled(&filt, &Polynomial::monomial(i), t);
    }
    lhs = poly_add_scaled(&lhs, &poly_mul(&filt, &kz), 1.0);
    let rhs = poly_mul(omega, &poly_add_scaled(p, &poly_mul(&kz, rm), -g.theta4));
    poly_add_scaled(&lhs, &rhs, -1.0)
}

/// Largest coefficient magnitude across the matching inputs, the scale
/// against which residuals are judged.
pub fn input_scale(p: &Polynomial, z: &Polynomial, kp: f64, omega: &Polynomial, rm: &Polynomial) -> f64 {
    [p.max_abs_coeff(), z.max_abs_coeff(), kp.abs(), omega.max_abs_coeff(), rm.max_abs_coeff()]
        .into_iter()
        .fold(0.0, f64::max)
}
