//! Normalized least-squares parameter update.
//!
//! ```text
//! Θ̇ = −ϒ Φ ε̄ / m²,   ϒ̇ = −ϒ Φ Φᵀ ϒ / m²,   m² = 1 + β1 ΦᵀΦ + β2 ΦᵀϒΦ
//! ```
//!
//! `ϒ` is stored row-major in a flat slice so it can live inside the global
//! simulation state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptationError {
    #[error("beta1 and beta2 must be positive, got {beta1} and {beta2}")]
    Beta { beta1: f64, beta2: f64 },
    #[error("initial gain matrix must be symmetric positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },
    #[error("initial gain matrix is {rows}x{cols}, parameter vector has {len} entries")]
    Dimension { rows: usize, cols: usize, len: usize },
    #[error("normalization radicand is negative: {0}")]
    NegativeRadicand(f64),
    #[error("gain matrix is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
}

/// Design parameters and initial conditions of the update law.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub upsilon0: DMatrix<f64>,
    pub theta0: Vec<f64>,
}

impl AdaptationConfig {
    pub fn new(beta1: f64, beta2: f64, upsilon0: DMatrix<f64>, theta0: Vec<f64>) -> Result<Self, AdaptationError> {
        if !(beta1 > 0.0 && beta2 > 0.0) {
            return Err(AdaptationError::Beta { beta1, beta2 });
        }
        let len = theta0.len();
        if upsilon0.nrows() != len || upsilon0.ncols() != len {
            return Err(AdaptationError::Dimension { rows: upsilon0.nrows(), cols: upsilon0.ncols(), len });
        }
        let asym = (&upsilon0 - upsilon0.transpose()).amax();
        let min_eig = upsilon0.clone().symmetric_eigen().eigenvalues.min();
        if asym > 1e-12 * upsilon0.amax() || min_eig <= 0.0 {
            return Err(AdaptationError::NotPositiveDefinite { min_eig });
        }
        Ok(Self { beta1, beta2, upsilon0, theta0 })
    }

    /// `ϒ0 = scale · I`.
    pub fn isotropic(beta1: f64, beta2: f64, scale: f64, theta0: Vec<f64>) -> Result<Self, AdaptationError> {
        let n = theta0.len();
        Self::new(beta1, beta2, DMatrix::identity(n, n) * scale, theta0)
    }
}

/// Serializable summary used in configuration echoes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsGains {
    pub beta1: f64,
    pub beta2: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ϒΦ` for a row-major `ϒ`.
pub fn gain_times(upsilon: &[f64], phi: &[f64], out: &mut [f64]) {
    let n = phi.len();
    for (i, o) in out.iter_mut().enumerate().take(n) {
        *o = dot(&upsilon[i * n..(i + 1) * n], phi);
    }
}

fn normalization_from(phi: &[f64], upsilon_phi: &[f64], beta1: f64, beta2: f64) -> Result<f64, AdaptationError> {
    let radicand = 1.0 + beta1 * dot(phi, phi) + beta2 * dot(phi, upsilon_phi);
    if radicand < 0.0 || radicand.is_nan() {
        return Err(AdaptationError::NegativeRadicand(radicand));
    }
    Ok(radicand.sqrt())
}

/// `m = sqrt(1 + β1 ΦᵀΦ + β2 ΦᵀϒΦ)`.
pub fn normalization(phi: &DVector<f64>, upsilon: &DMatrix<f64>, beta1: f64, beta2: f64) -> Result<f64, AdaptationError> {
    let up = upsilon * phi;
    normalization_from(phi.as_slice(), up.as_slice(), beta1, beta2)
}

/// Scratch space for the hot-path derivative evaluation.
#[derive(Debug, Clone)]
pub struct LsWorkspace {
    upsilon_phi: Vec<f64>,
}

impl LsWorkspace {
    pub fn new(len: usize) -> Self {
        Self { upsilon_phi: vec![0.0; len] }
    }

    /// Writes `Θ̇` and row-major `ϒ̇`; returns `m`.
    ///
    /// Assumes `ϒ` symmetric, so that `ϒΦΦᵀϒ = (ϒΦ)(ϒΦ)ᵀ`.
    #[allow(clippy::too_many_arguments)]
    pub fn derivatives(
        &mut self,
        upsilon: &[f64],
        phi: &[f64],
        eps_bar: f64,
        beta1: f64,
        beta2: f64,
        d_theta: &mut [f64],
        d_upsilon: &mut [f64],
    ) -> Result<f64, AdaptationError> {
        let n = phi.len();
        gain_times(upsilon, phi, &mut self.upsilon_phi);
        let m = normalization_from(phi, &self.upsilon_phi, beta1, beta2)?;
        let inv_m2 = 1.0 / (m * m);
        for i in 0..n {
            let ui = self.upsilon_phi[i] * inv_m2;
            d_theta[i] = -ui * eps_bar;
            let row = &mut d_upsilon[i * n..(i + 1) * n];
            for (r, uj) in row.iter_mut().zip(&self.upsilon_phi) {
                *r = -ui * uj;
            }
        }
        Ok(m)
    }
}

/// `(Θ̇, ϒ̇)` of the update law. `Θ̇` does not depend on `Θ` itself; the
/// argument is kept for signature symmetry with the diagnostics.
pub fn adaptation_derivatives(
    _theta: &DVector<f64>,
    upsilon: &DMatrix<f64>,
    phi: &DVector<f64>,
    eps_bar: f64,
    beta1: f64,
    beta2: f64,
) -> Result<(DVector<f64>, DMatrix<f64>), AdaptationError> {
    let n = phi.len();
    // nalgebra is column-major; the transpose of a symmetric matrix is itself.
    let flat: Vec<f64> = upsilon.transpose().as_slice().to_vec();
    let mut d_theta = vec![0.0; n];
    let mut d_up = vec![0.0; n * n];
    LsWorkspace::new(n).derivatives(&flat, phi.as_slice(), eps_bar, beta1, beta2, &mut d_theta, &mut d_up)?;
    Ok((DVector::from_vec(d_theta), DMatrix::from_row_slice(n, n, &d_up)))
}

/// Replaces `ϒ` by `(ϒ + ϒᵀ)/2`.
pub fn symmetrize(upsilon: &mut [f64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (upsilon[i * n + j] + upsilon[j * n + i]);
            upsilon[i * n + j] = avg;
            upsilon[j * n + i] = avg;
        }
    }
}

/// `(V, λ_min(ϒ))` with `V = Θ̃ᵀ ϒ⁻¹ Θ̃`.
pub fn lyapunov_diagnostics(
    theta: &DVector<f64>,
    upsilon: &DMatrix<f64>,
    theta_star: &DVector<f64>,
) -> Result<(f64, f64), AdaptationError> {
    let min_eig = upsilon.clone().symmetric_eigen().eigenvalues.min();
    let err = theta - theta_star;
    let chol = upsilon.clone().cholesky().ok_or_else(|| AdaptationError::Singular {
        condition: condition_estimate(upsilon),
    })?;
    let v = err.dot(&chol.solve(&err));
    Ok((v, min_eig))
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().fold(0.0_f64, |a, e| a.max(e.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, e| a.min(e.abs()));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// `‖Θ̃(t) − ϒ(t) ϒ0⁻¹ Θ̃(0)‖`, the closed-form solution residual of the
/// update law under an exact linear regression.
pub fn solution_identity_residual(
    theta: &DVector<f64>,
    upsilon: &DMatrix<f64>,
    config: &AdaptationConfig,
    theta_star: &DVector<f64>,
) -> f64 {
    let err0 = DVector::from_column_slice(&config.theta0) - theta_star;
    let w = config
        .upsilon0
        .clone()
        .cholesky()
        .expect("initial gain matrix is positive definite")
        .solve(&err0);
    ((theta - theta_star) - upsilon * w).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::Rk4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalization_examples() {
        let up = DMatrix::identity(3, 3);
        assert_eq!(normalization(&DVector::zeros(3), &up, 1.0, 1.0).unwrap(), 1.0);
        // ΦᵀΦ = 3 and ΦᵀϒΦ = 5.
        let phi = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let up = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 2.0]));
        assert_eq!(normalization(&phi, &up, 1.0, 1.0).unwrap(), 3.0);
        let up = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(normalization(&DVector::from_element(1, 1.0), &up, 1.0, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn negative_radicand_is_an_error() {
        let up = DMatrix::from_element(1, 1, -10.0);
        assert!(matches!(
            normalization(&DVector::from_element(1, 1.0), &up, 1.0, 1.0),
            Err(AdaptationError::NegativeRadicand(_))
        ));
    }

    #[test]
    fn derivative_examples() {
        let th = DVector::zeros(1);
        let up = DMatrix::from_element(1, 1, 1.0);
        let (dt, du) = adaptation_derivatives(&th, &up, &DVector::zeros(1), 5.0, 1.0, 1.0).unwrap();
        assert_eq!((dt[0], du[(0, 0)]), (0.0, 0.0));

        let (dt, du) = adaptation_derivatives(&th, &up, &DVector::from_element(1, 1.0), 1.0, 1.0, 1.0).unwrap();
        assert!((dt[0] + 1.0 / 3.0).abs() < 1e-15);
        assert!((du[(0, 0)] + 1.0 / 3.0).abs() < 1e-15);

        let (dt, du) = adaptation_derivatives(&th, &up, &DVector::from_element(1, 2.0), 0.0, 1.0, 1.0).unwrap();
        assert_eq!(dt[0], 0.0);
        assert!(du[(0, 0)] < 0.0);
    }

    #[test]
    fn gain_derivative_is_symmetric_rank_one_nsd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let up = &a * a.transpose() + DMatrix::identity(n, n);
        let phi = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let (_, du) = adaptation_derivatives(&DVector::zeros(n), &up, &phi, 0.3, 1.0, 2.0).unwrap();
        assert!((&du - du.transpose()).amax() < 1e-14);
        let eig = du.clone().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e <= 1e-12));
        assert_eq!(eig.iter().filter(|e| e.abs() > 1e-10).count(), 1);
    }

    #[test]
    fn lyapunov_examples() {
        let th = DVector::from_vec(vec![1.0, 2.0]);
        let up = DMatrix::identity(2, 2);
        assert_eq!(lyapunov_diagnostics(&th, &up, &th).unwrap().0, 0.0);
        let (v, min) = lyapunov_diagnostics(
            &DVector::from_element(1, 3.0),
            &DMatrix::from_element(1, 1, 2.0),
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!((v - 2.0).abs() < 1e-14 && (min - 2.0).abs() < 1e-14);
        assert!(lyapunov_diagnostics(&th, &DMatrix::zeros(2, 2), &th).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(AdaptationConfig::isotropic(0.0, 1.0, 1.0, vec![0.0; 2]).is_err());
        assert!(AdaptationConfig::isotropic(1.0, 1.0, -1.0, vec![0.0; 2]).is_err());
        assert!(AdaptationConfig::new(1.0, 1.0, DMatrix::identity(3, 3), vec![0.0; 2]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(AdaptationConfig::new(1.0, 1.0, asym, vec![0.0; 2]).is_err());
    }

    /// Static linear regression ε̄ = Θ̃ᵀΦ(t) with a synthetic regressor:
    /// the identities of the update law hold up to integration error.
    #[test]
    fn regression_identities_on_synthetic_signal() {
        let n = 4;
        let theta_star = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let cfg = AdaptationConfig::isotropic(1.0, 1.0, 10.0, vec![0.0; n]).unwrap();
        let regressor = |t: f64| [t.sin(), (2.0 * t).cos(), 1.0, (0.5 * t).sin() * 3.0];
        let mut x = vec![0.0; n + n * n];
        x[..n].copy_from_slice(&cfg.theta0);
        for i in 0..n {
            x[n + i * n + i] = 10.0;
        }
        let mut ws = LsWorkspace::new(n);
        let mut rk = Rk4::new(x.len());
        let dt = 1e-3;
        let ts = theta_star.clone();
        let mut prev_v = f64::INFINITY;
        let z: Vec<DVector<f64>> = (0..5).map(|k| DVector::from_fn(n, |i, _| ((i + k) as f64).cos())).collect();
        let mut prev_q: Vec<f64> = vec![f64::INFINITY; z.len()];
        for k in 0..20_000 {
            let t = k as f64 * dt;
            rk.step(
                |t, x, dx| {
                    let phi = regressor(t);
                    let eps: f64 = (0..n).map(|i| (x[i] - ts[i]) * phi[i]).sum();
                    let (dth, dup) = dx.split_at_mut(n);
                    ws.derivatives(&x[n..], &phi, eps, 1.0, 1.0, dth, dup).unwrap();
                },
                t,
                &mut x,
                dt,
            )
            .unwrap();
            symmetrize(&mut x[n..], n);
            let theta = DVector::from_column_slice(&x[..n]);
            let up = DMatrix::from_row_slice(n, n, &x[n..]);
            let (v, min_eig) = lyapunov_diagnostics(&theta, &up, &theta_star).unwrap();
            assert!(min_eig > 0.0);
            assert!(v <= prev_v + 1e-8 * (1.0 + v), "V increased at step {k}");
            prev_v = v;
            for (q_prev, zk) in prev_q.iter_mut().zip(&z) {
                let q = zk.dot(&(&up * zk));
                assert!(q <= *q_prev + 1e-10);
                *q_prev = q;
            }
            assert!(solution_identity_residual(&theta, &up, &cfg, &theta_star) < 1e-8);
        }
        // Persistently exciting regressor: the estimate approaches the truth.
        let theta = DVector::from_column_slice(&x[..n]);
        let err0 = (DVector::from_column_slice(&cfg.theta0) - &theta_star).norm();
        assert!((theta - &theta_star).norm() < 0.1 * err0);
    }
}
