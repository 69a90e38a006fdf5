//! The singularity-free adaptive control law.
//!
//! Parameter vector layout (length `4n+2`):
//!
//! ```text
//! Θ = [θ1 (n−1); θ2 (n−1); θ3; θ4; θp (2n); ρ; λ]
//! ```
//!
//! `θ̄ = Θ[0..4n+1]` is everything except `λ`. Regressor signals:
//!
//! - `φ = [φ1; φ2; y; r]` with `φ1 = b(s)/Ω(s)[u]`, `φ2 = b(s)/Ω(s)[y]`
//! - `ω = [φ; σφ; −σu]`
//! - `ζ = H(s)[ω]`, `η = θ̄ᵀζ − H(s)[θ̄ᵀω]`
//! - `ē = H(s)Rm(s)[e]`, `ε̄ = ē + η/(σ+λ)`, `Φ = [ζ; ē]/(σ+λ)`

use thiserror::Error;

use crate::lti::{CompanionFilter, VectorFilter};
use crate::poly::{is_hurwitz, Polynomial, RationalTf};

/// Divisors smaller than this are treated as a singular control law.
pub const SINGULARITY_TOL: f64 = 1e-12;

/// `|σ+λ|` below this is logged.
pub const SMALL_MARGIN_WARN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("{name} must be monic")]
    NotMonic { name: &'static str },
    #[error("{name} has degree {actual}, expected {expected}")]
    Degree { name: &'static str, actual: usize, expected: usize },
    #[error("{name} = {poly} is not Hurwitz")]
    NotHurwitz { name: &'static str, poly: String },
    #[error("plant order must satisfy 1 <= n* <= n (n = {n}, m = {m})")]
    Orders { n: usize, m: usize },
    #[error("control law is singular: 1 + σρ = {0}")]
    SingularControl(f64),
    #[error("estimation error is singular: σ + λ = {0}")]
    SingularEstimation(f64),
}

/// Design polynomials of the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct MracStructure {
    pub n: usize,
    pub m: usize,
    pub n_star: usize,
    pub omega: Polynomial,
    pub rm: Polynomial,
    pub h_den: Polynomial,
}

fn require(name: &'static str, p: &Polynomial, degree: usize) -> Result<(), ControllerError> {
    if !p.is_monic() {
        return Err(ControllerError::NotMonic { name });
    }
    if p.degree() != degree {
        return Err(ControllerError::Degree { name, actual: p.degree(), expected: degree });
    }
    if degree > 0 && !is_hurwitz(p) {
        return Err(ControllerError::NotHurwitz { name, poly: p.to_string() });
    }
    Ok(())
}

impl MracStructure {
    pub fn new(n: usize, m: usize, omega: Polynomial, rm: Polynomial, h_den: Polynomial) -> Result<Self, ControllerError> {
        if n == 0 || m >= n {
            return Err(ControllerError::Orders { n, m });
        }
        let n_star = n - m;
        require("Omega", &omega, n - 1)?;
        require("Rm", &rm, n_star)?;
        require("H denominator", &h_den, n_star)?;
        Ok(Self { n, m, n_star, omega, rm, h_den })
    }

    /// Length of `φ`.
    pub fn phi_len(&self) -> usize {
        2 * self.n
    }

    /// Length of `ω` and `θ̄`.
    pub fn omega_len(&self) -> usize {
        4 * self.n + 1
    }

    /// Length of `Θ` and `Φ`.
    pub fn param_len(&self) -> usize {
        4 * self.n + 2
    }

    pub fn rho_index(&self) -> usize {
        4 * self.n
    }

    pub fn lambda_index(&self) -> usize {
        4 * self.n + 1
    }
}

/// The controller's linear filters, realized in companion form.
#[derive(Debug, Clone)]
pub struct ProposedController {
    pub structure: MracStructure,
    /// `1/Ω(s)`; its states are `b(s)/Ω(s)` applied to the input.
    pub regressor: CompanionFilter,
    /// `H(s)Rm(s)`, biproper with unit feedthrough.
    pub ebar: CompanionFilter,
    /// `H(s)` applied channelwise to `ω`.
    pub zeta: VectorFilter,
    /// `H(s)` applied to the scalar `θ̄ᵀω`.
    pub h: CompanionFilter,
}

impl ProposedController {
    pub fn new(structure: MracStructure) -> Self {
        let regressor = CompanionFilter::from_tf(&RationalTf::all_pole(structure.omega.clone()).expect("Ω is nonzero"))
            .expect("all-pole filter is proper");
        let ebar = CompanionFilter::from_tf(
            &RationalTf::new(structure.rm.clone(), structure.h_den.clone(), 1.0).expect("H denominator is nonzero"),
        )
        .expect("H·Rm has equal degrees");
        let h = CompanionFilter::from_tf(&RationalTf::all_pole(structure.h_den.clone()).expect("H denominator is nonzero"))
            .expect("all-pole filter is proper");
        let zeta = VectorFilter::new(h.clone(), structure.omega_len());
        Self { structure, regressor, ebar, zeta, h }
    }

    /// Derivatives of the `φ1`/`φ2` filter states driven by `u` and `y`.
    /// The states themselves are `φ1` and `φ2`.
    pub fn regressor_filter_derivatives(&self, phi1: &[f64], phi2: &[f64], u: f64, y: f64, d1: &mut [f64], d2: &mut [f64]) {
        self.regressor.derivative(phi1, u, d1);
        self.regressor.derivative(phi2, y, d2);
    }

    /// `ē = H(s)Rm(s)[e]` read from the filter state and the current `e`.
    pub fn tracking_error_bar(&self, x_ebar: &[f64], e: f64) -> f64 {
        self.ebar.output(x_ebar, e)
    }

    /// `(ζ, η)` from the filter states and the current `θ̄`.
    pub fn aux_signals(&self, x_zeta: &[f64], x_eta: &[f64], theta_bar: &[f64], zeta: &mut [f64]) -> f64 {
        self.zeta.state_outputs(x_zeta, zeta);
        let proj: f64 = theta_bar.iter().zip(zeta.iter()).map(|(a, b)| a * b).sum();
        proj - self.h.state_output(x_eta)
    }
}

/// `σ` from the signs of the current `ρ` and `λ` estimates.
pub fn tuning_gain(rho: f64, lambda: f64) -> f64 {
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let varsigma = sign(rho) + sign(lambda);
    if varsigma >= 1.0 || (rho == 0.0 && lambda == 0.0) {
        1.0
    } else if varsigma <= -1.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(1 + σρ, σ + λ)`.
pub fn singularity_margins(sigma: f64, rho: f64, lambda: f64) -> (f64, f64) {
    (1.0 + sigma * rho, sigma + lambda)
}

/// `φ = [φ1; φ2; y; r]` written into `out`.
pub fn assemble_phi_into(phi1: &[f64], phi2: &[f64], y: f64, r: f64, out: &mut [f64]) {
    let k = phi1.len();
    out[..k].copy_from_slice(phi1);
    out[k..2 * k].copy_from_slice(phi2);
    out[2 * k] = y;
    out[2 * k + 1] = r;
}

pub fn assemble_phi(phi1: &[f64], phi2: &[f64], y: f64, r: f64) -> Vec<f64> {
    let mut out = vec![0.0; phi1.len() + phi2.len() + 2];
    assemble_phi_into(phi1, phi2, y, r, &mut out);
    out
}

/// `u = (θᵀφ + σ θpᵀφ) / (1 + σρ)` with `θ`, `θp`, `ρ` read from the full
/// parameter vector.
pub fn control_input(params: &[f64], phi: &[f64], sigma: f64) -> Result<f64, ControllerError> {
    let k = phi.len();
    let theta = &params[..k];
    let theta_p = &params[k..2 * k];
    let rho = params[2 * k];
    let divisor = 1.0 + sigma * rho;
    if divisor.abs() < SINGULARITY_TOL {
        return Err(ControllerError::SingularControl(divisor));
    }
    let t: f64 = theta.iter().zip(phi).map(|(a, b)| a * b).sum();
    let tp: f64 = theta_p.iter().zip(phi).map(|(a, b)| a * b).sum();
    Ok((t + sigma * tp) / divisor)
}

/// `ω = [φ; σφ; −σu]` written into `out`.
pub fn build_omega_into(phi: &[f64], sigma: f64, u: f64, out: &mut [f64]) {
    let k = phi.len();
    out[..k].copy_from_slice(phi);
    for (o, p) in out[k..2 * k].iter_mut().zip(phi) {
        *o = sigma * p;
    }
    out[2 * k] = -sigma * u;
}

pub fn build_omega(phi: &[f64], sigma: f64, u: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2 * phi.len() + 1];
    build_omega_into(phi, sigma, u, &mut out);
    out
}

fn estimation_divisor(sigma: f64, lambda: f64) -> Result<f64, ControllerError> {
    let d = sigma + lambda;
    if d.abs() < SINGULARITY_TOL {
        return Err(ControllerError::SingularEstimation(d));
    }
    if d.abs() < SMALL_MARGIN_WARN {
        log::warn!("σ + λ = {d:e} is close to zero");
    }
    Ok(d)
}

/// `ε̄ = ē + η/(σ+λ)`.
pub fn estimation_error(ebar: f64, eta: f64, sigma: f64, lambda: f64) -> Result<f64, ControllerError> {
    Ok(ebar + eta / estimation_divisor(sigma, lambda)?)
}

/// `Φ = [ζ; ē]/(σ+λ)` written into `out`.
pub fn build_regressor_into(zeta: &[f64], ebar: f64, sigma: f64, lambda: f64, out: &mut [f64]) -> Result<(), ControllerError> {
    let inv = 1.0 / estimation_divisor(sigma, lambda)?;
    for (o, z) in out.iter_mut().zip(zeta) {
        *o = z * inv;
    }
    out[zeta.len()] = ebar * inv;
    Ok(())
}

pub fn build_regressor(zeta: &[f64], ebar: f64, sigma: f64, lambda: f64) -> Result<Vec<f64>, ControllerError> {
    let mut out = vec![0.0; zeta.len() + 1];
    build_regressor_into(zeta, ebar, sigma, lambda, &mut out)?;
    Ok(out)
}
