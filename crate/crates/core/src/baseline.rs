//! Traditional gradient MRAC that needs `sign(kp)` a priori, kept for
//! comparison runs.
//!
//! ```text
//! u = θᵀφ
//! ε = e + χμ,  μ = θᵀϕ − 1/Rm(s)[θᵀφ],  ϕ = 1/Rm(s)[φ]
//! θ̇ = −sign(kp) Γ ε ϕ,   χ̇ = −γ ε μ
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lti::{CompanionFilter, VectorFilter};
use crate::poly::{Polynomial, RationalTf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("sign_kp must be +1 or -1, got {0}")]
    Sign(f64),
    #[error("adaptation gains must be positive (gamma_theta = {gamma_theta}, gamma_chi = {gamma_chi})")]
    Gains { gamma_theta: f64, gamma_chi: f64 },
}

/// Design parameters of the gradient law. `Γ = gamma_theta · I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineGains {
    pub sign_kp: f64,
    pub gamma_theta: f64,
    pub gamma_chi: f64,
    /// Divide both update laws by `1 + ϕᵀϕ + μ²`.
    pub normalized: bool,
    /// When false the estimates are frozen at their initial values.
    pub adapt: bool,
}

impl BaselineGains {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.sign_kp != 1.0 && self.sign_kp != -1.0 {
            return Err(BaselineError::Sign(self.sign_kp));
        }
        if !(self.gamma_theta > 0.0 && self.gamma_chi > 0.0) {
            return Err(BaselineError::Gains { gamma_theta: self.gamma_theta, gamma_chi: self.gamma_chi });
        }
        Ok(())
    }
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self { sign_kp: 1.0, gamma_theta: 10.0, gamma_chi: 10.0, normalized: false, adapt: true }
    }
}

/// Filters of the gradient scheme.
#[derive(Debug, Clone)]
pub struct BaselineController {
    pub n: usize,
    pub regressor: CompanionFilter,
    /// `1/Rm(s)` on each component of `φ`.
    pub varphi: VectorFilter,
    /// `1/Rm(s)` on `θᵀφ`.
    pub mu: CompanionFilter,
}

impl BaselineController {
    pub fn new(n: usize, omega: &Polynomial, rm: &Polynomial) -> Self {
        let regressor = CompanionFilter::from_tf(&RationalTf::all_pole(omega.clone()).expect("Ω is nonzero"))
            .expect("all-pole filter is proper");
        let mu = CompanionFilter::from_tf(&RationalTf::all_pole(rm.clone()).expect("Rm is nonzero"))
            .expect("all-pole filter is proper");
        let varphi = VectorFilter::new(mu.clone(), 2 * n);
        Self { n, regressor, varphi, mu }
    }
}

/// `u = θᵀφ`.
pub fn baseline_control(theta: &[f64], phi: &[f64]) -> f64 {
    theta.iter().zip(phi).map(|(a, b)| a * b).sum()
}

/// `(ε, μ)` given the filtered regressor `ϕ` and `1/Rm(s)[θᵀφ]`.
pub fn baseline_estimation_error(e: f64, theta: &[f64], chi: f64, varphi: &[f64], filtered_control: f64) -> (f64, f64) {
    let mu = baseline_control(theta, varphi) - filtered_control;
    (e + chi * mu, mu)
}

/// Writes `θ̇` and returns `χ̇`.
pub fn baseline_update(eps: f64, varphi: &[f64], mu: f64, gains: &BaselineGains, d_theta: &mut [f64]) -> f64 {
    let norm = if gains.normalized {
        1.0 + varphi.iter().map(|v| v * v).sum::<f64>() + mu * mu
    } else {
        1.0
    };
    let scale = -gains.sign_kp * gains.gamma_theta * eps / norm;
    for (d, v) in d_theta.iter_mut().zip(varphi) {
        *d = scale * v;
    }
    -gains.gamma_chi * eps * mu / norm
}
