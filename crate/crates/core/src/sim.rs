//! Closed-loop assembly, scenario execution and run metrics.
//!
//! Every dynamic block of a run (plant, reference model, controller filters,
//! parameter estimates and the gain matrix) lives in one global state vector
//! advanced by fixed-step RK4. The tuning gain `σ` is recomputed from the
//! estimates at the start of each step and held for the whole step.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{symmetrize, AdaptationConfig, AdaptationError, LsWorkspace};
use crate::baseline::{
    baseline_control, baseline_estimation_error, baseline_update, BaselineController, BaselineError, BaselineGains,
};
use crate::controller::{
    assemble_phi_into, build_omega_into, build_regressor_into, control_input, estimation_error, singularity_margins,
    tuning_gain, ControllerError, MracStructure, ProposedController,
};
use crate::lti::{CompanionFilter, LtiError, Rk4};
use crate::matching::{solve_matching, MatchedGains, MatchingError};
use crate::poly::{is_hurwitz, Polynomial, RationalTf};

/// Per-step tolerance on the growth of `V = Θ̃ᵀϒ⁻¹Θ̃`, relative to `1 + V`.
pub const V_STEP_TOL: f64 = 1e-8;
/// `λ_min(ϒ)` below this flags covariance collapse.
pub const COLLAPSE_EIG: f64 = 1e-12;
/// Fraction of the run, counted from the end, used for tracking statistics.
pub const FINAL_WINDOW: f64 = 0.2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Integration(#[from] LtiError),
}

/// `P(s)[y] = kp Z(s)[u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub p: Polynomial,
    pub z: Polynomial,
    pub kp: f64,
}

impl PlantModel {
    pub fn new(p: Polynomial, z: Polynomial, kp: f64) -> Result<Self, SimError> {
        if kp == 0.0 || !kp.is_finite() {
            return Err(MatchingError::ZeroGain.into());
        }
        if !p.is_monic() || !z.is_monic() {
            return Err(SimError::Config("plant polynomials P and Z must be monic".into()));
        }
        if z.degree() >= p.degree() {
            return Err(SimError::Config(format!(
                "plant must be strictly proper: deg Z = {} >= deg P = {}",
                z.degree(),
                p.degree()
            )));
        }
        if z.degree() > 0 && !is_hurwitz(&z) {
            return Err(MatchingError::NotHurwitz { name: "Z", poly: z.to_string() }.into());
        }
        Ok(Self { p, z, kp })
    }

    pub fn n(&self) -> usize {
        self.p.degree()
    }

    pub fn m(&self) -> usize {
        self.z.degree()
    }

    pub fn n_star(&self) -> usize {
        self.n() - self.m()
    }

    pub fn transfer(&self) -> RationalTf {
        RationalTf::new(self.z.clone(), self.p.clone(), self.kp).expect("P is monic")
    }
}

/// Linearized longitudinal pitch dynamics of a Boeing 737, elevator to pitch
/// angle.
pub fn boeing_model() -> PlantModel {
    PlantModel::new(
        Polynomial::from_descending(&[1.0, 1.379, 2.174, 0.989, 0.065]),
        Polynomial::from_descending(&[1.0, 0.767, 0.050]),
        -0.023,
    )
    .expect("Boeing model is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// `r(t) = offset + Σ a_k sin(w_k t + φ_k)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSignal {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub sinusoids: Vec<Sinusoid>,
}

impl ReferenceSignal {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset
            + self
                .sinusoids
                .iter()
                .map(|s| s.amplitude * (s.frequency * t + s.phase).sin())
                .sum::<f64>()
    }
}

/// `y* = 1/Rm(s) [r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    pub rm: Polynomial,
    pub signal: ReferenceSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Proposed,
    Baseline,
}

/// Per-block multipliers of the ideal parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaMultipliers {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
    pub theta_p: f64,
    pub rho: f64,
    pub lambda: f64,
}

impl ThetaMultipliers {
    pub fn apply(&self, g: &MatchedGains) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * g.order() + 2);
        v.extend(g.theta1.iter().map(|x| self.theta1 * x));
        v.extend(g.theta2.iter().map(|x| self.theta2 * x));
        v.push(self.theta3 * g.theta3);
        v.push(self.theta4 * g.theta4);
        v.extend(g.theta_p.iter().map(|x| self.theta_p * x));
        v.push(self.rho * g.rho_star);
        v.push(self.lambda * g.lambda_star);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Theta0 {
    Explicit(Vec<f64>),
    Multipliers(ThetaMultipliers),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationSpec {
    pub beta1: f64,
    pub beta2: f64,
    pub upsilon0_scale: f64,
    pub theta0: Theta0,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineInit {
    /// `θ(0) = a·θ*`, `χ(0) = b·kp`.
    Multipliers { theta: f64, chi: f64 },
    Explicit { theta: Vec<f64>, chi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSpec {
    pub gains: BaselineGains,
    pub init: BaselineInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { dt: 1e-3, t_final: 200.0, record_stride: 10 }
    }
}

impl SimSettings {
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantModel,
    pub reference: ReferenceModel,
    pub controller: ControllerKind,
    pub omega: Polynomial,
    pub h_den: Polynomial,
    pub adaptation: AdaptationSpec,
    pub baseline: BaselineSpec,
    pub sim: SimSettings,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", s.dt)));
        }
        if !(s.t_final > s.dt) {
            return Err(SimError::Config(format!("t_final ({}) must exceed dt ({})", s.t_final, s.dt)));
        }
        if s.record_stride == 0 {
            return Err(SimError::Config("record_stride must be at least 1".into()));
        }
        let n = self.plant.n();
        MracStructure::new(n, self.plant.m(), self.omega.clone(), self.reference.rm.clone(), self.h_den.clone())?;
        if self.controller == ControllerKind::Baseline {
            self.baseline.gains.validate()?;
        }
        Ok(())
    }

    /// Ideal gains for this scenario's plant and design polynomials.
    pub fn matched_gains(&self) -> Result<MatchedGains, MatchingError> {
        solve_matching(&self.plant.p, &self.plant.z, self.plant.kp, &self.omega, &self.reference.rm)
    }

    pub fn structure(&self) -> Result<MracStructure, ControllerError> {
        MracStructure::new(
            self.plant.n(),
            self.plant.m(),
            self.omega.clone(),
            self.reference.rm.clone(),
            self.h_den.clone(),
        )
    }

    /// Resolved initial parameter vector of the proposed controller.
    pub fn initial_theta(&self, gains: Option<&MatchedGains>) -> Result<Vec<f64>, SimError> {
        let len = 4 * self.plant.n() + 2;
        let theta0 = match &self.adaptation.theta0 {
            Theta0::Explicit(v) => v.clone(),
            Theta0::Multipliers(m) => {
                let g = gains.ok_or_else(|| SimError::Config("multiplier initialization needs solvable matching".into()))?;
                m.apply(g)
            }
        };
        if theta0.len() != len {
            return Err(SimError::Config(format!("theta0 has {} entries, expected 4n+2 = {len}", theta0.len())));
        }
        Ok(theta0)
    }

    pub fn adaptation_config(&self, theta0: Vec<f64>) -> Result<AdaptationConfig, AdaptationError> {
        AdaptationConfig::isotropic(self.adaptation.beta1, self.adaptation.beta2, self.adaptation.upsilon0_scale, theta0)
    }
}

/// `ϒ0` scale of the built-in scenarios and the relative-degree sweep.
pub const SCENARIO_UPSILON0: f64 = 1e9;

/// The aircraft reference input `sin t − 0.5 sin 0.5t`.
pub fn boeing_reference_signal() -> ReferenceSignal {
    ReferenceSignal {
        offset: 0.0,
        sinusoids: vec![
            Sinusoid { amplitude: 1.0, frequency: 1.0, phase: 0.0 },
            Sinusoid { amplitude: -0.5, frequency: 0.5, phase: 0.0 },
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoeingCase {
    /// Correct initial sign of the high-frequency gain.
    I,
    /// Wrong initial sign.
    II,
}

pub fn boeing_multipliers(case: BoeingCase) -> ThetaMultipliers {
    match case {
        BoeingCase::I => ThetaMultipliers {
            theta1: 1.2,
            theta2: 1.2,
            theta3: 1.2,
            theta4: 1.2,
            theta_p: 0.9,
            rho: 1.2,
            lambda: 0.8,
        },
        BoeingCase::II => ThetaMultipliers {
            theta1: 0.8,
            theta2: 0.8,
            theta3: 0.8,
            theta4: -0.3,
            theta_p: -0.5,
            rho: -0.5,
            lambda: -0.5,
        },
    }
}

/// The aircraft pitch scenarios with the proposed controller.
pub fn boeing_scenario(case: BoeingCase) -> ScenarioConfig {
    let rm = Polynomial::from_descending(&[1.0, 21.0, 108.0]);
    ScenarioConfig {
        name: match case {
            BoeingCase::I => "boeing-case-i".into(),
            BoeingCase::II => "boeing-case-ii".into(),
        },
        plant: boeing_model(),
        reference: ReferenceModel { rm: rm.clone(), signal: boeing_reference_signal() },
        controller: ControllerKind::Proposed,
        omega: Polynomial::from_descending(&[1.0, 8.0, 18.25, 11.25]),
        h_den: rm,
        adaptation: AdaptationSpec {
            beta1: 1.0,
            beta2: 1.0,
            // Regressor entries are O(1e-4) here while gains reach 1e5; below
            // ~3e8 the wrong-sign case stalls or chatters.
            upsilon0_scale: SCENARIO_UPSILON0,
            theta0: Theta0::Multipliers(boeing_multipliers(case)),
        },
        baseline: BaselineSpec { gains: BaselineGains { sign_kp: -1.0, ..Default::default() }, init: BaselineInit::Multipliers { theta: 1.2, chi: 1.2 } },
        sim: SimSettings::default(),
    }
}

/// The aircraft scenario driven by the traditional gradient law with the
/// correct `sign(kp)`.
pub fn boeing_baseline_scenario() -> ScenarioConfig {
    let mut cfg = boeing_scenario(BoeingCase::I);
    cfg.name = "boeing-baseline".into();
    cfg.controller = ControllerKind::Baseline;
    cfg
}

/// One recorded row of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub y: f64,
    pub y_star: f64,
    pub e: f64,
    pub u: f64,
    pub sigma: f64,
    pub rho: f64,
    pub lambda: f64,
    pub eps_bar: f64,
    pub m_norm: f64,
    pub margin_u: f64,
    pub margin_lambda: f64,
    pub v: Option<f64>,
    pub min_eig_upsilon: Option<f64>,
}

impl Sample {
    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.y,
            self.y_star,
            self.e,
            self.u,
            self.sigma,
            self.rho,
            self.lambda,
            self.eps_bar,
            self.m_norm,
            self.margin_u,
            self.margin_lambda,
        ]
        .iter()
        .chain(self.v.iter())
        .chain(self.min_eig_upsilon.iter())
        .all(|v| v.is_finite())
    }
}

/// Named ranges of the global state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLayout {
    pub blocks: Vec<(String, Range<usize>)>,
}

impl StateLayout {
    fn build(sizes: &[(&str, usize)]) -> Self {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&(name, len)| {
                let r = start..start + len;
                start += len;
                (name.to_string(), r)
            })
            .collect();
        Self { blocks }
    }

    pub fn dimension(&self) -> usize {
        self.blocks.last().map_or(0, |(_, r)| r.end)
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }
}

/// A closed loop the runner can integrate.
pub trait ClosedLoop {
    fn layout(&self) -> &StateLayout;
    fn initial_state(&self) -> Vec<f64>;
    /// Freezes step-level decisions (the tuning gain) from the state at the
    /// start of a step.
    fn begin_step(&mut self, x: &[f64]);
    fn derivative(&mut self, t: f64, x: &[f64], dx: &mut [f64]);
    fn end_step(&mut self, x: &mut [f64]);
    /// Signals at `(t, x)` under the currently frozen decisions.
    fn observe(&mut self, t: f64, x: &[f64], with_eigen: bool) -> Result<Sample, SimError>;
    fn sigma(&self) -> f64;
    fn params<'a>(&self, x: &'a [f64]) -> &'a [f64];
    /// Reason the last derivative evaluation failed, if any.
    fn take_fault(&mut self) -> Option<String>;
    fn step_check(&mut self, _t: f64, _x: &[f64]) -> Option<(f64, f64, f64)> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Signals {
    y: f64,
    y_star: f64,
    e: f64,
    r: f64,
    u: f64,
    eps_bar: f64,
    theta_bar_omega: f64,
}

/// The proposed controller wired to the plant and reference model.
pub struct ProposedLoop {
    ctrl: ProposedController,
    plant: CompanionFilter,
    reference: CompanionFilter,
    signal: ReferenceSignal,
    layout: StateLayout,
    r: ProposedRanges,
    beta1: f64,
    beta2: f64,
    theta0: Vec<f64>,
    upsilon0_scale: f64,
    theta_star: Option<Vec<f64>>,
    /// `ϒ0⁻¹ Θ̃(0)`, for the closed-form solution check.
    upsilon0_inv_err0: Option<Vec<f64>>,
    sigma: f64,
    ls: LsWorkspace,
    phi: Vec<f64>,
    omega: Vec<f64>,
    zeta: Vec<f64>,
    regressor: Vec<f64>,
    fault: Option<String>,
}

#[derive(Debug, Clone)]
struct ProposedRanges {
    plant: Range<usize>,
    reference: Range<usize>,
    phi1: Range<usize>,
    phi2: Range<usize>,
    ebar: Range<usize>,
    zeta: Range<usize>,
    eta: Range<usize>,
    theta: Range<usize>,
    upsilon: Range<usize>,
}

impl ProposedLoop {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let structure = cfg.structure()?;
        let gains = cfg.matched_gains().ok();
        let theta0 = cfg.initial_theta(gains.as_ref())?;
        let adaptation = cfg.adaptation_config(theta0.clone())?;
        let ctrl = ProposedController::new(structure);
        let s = &ctrl.structure;
        let plant = CompanionFilter::from_tf(&cfg.plant.transfer()).expect("plant is strictly proper");
        let reference = CompanionFilter::from_tf(&RationalTf::all_pole(cfg.reference.rm.clone()).expect("Rm is nonzero"))
            .expect("all-pole filter is proper");
        let p = s.param_len();
        let layout = StateLayout::build(&[
            ("plant", plant.order()),
            ("reference", reference.order()),
            ("phi1", ctrl.regressor.order()),
            ("phi2", ctrl.regressor.order()),
            ("ebar", ctrl.ebar.order()),
            ("zeta", ctrl.zeta.state_len()),
            ("eta", ctrl.h.order()),
            ("theta", p),
            ("upsilon", p * p),
        ]);
        let get = |n: &str| layout.range(n).expect("block exists");
        let r = ProposedRanges {
            plant: get("plant"),
            reference: get("reference"),
            phi1: get("phi1"),
            phi2: get("phi2"),
            ebar: get("ebar"),
            zeta: get("zeta"),
            eta: get("eta"),
            theta: get("theta"),
            upsilon: get("upsilon"),
        };
        let theta_star = gains.map(|g| g.theta_star_full());
        let upsilon0_inv_err0 = theta_star.as_ref().map(|ts| {
            adaptation
                .upsilon0
                .clone()
                .cholesky()
                .expect("ϒ0 is positive definite")
                .solve(&(DVector::from_column_slice(&theta0) - DVector::from_column_slice(ts)))
                .as_slice()
                .to_vec()
        });
        let omega_len = s.omega_len();
        let phi_len = s.phi_len();
        Ok(Self {
            plant,
            reference,
            signal: cfg.reference.signal.clone(),
            layout,
            r,
            beta1: adaptation.beta1,
            beta2: adaptation.beta2,
            theta0,
            upsilon0_scale: cfg.adaptation.upsilon0_scale,
            theta_star,
            upsilon0_inv_err0,
            sigma: 1.0,
            ls: LsWorkspace::new(p),
            phi: vec![0.0; phi_len],
            omega: vec![0.0; omega_len],
            zeta: vec![0.0; omega_len],
            regressor: vec![0.0; p],
            fault: None,
            ctrl,
        })
    }

    pub fn theta_star(&self) -> Option<&[f64]> {
        self.theta_star.as_deref()
    }

    pub fn structure(&self) -> &MracStructure {
        &self.ctrl.structure
    }

    /// Sets `σ` directly, bypassing the sign rule. Used by tests that probe
    /// identities at a fixed tuning gain.
    pub fn force_sigma(&mut self, sigma: f64) {
        self.sigma = sigma;
    }

    fn evaluate(&mut self, t: f64, x: &[f64]) -> Result<Signals, ControllerError> {
        let r = &self.r;
        let s = &self.ctrl.structure;
        let y = self.plant.state_output(&x[r.plant.clone()]);
        let y_star = self.reference.state_output(&x[r.reference.clone()]);
        let e = y - y_star;
        let rv = self.signal.eval(t);
        assemble_phi_into(&x[r.phi1.clone()], &x[r.phi2.clone()], y, rv, &mut self.phi);
        let params = &x[r.theta.clone()];
        let u = control_input(params, &self.phi, self.sigma)?;
        build_omega_into(&self.phi, self.sigma, u, &mut self.omega);
        let theta_bar = &params[..s.omega_len()];
        let eta = self.ctrl.aux_signals(&x[r.zeta.clone()], &x[r.eta.clone()], theta_bar, &mut self.zeta);
        let ebar = self.ctrl.tracking_error_bar(&x[r.ebar.clone()], e);
        let lambda = params[s.lambda_index()];
        let eps_bar = estimation_error(ebar, eta, self.sigma, lambda)?;
        build_regressor_into(&self.zeta, ebar, self.sigma, lambda, &mut self.regressor)?;
        let theta_bar_omega = theta_bar.iter().zip(&self.omega).map(|(a, b)| a * b).sum();
        Ok(Signals { y, y_star, e, r: rv, u, eps_bar, theta_bar_omega })
    }
}

impl ClosedLoop for ProposedLoop {
    fn layout(&self) -> &StateLayout {
        &self.layout
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.dimension()];
        x[self.r.theta.clone()].copy_from_slice(&self.theta0);
        let p = self.theta0.len();
        let up = &mut x[self.r.upsilon.clone()];
        for i in 0..p {
            up[i * p + i] = self.upsilon0_scale;
        }
        x
    }

    fn begin_step(&mut self, x: &[f64]) {
        let s = &self.ctrl.structure;
        let params = &x[self.r.theta.clone()];
        self.sigma = tuning_gain(params[s.rho_index()], params[s.lambda_index()]);
    }

    fn derivative(&mut self, t: f64, x: &[f64], dx: &mut [f64]) {
        let sig = match self.evaluate(t, x) {
            Ok(sig) => sig,
            Err(e) => {
                self.fault = Some(e.to_string());
                dx.fill(f64::NAN);
                return;
            }
        };
        let r = self.r.clone();
        self.plant.derivative(&x[r.plant.clone()], sig.u, &mut dx[r.plant.clone()]);
        self.reference.derivative(&x[r.reference.clone()], sig.r, &mut dx[r.reference.clone()]);
        self.ctrl.regressor.derivative(&x[r.phi1.clone()], sig.u, &mut dx[r.phi1.clone()]);
        self.ctrl.regressor.derivative(&x[r.phi2.clone()], sig.y, &mut dx[r.phi2.clone()]);
        self.ctrl.ebar.derivative(&x[r.ebar.clone()], sig.e, &mut dx[r.ebar.clone()]);
        self.ctrl.zeta.derivative(&x[r.zeta.clone()], &self.omega, &mut dx[r.zeta.clone()]);
        self.ctrl.h.derivative(&x[r.eta.clone()], sig.theta_bar_omega, &mut dx[r.eta.clone()]);
        let (d_theta, d_upsilon) = dx[r.theta.start..r.upsilon.end].split_at_mut(r.theta.len());
        if let Err(e) = self.ls.derivatives(
            &x[r.upsilon.clone()],
            &self.regressor,
            sig.eps_bar,
            self.beta1,
            self.beta2,
            d_theta,
            d_upsilon,
        ) {
            self.fault = Some(e.to_string());
            dx.fill(f64::NAN);
        }
    }

    fn end_step(&mut self, x: &mut [f64]) {
        let p = self.r.theta.len();
        symmetrize(&mut x[self.r.upsilon.clone()], p);
    }

    fn observe(&mut self, t: f64, x: &[f64], with_eigen: bool) -> Result<Sample, SimError> {
        let sig = self.evaluate(t, x)?;
        let s = &self.ctrl.structure;
        let params = &x[self.r.theta.clone()];
        let (rho, lambda) = (params[s.rho_index()], params[s.lambda_index()]);
        let (margin_u, margin_lambda) = singularity_margins(self.sigma, rho, lambda);
        let upsilon = &x[self.r.upsilon.clone()];
        let p = params.len();
        let up_phi: f64 = (0..p)
            .map(|i| self.regressor[i] * (0..p).map(|j| upsilon[i * p + j] * self.regressor[j]).sum::<f64>())
            .sum();
        let m2 = 1.0 + self.beta1 * self.regressor.iter().map(|v| v * v).sum::<f64>() + self.beta2 * up_phi;
        let mut v = None;
        let mut min_eig = None;
        if with_eigen {
            let up = DMatrix::from_row_slice(p, p, upsilon);
            min_eig = Some(up.clone().symmetric_eigen().eigenvalues.min());
            if let Some(ts) = &self.theta_star {
                let err = DVector::from_iterator(p, params.iter().zip(ts).map(|(a, b)| a - b));
                v = up.cholesky().map(|c| err.dot(&c.solve(&err)));
            }
        }
        Ok(Sample {
            t,
            y: sig.y,
            y_star: sig.y_star,
            e: sig.e,
            u: sig.u,
            sigma: self.sigma,
            rho,
            lambda,
            eps_bar: sig.eps_bar,
            m_norm: m2.sqrt(),
            margin_u,
            margin_lambda,
            v,
            min_eig_upsilon: min_eig,
        })
    }

    fn sigma(&self) -> f64 {
        self.sigma
    }

    fn params<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.r.theta.clone()]
    }

    fn take_fault(&mut self) -> Option<String> {
        self.fault.take()
    }

    /// `(V, ‖Θ̃ − ϒϒ0⁻¹Θ̃(0)‖, |ε̄ − Θ̃ᵀΦ|/(1+|ε̄|))`; `V` is NaN when `ϒ` is
    /// not numerically positive definite.
    fn step_check(&mut self, t: f64, x: &[f64]) -> Option<(f64, f64, f64)> {
        let ts = self.theta_star.clone()?;
        let w = self.upsilon0_inv_err0.clone()?;
        let sig = self.evaluate(t, x).ok()?;
        let params = &x[self.r.theta.clone()];
        let p = params.len();
        let upsilon = &x[self.r.upsilon.clone()];
        let err: Vec<f64> = params.iter().zip(&ts).map(|(a, b)| a - b).collect();
        let predicted: f64 = err.iter().zip(&self.regressor).map(|(a, b)| a * b).sum();
        let regression = (sig.eps_bar - predicted).abs() / (1.0 + sig.eps_bar.abs());
        let solution = (0..p)
            .map(|i| {
                let uw: f64 = (0..p).map(|j| upsilon[i * p + j] * w[j]).sum();
                (err[i] - uw).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let up = DMatrix::from_row_slice(p, p, upsilon);
        let errv = DVector::from_vec(err);
        let v = up.cholesky().map_or(f64::NAN, |c| errv.dot(&c.solve(&errv)));
        Some((v, solution, regression))
    }
}

/// The traditional gradient MRAC wired to the plant and reference model.
pub struct BaselineLoop {
    ctrl: BaselineController,
    plant: CompanionFilter,
    reference: CompanionFilter,
    signal: ReferenceSignal,
    gains: BaselineGains,
    layout: StateLayout,
    r: BaselineRanges,
    theta0: Vec<f64>,
    chi0: f64,
    phi: Vec<f64>,
    varphi: Vec<f64>,
    fault: Option<String>,
}

#[derive(Debug, Clone)]
struct BaselineRanges {
    plant: Range<usize>,
    reference: Range<usize>,
    phi1: Range<usize>,
    phi2: Range<usize>,
    varphi: Range<usize>,
    mu: Range<usize>,
    theta: Range<usize>,
    chi: usize,
}

#[derive(Debug, Clone, Copy)]
struct BaselineSignals {
    y: f64,
    y_star: f64,
    e: f64,
    r: f64,
    u: f64,
    eps: f64,
    mu: f64,
    chi: f64,
    theta4: f64,
}

impl BaselineLoop {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        cfg.baseline.gains.validate()?;
        let n = cfg.plant.n();
        let ctrl = BaselineController::new(n, &cfg.omega, &cfg.reference.rm);
        let plant = CompanionFilter::from_tf(&cfg.plant.transfer()).expect("plant is strictly proper");
        let reference = CompanionFilter::from_tf(&RationalTf::all_pole(cfg.reference.rm.clone()).expect("Rm is nonzero"))
            .expect("all-pole filter is proper");
        let (theta0, chi0) = match &cfg.baseline.init {
            BaselineInit::Multipliers { theta, chi } => {
                let g = cfg.matched_gains()?;
                (g.theta().iter().map(|v| theta * v).collect::<Vec<_>>(), chi * cfg.plant.kp)
            }
            BaselineInit::Explicit { theta, chi } => (theta.clone(), *chi),
        };
        if theta0.len() != 2 * n {
            return Err(SimError::Config(format!("baseline theta0 has {} entries, expected 2n = {}", theta0.len(), 2 * n)));
        }
        let layout = StateLayout::build(&[
            ("plant", plant.order()),
            ("reference", reference.order()),
            ("phi1", ctrl.regressor.order()),
            ("phi2", ctrl.regressor.order()),
            ("varphi", ctrl.varphi.state_len()),
            ("mu", ctrl.mu.order()),
            ("theta", 2 * n),
            ("chi", 1),
        ]);
        let get = |n: &str| layout.range(n).expect("block exists");
        let r = BaselineRanges {
            plant: get("plant"),
            reference: get("reference"),
            phi1: get("phi1"),
            phi2: get("phi2"),
            varphi: get("varphi"),
            mu: get("mu"),
            theta: get("theta"),
            chi: get("chi").start,
        };
        Ok(Self {
            ctrl,
            plant,
            reference,
            signal: cfg.reference.signal.clone(),
            gains: cfg.baseline.gains,
            layout,
            r,
            theta0,
            chi0,
            phi: vec![0.0; 2 * n],
            varphi: vec![0.0; 2 * n],
            fault: None,
        })
    }

    fn evaluate(&mut self, t: f64, x: &[f64]) -> BaselineSignals {
        let r = &self.r;
        let y = self.plant.state_output(&x[r.plant.clone()]);
        let y_star = self.reference.state_output(&x[r.reference.clone()]);
        let e = y - y_star;
        let rv = self.signal.eval(t);
        assemble_phi_into(&x[r.phi1.clone()], &x[r.phi2.clone()], y, rv, &mut self.phi);
        let theta = &x[r.theta.clone()];
        let u = baseline_control(theta, &self.phi);
        self.ctrl.varphi.state_outputs(&x[r.varphi.clone()], &mut self.varphi);
        let filtered = self.ctrl.mu.state_output(&x[r.mu.clone()]);
        let chi = x[r.chi];
        let (eps, mu) = baseline_estimation_error(e, theta, chi, &self.varphi, filtered);
        BaselineSignals { y, y_star, e, r: rv, u, eps, mu, chi, theta4: theta[theta.len() - 1] }
    }
}

impl ClosedLoop for BaselineLoop {
    fn layout(&self) -> &StateLayout {
        &self.layout
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.dimension()];
        x[self.r.theta.clone()].copy_from_slice(&self.theta0);
        x[self.r.chi] = self.chi0;
        x
    }

    fn begin_step(&mut self, _x: &[f64]) {}

    fn derivative(&mut self, t: f64, x: &[f64], dx: &mut [f64]) {
        let sig = self.evaluate(t, x);
        let r = self.r.clone();
        self.plant.derivative(&x[r.plant.clone()], sig.u, &mut dx[r.plant.clone()]);
        self.reference.derivative(&x[r.reference.clone()], sig.r, &mut dx[r.reference.clone()]);
        self.ctrl.regressor.derivative(&x[r.phi1.clone()], sig.u, &mut dx[r.phi1.clone()]);
        self.ctrl.regressor.derivative(&x[r.phi2.clone()], sig.y, &mut dx[r.phi2.clone()]);
        self.ctrl.varphi.derivative(&x[r.varphi.clone()], &self.phi, &mut dx[r.varphi.clone()]);
        self.ctrl.mu.derivative(&x[r.mu.clone()], sig.u, &mut dx[r.mu.clone()]);
        if self.gains.adapt {
            dx[r.chi] = baseline_update(sig.eps, &self.varphi, sig.mu, &self.gains, &mut dx[r.theta.clone()]);
        } else {
            dx[r.theta.clone()].fill(0.0);
            dx[r.chi] = 0.0;
        }
    }

    fn end_step(&mut self, _x: &mut [f64]) {}

    fn observe(&mut self, t: f64, x: &[f64], _with_eigen: bool) -> Result<Sample, SimError> {
        let sig = self.evaluate(t, x);
        let m_norm = if self.gains.normalized {
            (1.0 + self.varphi.iter().map(|v| v * v).sum::<f64>() + sig.mu * sig.mu).sqrt()
        } else {
            1.0
        };
        // No divisor in the traditional law; the margins are reported as 1.
        Ok(Sample {
            t,
            y: sig.y,
            y_star: sig.y_star,
            e: sig.e,
            u: sig.u,
            sigma: self.gains.sign_kp,
            rho: sig.chi,
            lambda: sig.theta4,
            eps_bar: sig.eps,
            m_norm,
            margin_u: 1.0,
            margin_lambda: 1.0,
            v: None,
            min_eig_upsilon: None,
        })
    }

    fn sigma(&self) -> f64 {
        self.gains.sign_kp
    }

    fn params<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[self.r.theta.start..=self.r.chi]
    }

    fn take_fault(&mut self) -> Option<String> {
        self.fault.take()
    }
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub t: f64,
    pub reason: String,
}

/// Quantities accumulated at every integration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub steps_completed: usize,
    pub sigma_switch_count: usize,
    pub last_switch_time: Option<f64>,
    pub max_abs_u: f64,
    pub min_margin_u: f64,
    pub min_abs_margin_lambda: f64,
    pub v_monotonicity_violations: usize,
    /// Largest per-step growth of `V` relative to `1 + V`.
    pub max_v_increase: f64,
    pub max_solution_residual: f64,
    pub max_regression_residual: f64,
    pub not_positive_definite_steps: usize,
    pub theta_dot_l2_sq: f64,
    pub theta_half: Vec<f64>,
    pub theta_final: Vec<f64>,
}

impl Default for StepDiagnostics {
    fn default() -> Self {
        Self {
            steps_completed: 0,
            sigma_switch_count: 0,
            last_switch_time: None,
            max_abs_u: 0.0,
            min_margin_u: f64::INFINITY,
            min_abs_margin_lambda: f64::INFINITY,
            v_monotonicity_violations: 0,
            max_v_increase: f64::NEG_INFINITY,
            max_solution_residual: 0.0,
            max_regression_residual: 0.0,
            not_positive_definite_steps: 0,
            theta_dot_l2_sq: 0.0,
            theta_half: Vec::new(),
            theta_final: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSnapshot {
    pub t: f64,
    pub theta: Vec<f64>,
}

/// Sampled output of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub controller: ControllerKind,
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    pub samples: Vec<Sample>,
    pub theta_snapshots: Vec<ThetaSnapshot>,
    pub theta_star: Option<Vec<f64>>,
    pub state_dimension: usize,
    pub diagnostics: StepDiagnostics,
    pub abort: Option<Abort>,
}

/// Builds the closed loop described by `cfg`.
pub fn assemble_closed_loop(cfg: &ScenarioConfig) -> Result<Box<dyn ClosedLoop>, SimError> {
    Ok(match cfg.controller {
        ControllerKind::Proposed => Box::new(ProposedLoop::new(cfg)?),
        ControllerKind::Baseline => Box::new(BaselineLoop::new(cfg)?),
    })
}

/// Integrates the scenario from zero filter states to `t_final`.
///
/// Construction problems are errors; divergence is not: a non-finite state
/// stops the run and is reported in [`RunRecord::abort`].
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunRecord, SimError> {
    let mut lp = assemble_closed_loop(cfg)?;
    let theta_star = match cfg.controller {
        ControllerKind::Proposed => cfg.matched_gains().ok().map(|g| g.theta_star_full()),
        ControllerKind::Baseline => cfg.matched_gains().ok().map(|g| {
            let mut v = g.theta();
            v.push(cfg.plant.kp);
            v
        }),
    };
    run_loop(lp.as_mut(), cfg, theta_star)
}

/// Runs an assembled loop; exposed so callers can tweak a loop before
/// integrating it.
pub fn run_loop(lp: &mut dyn ClosedLoop, cfg: &ScenarioConfig, theta_star: Option<Vec<f64>>) -> Result<RunRecord, SimError> {
    let dt = cfg.sim.dt;
    let steps = cfg.sim.steps();
    let stride = cfg.sim.record_stride;
    let mut x = lp.initial_state();
    let dim = x.len();
    let mut rk = Rk4::new(dim);
    let mut diag = StepDiagnostics::default();
    let mut samples = Vec::with_capacity(steps / stride + 1);
    let mut snapshots = Vec::with_capacity(steps / stride + 1);
    let mut abort = None;
    let mut prev_sigma: Option<f64> = None;
    let mut prev_v: Option<f64> = None;
    let theta_range = {
        let p = lp.params(&x);
        let start = p.as_ptr() as usize - x.as_ptr() as usize;
        let start = start / std::mem::size_of::<f64>();
        start..start + p.len()
    };

    for k in 0..=steps {
        let t = k as f64 * dt;
        lp.begin_step(&x);
        let sigma = lp.sigma();
        if let Some(prev) = prev_sigma {
            if prev != sigma {
                diag.sigma_switch_count += 1;
                diag.last_switch_time = Some(t);
            }
        }
        prev_sigma = Some(sigma);

        let recording = k % stride == 0;
        let sample = match lp.observe(t, &x, recording) {
            Ok(s) => s,
            Err(e) => {
                abort = Some(Abort { t, reason: e.to_string() });
                break;
            }
        };
        if !sample.is_finite() {
            abort = Some(Abort { t, reason: "non-finite signal".into() });
            if recording {
                samples.push(sample);
            }
            break;
        }
        diag.max_abs_u = diag.max_abs_u.max(sample.u.abs());
        diag.min_margin_u = diag.min_margin_u.min(sample.margin_u);
        diag.min_abs_margin_lambda = diag.min_abs_margin_lambda.min(sample.margin_lambda.abs());

        if let Some((v, sol, reg)) = lp.step_check(t, &x) {
            diag.max_solution_residual = diag.max_solution_residual.max(sol);
            diag.max_regression_residual = diag.max_regression_residual.max(reg);
            if v.is_nan() {
                diag.not_positive_definite_steps += 1;
            } else {
                if let Some(pv) = prev_v {
                    let growth = (v - pv) / (1.0 + pv);
                    diag.max_v_increase = diag.max_v_increase.max(growth);
                    if growth > V_STEP_TOL {
                        diag.v_monotonicity_violations += 1;
                    }
                }
                prev_v = Some(v);
            }
        }
        if let Some(eig) = sample.min_eig_upsilon {
            if eig <= 0.0 {
                diag.not_positive_definite_steps += 1;
            }
        }
        if recording {
            samples.push(sample);
            snapshots.push(ThetaSnapshot { t, theta: x[theta_range.clone()].to_vec() });
        }
        if k == steps / 2 {
            diag.theta_half = x[theta_range.clone()].to_vec();
        }
        if k == steps {
            break;
        }

        let result = rk.step(|t, x, dx| lp.derivative(t, x, dx), t, &mut x, dt);
        if let Err(e) = result {
            let reason = lp.take_fault().unwrap_or_else(|| e.to_string());
            abort = Some(Abort { t, reason });
            break;
        }
        let theta_dot_sq: f64 = rk.first_stage()[theta_range.clone()].iter().map(|v| v * v).sum();
        diag.theta_dot_l2_sq += theta_dot_sq * dt;
        lp.end_step(&mut x);
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            abort = Some(Abort { t: t + dt, reason: format!("non-finite state component {i}") });
            break;
        }
        diag.steps_completed += 1;
    }
    diag.theta_final = x[theta_range].to_vec();

    Ok(RunRecord {
        scenario: cfg.name.clone(),
        controller: cfg.controller,
        dt,
        t_final: cfg.sim.t_final,
        record_stride: stride,
        samples,
        theta_snapshots: snapshots,
        theta_star,
        state_dimension: dim,
        diagnostics: diag,
        abort,
    })
}

/// Summary statistics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rms_e_final_window: f64,
    pub rms_ystar_final_window: f64,
    pub tracking_ratio: f64,
    pub sigma_switch_count: usize,
    pub sigma_final: f64,
    /// Time of the last tuning-gain switch, if any.
    pub last_switch_time: Option<f64>,
    pub max_abs_u: f64,
    pub min_margin_u: f64,
    pub min_abs_margin_lambda: f64,
    /// `‖Θ(t_f) − Θ(t_f/2)‖`.
    pub theta_settling: f64,
    /// `theta_settling / (1 + ‖Θ(t_f/2)‖)`.
    pub theta_settling_relative: f64,
    pub v_monotonicity_violations: usize,
    pub max_v_increase: f64,
    pub theta_dot_l2_sq: f64,
    pub max_solution_residual: f64,
    pub max_regression_residual: f64,
    pub min_eig_upsilon: Option<f64>,
    pub covariance_collapse: bool,
    pub all_finite: bool,
    pub aborted: bool,
    pub abort_reason: Option<String>,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn compute_metrics(record: &RunRecord) -> Metrics {
    let d = &record.diagnostics;
    let t_end = record.samples.last().map_or(0.0, |s| s.t);
    let window_start = (1.0 - FINAL_WINDOW) * t_end;
    let window = || record.samples.iter().filter(move |s| s.t >= window_start);
    let rms_e = rms(window().map(|s| s.e));
    let rms_ys = rms(window().map(|s| s.y_star));
    let tracking_ratio = if rms_e == 0.0 { 0.0 } else { rms_e / rms_ys };

    let sample_switches = record.samples.windows(2).filter(|w| w[0].sigma != w[1].sigma).count();
    let (theta_settling, theta_settling_relative) = if d.theta_half.is_empty() || d.theta_final.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let diff: Vec<f64> = d.theta_final.iter().zip(&d.theta_half).map(|(a, b)| a - b).collect();
        let s = norm(&diff);
        (s, s / (1.0 + norm(&d.theta_half)))
    };
    let min_eig = record
        .samples
        .iter()
        .filter_map(|s| s.min_eig_upsilon)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    let min_margin_u = record.samples.iter().map(|s| s.margin_u).fold(d.min_margin_u, f64::min);
    let min_abs_margin_lambda = record
        .samples
        .iter()
        .map(|s| s.margin_lambda.abs())
        .fold(d.min_abs_margin_lambda, f64::min);
    let max_abs_u = record.samples.iter().map(|s| s.u.abs()).fold(d.max_abs_u, f64::max);

    Metrics {
        rms_e_final_window: rms_e,
        rms_ystar_final_window: rms_ys,
        tracking_ratio,
        sigma_switch_count: d.sigma_switch_count.max(sample_switches),
        sigma_final: record.samples.last().map_or(f64::NAN, |s| s.sigma),
        last_switch_time: d.last_switch_time,
        max_abs_u,
        min_margin_u,
        min_abs_margin_lambda,
        theta_settling,
        theta_settling_relative,
        v_monotonicity_violations: d.v_monotonicity_violations,
        max_v_increase: d.max_v_increase,
        theta_dot_l2_sq: d.theta_dot_l2_sq,
        max_solution_residual: d.max_solution_residual,
        max_regression_residual: d.max_regression_residual,
        min_eig_upsilon: min_eig,
        covariance_collapse: min_eig.map_or(false, |e| e < COLLAPSE_EIG),
        all_finite: record.samples.iter().all(Sample::is_finite),
        aborted: record.abort.is_some(),
        abort_reason: record.abort.as_ref().map(|a| a.reason.clone()),
    }
}
