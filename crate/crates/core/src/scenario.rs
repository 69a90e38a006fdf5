//! TOML scenario files.
//!
//! Polynomials are written as coefficient arrays in descending powers, so
//! `[1, 21, 108]` is `s^2 + 21s + 108`. Validation failures are reported with
//! the line of the offending key when it can be located.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineGains;
use crate::controller::ControllerError;
use crate::matching::MatchingError;
use crate::poly::Polynomial;
use crate::sim::{
    boeing_baseline_scenario, boeing_scenario, AdaptationSpec, BaselineInit, BaselineSpec, BoeingCase, ControllerKind,
    PlantModel, ReferenceModel, ReferenceSignal, ScenarioConfig, SimError, SimSettings, Sinusoid, Theta0,
    ThetaMultipliers,
};

/// Library default for `ϒ0 = scale · I` when a file omits it.
pub const DEFAULT_UPSILON0_SCALE: f64 = 1e3;

/// Names accepted in place of a scenario path.
pub const BUILTIN_SCENARIOS: [&str; 3] = ["boeing-case-i", "boeing-case-ii", "boeing-baseline"];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub source_name: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.source_name, line, self.message),
            None => write!(f, "{}: {}", self.source_name, self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theta0Mode {
    Explicit,
    Multipliers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    pub p: Vec<f64>,
    pub z: Vec<f64>,
    pub kp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceFile {
    pub rm: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub sinusoids: Vec<Sinusoid>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_den: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationFile {
    #[serde(default = "one")]
    pub beta1: f64,
    #[serde(default = "one")]
    pub beta2: f64,
    #[serde(default = "default_upsilon0")]
    pub upsilon0_scale: f64,
    #[serde(default = "default_mode")]
    pub theta0_mode: Theta0Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<ThetaMultipliers>,
}

impl Default for AdaptationFile {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1.0,
            upsilon0_scale: DEFAULT_UPSILON0_SCALE,
            theta0_mode: Theta0Mode::Multipliers,
            theta0: None,
            multipliers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineFile {
    /// Defaults to the true sign of `kp`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_kp: Option<f64>,
    #[serde(default = "ten")]
    pub gamma_theta: f64,
    #[serde(default = "ten")]
    pub gamma_chi: f64,
    #[serde(default)]
    pub normalized: bool,
    #[serde(default = "yes")]
    pub adapt: bool,
    #[serde(default = "default_mode")]
    pub theta0_mode: Theta0Mode,
    /// `θ(0) = theta_multiplier · θ*`.
    #[serde(default = "one")]
    pub theta_multiplier: f64,
    /// `χ(0) = chi_multiplier · kp`.
    #[serde(default = "one")]
    pub chi_multiplier: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi0: Option<f64>,
}

impl Default for BaselineFile {
    fn default() -> Self {
        Self {
            sign_kp: None,
            gamma_theta: 10.0,
            gamma_chi: 10.0,
            normalized: false,
            adapt: true,
            theta0_mode: Theta0Mode::Multipliers,
            theta_multiplier: 1.0,
            chi_multiplier: 1.0,
            theta0: None,
            chi0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimFile {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

impl Default for SimFile {
    fn default() -> Self {
        let s = SimSettings::default();
        Self { dt: s.dt, t_final: s.t_final, record_stride: s.record_stride }
    }
}

fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}
fn yes() -> bool {
    true
}
fn default_upsilon0() -> f64 {
    DEFAULT_UPSILON0_SCALE
}
fn default_mode() -> Theta0Mode {
    Theta0Mode::Multipliers
}
fn default_dt() -> f64 {
    SimSettings::default().dt
}
fn default_t_final() -> f64 {
    SimSettings::default().t_final
}
fn default_stride() -> usize {
    SimSettings::default().record_stride
}
fn default_controller() -> ControllerKind {
    ControllerKind::Proposed
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    pub plant: PlantFile,
    pub reference: ReferenceFile,
    #[serde(default)]
    pub structure: StructureFile,
    #[serde(default)]
    pub adaptation: AdaptationFile,
    #[serde(default)]
    pub baseline: BaselineFile,
    #[serde(default)]
    pub sim: SimFile,
}

/// Command-line adjustments applied after parsing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub stride: Option<usize>,
    pub controller: Option<ControllerKind>,
    pub theta0_mode: Option<Theta0Mode>,
}

impl ScenarioFile {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.dt {
            self.sim.dt = v;
        }
        if let Some(v) = o.t_final {
            self.sim.t_final = v;
        }
        if let Some(v) = o.stride {
            self.sim.record_stride = v;
        }
        if let Some(v) = o.controller {
            self.controller = v;
        }
        if let Some(v) = o.theta0_mode {
            self.adaptation.theta0_mode = v;
            self.baseline.theta0_mode = v;
        }
    }

    /// Canonical TOML text; parsing it back yields an identical scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    /// Fills every optional field with the value the resolver would use.
    pub fn canonicalize(&mut self) {
        let n = self.plant.p.len().saturating_sub(1);
        if self.structure.omega.is_none() {
            self.structure.omega = Some(Polynomial::binomial_power(1.0, n.saturating_sub(1)).descending());
        }
        if self.structure.h_den.is_none() {
            self.structure.h_den = Some(self.reference.rm.clone());
        }
        if self.adaptation.theta0_mode == Theta0Mode::Multipliers && self.adaptation.multipliers.is_none() {
            self.adaptation.multipliers = Some(unit_multipliers());
        }
        if self.baseline.sign_kp.is_none() {
            self.baseline.sign_kp = Some(self.plant.kp.signum());
        }
    }
}

fn unit_multipliers() -> ThetaMultipliers {
    ThetaMultipliers { theta1: 1.0, theta2: 1.0, theta3: 1.0, theta4: 1.0, theta_p: 1.0, rho: 1.0, lambda: 1.0 }
}

/// 1-based line of `key = ...` inside `[section]` (top level when `section`
/// is empty).
pub fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn polynomial_key(name: &str) -> (&'static str, &'static str) {
    match name {
        "P" => ("plant", "p"),
        "Z" => ("plant", "z"),
        "Omega" => ("structure", "omega"),
        "Rm" => ("reference", "rm"),
        _ => ("structure", "h_den"),
    }
}

fn error_location(err: &SimError) -> Option<(&'static str, &'static str)> {
    match err {
        SimError::Controller(ControllerError::NotHurwitz { name, .. })
        | SimError::Controller(ControllerError::NotMonic { name })
        | SimError::Controller(ControllerError::Degree { name, .. })
        | SimError::Matching(MatchingError::NotHurwitz { name, .. })
        | SimError::Matching(MatchingError::NotMonic { name, .. })
        | SimError::Matching(MatchingError::Degree { name, .. }) => Some(polynomial_key(name)),
        SimError::Matching(MatchingError::ZeroGain) => Some(("plant", "kp")),
        SimError::Baseline(_) => Some(("baseline", "sign_kp")),
        _ => None,
    }
}

fn polynomial(coeffs: &[f64], what: &str) -> Result<Polynomial, String> {
    if coeffs.is_empty() {
        return Err(format!("{what} needs at least one coefficient"));
    }
    if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
        return Err(format!("{what} coefficient {i} is not finite"));
    }
    Ok(Polynomial::from_descending(coeffs))
}

impl ScenarioFile {
    /// Resolves the file into a validated [`ScenarioConfig`].
    pub fn resolve(&self) -> Result<ScenarioConfig, (Option<(&'static str, &'static str)>, String)> {
        let at = |sec: &'static str, key: &'static str| move |m: String| (Some((sec, key)), m);
        let p = polynomial(&self.plant.p, "plant.p").map_err(at("plant", "p"))?;
        let z = polynomial(&self.plant.z, "plant.z").map_err(at("plant", "z"))?;
        let rm = polynomial(&self.reference.rm, "reference.rm").map_err(at("reference", "rm"))?;
        let plant = PlantModel::new(p, z, self.plant.kp).map_err(|e| (error_location(&e).or(Some(("plant", "p"))), e.to_string()))?;
        let n = plant.n();
        let omega = match &self.structure.omega {
            Some(c) => polynomial(c, "structure.omega").map_err(at("structure", "omega"))?,
            None => Polynomial::binomial_power(1.0, n - 1),
        };
        let h_den = match &self.structure.h_den {
            Some(c) => polynomial(c, "structure.h_den").map_err(at("structure", "h_den"))?,
            None => rm.clone(),
        };
        let a = &self.adaptation;
        let theta0 = match a.theta0_mode {
            Theta0Mode::Explicit => Theta0::Explicit(
                a.theta0
                    .clone()
                    .ok_or_else(|| (Some(("adaptation", "theta0_mode")), "explicit mode needs adaptation.theta0".to_string()))?,
            ),
            Theta0Mode::Multipliers => Theta0::Multipliers(a.multipliers.unwrap_or_else(unit_multipliers)),
        };
        let b = &self.baseline;
        let init = match b.theta0_mode {
            Theta0Mode::Explicit => BaselineInit::Explicit {
                theta: b
                    .theta0
                    .clone()
                    .ok_or_else(|| (Some(("baseline", "theta0_mode")), "explicit mode needs baseline.theta0".to_string()))?,
                chi: b.chi0.ok_or_else(|| (Some(("baseline", "theta0_mode")), "explicit mode needs baseline.chi0".to_string()))?,
            },
            Theta0Mode::Multipliers => BaselineInit::Multipliers { theta: b.theta_multiplier, chi: b.chi_multiplier },
        };
        let cfg = ScenarioConfig {
            name: self.name.clone(),
            reference: ReferenceModel {
                rm,
                signal: ReferenceSignal { offset: self.reference.offset, sinusoids: self.reference.sinusoids.clone() },
            },
            controller: self.controller,
            omega,
            h_den,
            adaptation: AdaptationSpec {
                beta1: a.beta1,
                beta2: a.beta2,
                upsilon0_scale: a.upsilon0_scale,
                theta0,
            },
            baseline: BaselineSpec {
                gains: BaselineGains {
                    sign_kp: b.sign_kp.unwrap_or(plant.kp.signum()),
                    gamma_theta: b.gamma_theta,
                    gamma_chi: b.gamma_chi,
                    normalized: b.normalized,
                    adapt: b.adapt,
                },
                init,
            },
            sim: SimSettings { dt: self.sim.dt, t_final: self.sim.t_final, record_stride: self.sim.record_stride },
            plant,
        };
        cfg.validate().map_err(|e| {
            let loc = error_location(&e).or(match &e {
                SimError::Config(m) if m.contains("dt") => Some(("sim", "dt")),
                SimError::Config(m) if m.contains("stride") => Some(("sim", "record_stride")),
                _ => None,
            });
            (loc, e.to_string())
        })?;
        if a.upsilon0_scale <= 0.0 || !a.upsilon0_scale.is_finite() {
            return Err((Some(("adaptation", "upsilon0_scale")), format!("upsilon0_scale must be positive, got {}", a.upsilon0_scale)));
        }
        if a.beta1 <= 0.0 || a.beta2 <= 0.0 {
            return Err((Some(("adaptation", "beta1")), format!("beta1 and beta2 must be positive, got {} and {}", a.beta1, a.beta2)));
        }
        Ok(cfg)
    }
}

/// Inverse of [`ScenarioFile::resolve`] for configs built in code.
pub fn to_file(cfg: &ScenarioConfig) -> ScenarioFile {
    let (theta0_mode, theta0, multipliers) = match &cfg.adaptation.theta0 {
        Theta0::Explicit(v) => (Theta0Mode::Explicit, Some(v.clone()), None),
        Theta0::Multipliers(m) => (Theta0Mode::Multipliers, None, Some(*m)),
    };
    let g = &cfg.baseline.gains;
    let mut baseline = BaselineFile {
        sign_kp: Some(g.sign_kp),
        gamma_theta: g.gamma_theta,
        gamma_chi: g.gamma_chi,
        normalized: g.normalized,
        adapt: g.adapt,
        ..Default::default()
    };
    match &cfg.baseline.init {
        BaselineInit::Multipliers { theta, chi } => {
            baseline.theta_multiplier = *theta;
            baseline.chi_multiplier = *chi;
        }
        BaselineInit::Explicit { theta, chi } => {
            baseline.theta0_mode = Theta0Mode::Explicit;
            baseline.theta0 = Some(theta.clone());
            baseline.chi0 = Some(*chi);
        }
    }
    ScenarioFile {
        name: cfg.name.clone(),
        controller: cfg.controller,
        plant: PlantFile { p: cfg.plant.p.descending(), z: cfg.plant.z.descending(), kp: cfg.plant.kp },
        reference: ReferenceFile {
            rm: cfg.reference.rm.descending(),
            offset: cfg.reference.signal.offset,
            sinusoids: cfg.reference.signal.sinusoids.clone(),
        },
        structure: StructureFile { omega: Some(cfg.omega.descending()), h_den: Some(cfg.h_den.descending()) },
        adaptation: AdaptationFile {
            beta1: cfg.adaptation.beta1,
            beta2: cfg.adaptation.beta2,
            upsilon0_scale: cfg.adaptation.upsilon0_scale,
            theta0_mode,
            theta0,
            multipliers,
        },
        baseline,
        sim: SimFile { dt: cfg.sim.dt, t_final: cfg.sim.t_final, record_stride: cfg.sim.record_stride },
    }
}

/// Built-in scenario by name; underscores are accepted for dashes.
pub fn builtin(name: &str) -> Option<ScenarioFile> {
    let cfg = match name.replace('_', "-").as_str() {
        "boeing-case-i" => boeing_scenario(BoeingCase::I),
        "boeing-case-ii" => boeing_scenario(BoeingCase::II),
        "boeing-baseline" => boeing_baseline_scenario(),
        _ => return None,
    };
    Some(to_file(&cfg))
}

/// Parses scenario text. `source_name` labels error messages.
pub fn parse_scenario(text: &str, source_name: &str) -> Result<ScenarioFile, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError {
        source_name: source_name.to_string(),
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().to_string(),
    })
}

/// Resolves parsed text, anchoring validation errors to the key's line.
pub fn resolve_text(file: &ScenarioFile, text: Option<&str>, source_name: &str) -> Result<ScenarioConfig, ScenarioError> {
    file.resolve().map_err(|(loc, message)| ScenarioError {
        source_name: source_name.to_string(),
        line: loc.and_then(|(sec, key)| text.and_then(|t| locate_key(t, sec, key))),
        message,
    })
}

/// A scenario named on the command line: a built-in name or a file path.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub text: Option<String>,
    pub source_name: String,
}

pub fn load(spec: &str) -> Result<LoadedScenario, ScenarioError> {
    let path = Path::new(spec);
    if !path.exists() {
        if let Some(file) = builtin(spec) {
            return Ok(LoadedScenario { file, text: None, source_name: spec.to_string() });
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        source_name: spec.to_string(),
        line: None,
        message: format!("cannot read scenario ({e}); built-in names are {}", BUILTIN_SCENARIOS.join(", ")),
    })?;
    let file = parse_scenario(&text, spec)?;
    Ok(LoadedScenario { file, text: Some(text), source_name: spec.to_string() })
}

impl LoadedScenario {
    /// Applies overrides and resolves. Line numbers refer to the original
    /// file, so they are dropped once an override could have moved the cause.
    pub fn resolve(&mut self, overrides: &Overrides) -> Result<ScenarioConfig, ScenarioError> {
        self.file.apply(overrides);
        resolve_text(&self.file, self.text.as_deref(), &self.source_name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "second-order"

[plant]
p = [1.0, 3.0, 3.0]
z = [1.0, 1.0]
kp = 2.0

[reference]
rm = [1.0, 4.0]
sinusoids = [{ amplitude = 1.0, frequency = 0.5 }]
"#;

    #[test]
    fn minimal_file_uses_defaults() {
        let f = parse_scenario(MINIMAL, "t").unwrap();
        let cfg = resolve_text(&f, Some(MINIMAL), "t").unwrap();
        assert_eq!(cfg.omega, Polynomial::from_descending(&[1.0, 1.0]));
        assert_eq!(cfg.h_den, cfg.reference.rm);
        assert_eq!(cfg.sim, SimSettings::default());
        assert_eq!(cfg.adaptation.upsilon0_scale, DEFAULT_UPSILON0_SCALE);
        assert_eq!(cfg.baseline.gains.sign_kp, 1.0);
        assert_eq!(cfg.controller, ControllerKind::Proposed);
    }

    #[test]
    fn unstable_omega_reports_line() {
        let text = MINIMAL.replace("[reference]", "[structure]\nomega = [1.0, -1.0]\n\n[reference]");
        let f = parse_scenario(&text, "bad.toml").unwrap();
        let err = resolve_text(&f, Some(&text), "bad.toml").unwrap_err();
        assert!(err.message.contains("Hurwitz"), "{err}");
        assert_eq!(err.line, locate_key(&text, "structure", "omega"));
        assert!(err.line.is_some());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = MINIMAL.replace("kp = 2.0", "kp = 2.0\ngain = 3.0");
        let err = parse_scenario(&text, "x").unwrap_err();
        assert_eq!(err.line, Some(8));
    }

    #[test]
    fn zero_gain_rejected() {
        let text = MINIMAL.replace("kp = 2.0", "kp = 0.0");
        let f = parse_scenario(&text, "x").unwrap();
        let err = resolve_text(&f, Some(&text), "x").unwrap_err();
        assert!(err.message.contains("nonzero"));
        assert_eq!(err.line, Some(7));
    }

    #[test]
    fn builtins_round_trip_through_text() {
        for name in BUILTIN_SCENARIOS {
            let f = builtin(name).unwrap();
            let text = f.to_toml();
            let back = parse_scenario(&text, name).unwrap();
            assert_eq!(back, f);
            let cfg = back.resolve().unwrap();
            assert_eq!(to_file(&cfg), f);
        }
        assert!(builtin("boeing_case_ii").is_some());
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn builtin_resolves_to_code_config() {
        let cfg = builtin("boeing-case-ii").unwrap().resolve().unwrap();
        assert_eq!(cfg, boeing_scenario(BoeingCase::II));
    }

    #[test]
    fn overrides_apply() {
        let mut f = builtin("boeing-case-i").unwrap();
        f.apply(&Overrides { dt: Some(2e-3), stride: Some(5), controller: Some(ControllerKind::Baseline), ..Default::default() });
        let cfg = f.resolve().unwrap();
        assert_eq!((cfg.sim.dt, cfg.sim.record_stride, cfg.controller), (2e-3, 5, ControllerKind::Baseline));
        f.apply(&Overrides { theta0_mode: Some(Theta0Mode::Explicit), ..Default::default() });
        assert!(f.resolve().is_err());
    }

    #[test]
    fn canonical_echo_resolves_identically() {
        let mut f = parse_scenario(MINIMAL, "t").unwrap();
        let cfg = f.resolve().unwrap();
        f.canonicalize();
        let echo = parse_scenario(&f.to_toml(), "echo").unwrap();
        assert_eq!(echo.resolve().unwrap(), cfg);
    }
}
