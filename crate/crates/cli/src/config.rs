//! Experiment configuration: JSON in, validated values out.
//!
//! Validation runs field by field on the raw JSON value so every error names
//! the offending key.

use std::fmt;
use std::path::PathBuf;

use msflow_core::{AlphaSpec, AngleProfile, Forcing, ShapeSpec, SupportCurve};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// JSON schema describing [`ExperimentConfig`].
pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "field `{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialSpec {
    Zero,
    Const(f64),
    /// `c + g1 x1 + g2 x2`.
    Affine([f64; 3]),
    Translator,
    /// Terms `(i, j, c)` of `sum c x1^i x2^j`.
    Polynomial(Vec<(u32, u32, f64)>),
}

impl InitialSpec {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            InitialSpec::Zero | InitialSpec::Translator => 0.0,
            InitialSpec::Const(c) => *c,
            InitialSpec::Affine([c, g1, g2]) => c + g1 * x[0] + g2 * x[1],
            InitialSpec::Polynomial(terms) => {
                terms.iter().map(|(i, j, c)| c * x[0].powi(*i as i32) * x[1].powi(*j as i32)).sum()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Assumptions,
    GradientBound,
    UtExtremes,
    EnergyIdentity,
    MassLaw,
    Oscillation,
    Convergence,
    BoundaryTrace,
    SpeedAgreement,
    RegularizedLimit,
}

impl AuditKind {
    pub const ALL: [AuditKind; 10] = [
        AuditKind::Assumptions,
        AuditKind::GradientBound,
        AuditKind::UtExtremes,
        AuditKind::EnergyIdentity,
        AuditKind::MassLaw,
        AuditKind::Oscillation,
        AuditKind::Convergence,
        AuditKind::BoundaryTrace,
        AuditKind::SpeedAgreement,
        AuditKind::RegularizedLimit,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    pub picard_iterations: usize,
    pub linear_tol: f64,
    pub snapshot_every: usize,
    pub stagnation_threshold: Option<f64>,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings { picard_iterations: 1, linear_tol: 1e-12, snapshot_every: 1000, stagnation_threshold: Some(1e-12) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorSettings {
    pub tol: f64,
    pub max_iterations: usize,
    /// Regularization parameters for the `eps w_eps -> C` experiment.
    pub epsilons: Vec<f64>,
}

impl Default for TranslatorSettings {
    fn default() -> Self {
        TranslatorSettings { tol: 1e-11, max_iterations: 400, epsilons: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: ShapeSpec,
    pub alpha: AlphaSpec,
    pub forcing: Forcing,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub initial: InitialSpec,
    /// Second initial datum for the oscillation audit.
    pub compare_initial: Option<InitialSpec>,
    pub flow: FlowSettings,
    pub translator: TranslatorSettings,
    pub audits: Vec<AuditKind>,
    /// First monitor row of the energy-identity window.
    pub energy_window_start: usize,
    pub prior_run: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

const KEYS: [&str; 16] = [
    "schema_version",
    "domain",
    "alpha",
    "H",
    "h",
    "dt",
    "t_end",
    "initial",
    "compare_initial",
    "flow",
    "translator",
    "audits",
    "energy_window_start",
    "prior_run",
    "output_dir",
    "seed",
];

fn take<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<Option<T>, ConfigError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| ConfigError::new(key, e.to_string())),
    }
}

fn require<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<T, ConfigError> {
    take(obj, key)?.ok_or_else(|| ConfigError::new(key, "missing required field"))
}

fn positive(key: &str, x: f64) -> Result<f64, ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(ConfigError::new(key, format!("must be a positive finite number, got {x}")))
    }
}

fn finite_all(key: &str, xs: impl IntoIterator<Item = f64>) -> Result<(), ConfigError> {
    for x in xs {
        if !x.is_finite() {
            return Err(ConfigError::new(key, "all values must be finite"));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::new("", format!("invalid JSON: {e}")))?;
        let obj = value.as_object().ok_or_else(|| ConfigError::new("", "config must be a JSON object"))?;
        for key in obj.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::new(key, "unknown field"));
            }
        }
        if let Some(v) = take::<u32>(obj, "schema_version")? {
            if v != SCHEMA_VERSION {
                return Err(ConfigError::new("schema_version", format!("unsupported version {v}")));
            }
        }

        let domain: ShapeSpec = require(obj, "domain")?;
        let alpha: AlphaSpec = require(obj, "alpha")?;
        let forcing: Forcing = take(obj, "H")?.unwrap_or_default();
        let h = positive("h", require(obj, "h")?)?;
        let dt = positive("dt", take(obj, "dt")?.unwrap_or(1e-3))?;
        let t_end: f64 = take(obj, "t_end")?.unwrap_or(1.0);
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(ConfigError::new("t_end", format!("must be a nonnegative finite number, got {t_end}")));
        }
        let initial: InitialSpec = take(obj, "initial")?.unwrap_or(InitialSpec::Zero);
        let compare_initial: Option<InitialSpec> = take(obj, "compare_initial")?;
        let flow: FlowSettings = take(obj, "flow")?.unwrap_or_default();
        let translator: TranslatorSettings = take(obj, "translator")?.unwrap_or_default();
        let mut audits: Vec<AuditKind> = take(obj, "audits")?.unwrap_or_else(|| AuditKind::ALL.to_vec());
        audits.sort();
        audits.dedup();
        let energy_window_start: usize = take(obj, "energy_window_start")?.unwrap_or(0);
        let prior_run: Option<PathBuf> = take(obj, "prior_run")?;
        let output_dir: Option<PathBuf> = take(obj, "output_dir")?;
        let seed: u64 = take(obj, "seed")?.unwrap_or(0);

        let cfg = ExperimentConfig {
            domain,
            alpha,
            forcing,
            h,
            dt,
            t_end,
            initial,
            compare_initial,
            flow,
            translator,
            audits,
            energy_window_start,
            prior_run,
            output_dir,
            seed,
        };
        cfg.check_values()?;
        Ok(cfg)
    }

    fn check_values(&self) -> Result<(), ConfigError> {
        match &self.domain {
            ShapeSpec::Circle { r } => finite_all("domain", [*r])?,
            ShapeSpec::Ellipse { a, b } => finite_all("domain", [*a, *b])?,
            ShapeSpec::Support { h0, fourier } => {
                finite_all("domain", std::iter::once(*h0).chain(fourier.iter().flat_map(|t| [t.1, t.2])))?
            }
        }
        match &self.alpha {
            AlphaSpec::Const(a) => finite_all("alpha", [*a])?,
            AlphaSpec::Fourier { a0, terms } => {
                finite_all("alpha", std::iter::once(*a0).chain(terms.iter().flat_map(|t| [t.1, t.2])))?
            }
        }
        match &self.forcing {
            Forcing::Zero => {}
            Forcing::Const(c) | Forcing::Linear(c) => finite_all("H", [*c])?,
            Forcing::Polynomial { terms, p_linear } => finite_all(
                "H",
                terms.iter().map(|t| t.2).chain(p_linear.iter().flat_map(|p| p.iter().copied())),
            )?,
        }
        for (key, init) in [("initial", Some(&self.initial)), ("compare_initial", self.compare_initial.as_ref())] {
            match init {
                Some(InitialSpec::Const(c)) => finite_all(key, [*c])?,
                Some(InitialSpec::Affine(g)) => finite_all(key, g.iter().copied())?,
                Some(InitialSpec::Polynomial(t)) => finite_all(key, t.iter().map(|x| x.2))?,
                _ => {}
            }
        }
        let f = &self.flow;
        if !(1..=5).contains(&f.picard_iterations) {
            return Err(ConfigError::new("flow.picard_iterations", "must be between 1 and 5"));
        }
        if !(f.linear_tol > 0.0 && f.linear_tol <= 1e-6) {
            return Err(ConfigError::new("flow.linear_tol", "must be in (0, 1e-6]"));
        }
        if let Some(s) = f.stagnation_threshold {
            positive("flow.stagnation_threshold", s)?;
        }
        positive("translator.tol", self.translator.tol)?;
        if self.translator.max_iterations == 0 {
            return Err(ConfigError::new("translator.max_iterations", "must be positive"));
        }
        for e in &self.translator.epsilons {
            positive("translator.epsilons", *e)?;
        }
        Ok(())
    }

    /// Domain and angle profile, with construction errors mapped to fields.
    pub fn geometry(&self) -> Result<(SupportCurve, AngleProfile), ConfigError> {
        let curve = msflow_core::build_domain(&self.domain).map_err(|e| ConfigError::new("domain", e.to_string()))?;
        let alpha = AngleProfile::from_spec(&self.alpha).map_err(|e| ConfigError::new("alpha", e.to_string()))?;
        if self.h >= curve.perimeter() / 8.0 {
            return Err(ConfigError::new("h", format!("must be below perimeter / 8 = {}", curve.perimeter() / 8.0)));
        }
        Ok((curve, alpha))
    }

    pub fn flow_config(&self) -> msflow_core::FlowConfig {
        msflow_core::FlowConfig {
            dt: self.dt,
            t_end: self.t_end,
            picard_iterations: self.flow.picard_iterations,
            linear_tol: self.flow.linear_tol,
            max_linear_iterations: 5000,
            snapshot_every: self.flow.snapshot_every,
            stagnation_threshold: self.flow.stagnation_threshold,
        }
    }

    pub fn translator_options(&self) -> msflow_core::TranslatorOptions {
        msflow_core::TranslatorOptions {
            tol: self.translator.tol,
            max_iterations: self.translator.max_iterations,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"domain":{"shape":"circle","R":1.0},"alpha":{"const":2.0},"h":0.1}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.forcing, Forcing::Zero);
        assert_eq!(c.dt, 1e-3);
        assert_eq!(c.initial, InitialSpec::Zero);
        assert_eq!(c.audits.len(), AuditKind::ALL.len());
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = r#"{"domain":{"shape":"circle","R":1.0},"alpha":{"const":2.0},"h":0.1,"dt":-1}"#;
        assert_eq!(ExperimentConfig::from_json_str(bad).unwrap_err().field, "dt");
        let bad = r#"{"domain":{"shape":"circle","R":1.0},"alpha":{"const":2.0}}"#;
        assert_eq!(ExperimentConfig::from_json_str(bad).unwrap_err().field, "h");
        let bad = r#"{"domain":{"shape":"square"},"alpha":{"const":2.0},"h":0.1}"#;
        assert_eq!(ExperimentConfig::from_json_str(bad).unwrap_err().field, "domain");
        let bad = r#"{"domain":{"shape":"circle","R":1.0},"alpha":{"const":2.0},"h":0.1,"colour":1}"#;
        assert_eq!(ExperimentConfig::from_json_str(bad).unwrap_err().field, "colour");
        let bad = r#"{"domain":{"shape":"circle","R":1.0},"alpha":{"const":2.0},"h":0.1,"flow":{"linear_tol":0.1}}"#;
        assert_eq!(ExperimentConfig::from_json_str(bad).unwrap_err().field, "flow.linear_tol");
        let bad = r#"{"domain":{"shape":"circle","R":1.0},"alpha":{"const":4.0},"h":0.1}"#;
        let c = ExperimentConfig::from_json_str(bad).unwrap();
        assert_eq!(c.geometry().unwrap_err().field, "alpha");
        let bad = r#"{"domain":{"shape":"circle","R":-1.0},"alpha":{"const":2.0},"h":0.1}"#;
        let c = ExperimentConfig::from_json_str(bad).unwrap();
        assert_eq!(c.geometry().unwrap_err().field, "domain");
        assert!(ExperimentConfig::from_json_str("[1]").unwrap_err().message.contains("object"));
    }

    #[test]
    fn full_config_parses() {
        let text = r#"{
            "schema_version": 1,
            "domain": {"shape": "ellipse", "a": 1.5, "b": 1.0},
            "alpha": {"fourier": {"a0": 1.8, "terms": [[2, 0.05, 0.0]]}},
            "H": {"polynomial": {"terms": [[1, 0, 0.2]], "p_linear": [0.1, 0.0]}},
            "h": 0.1, "dt": 0.01, "t_end": 2.0,
            "initial": {"affine": [0.0, 1.0, 0.0]},
            "compare_initial": "zero",
            "flow": {"picard_iterations": 2, "snapshot_every": 10, "stagnation_threshold": null},
            "translator": {"epsilons": [0.1, 0.01]},
            "audits": ["mass_law", "assumptions", "mass_law"],
            "output_dir": "out", "seed": 7
        }"#;
        let c = ExperimentConfig::from_json_str(text).unwrap();
        assert_eq!(c.audits, vec![AuditKind::Assumptions, AuditKind::MassLaw]);
        assert_eq!(c.flow.stagnation_threshold, None);
        assert_eq!(c.initial.eval([2.0, 5.0]), 2.0);
        assert!(c.geometry().is_ok());
    }

    #[test]
    fn schema_lists_every_key() {
        let schema: Value = serde_json::from_str(SCHEMA).unwrap();
        let props = schema["properties"].as_object().unwrap();
        let mut listed: Vec<&str> = props.keys().map(|k| k.as_str()).collect();
        listed.sort();
        let mut keys = KEYS.to_vec();
        keys.sort();
        assert_eq!(listed, keys);
        assert_eq!(schema["additionalProperties"], Value::Bool(false));
        let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        assert_eq!(required, ["domain", "alpha", "h"]);
    }

    #[test]
    fn polynomial_initial() {
        let p = InitialSpec::Polynomial(vec![(2, 0, 1.0), (0, 1, -3.0)]);
        assert_eq!(p.eval([2.0, 1.0]), 1.0);
    }
}
