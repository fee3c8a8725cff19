//! Experiment configuration: a flat TOML file validated into a runnable
//! experiment. Unknown keys are rejected so configs stay reproducible.

use std::fmt;
use std::path::PathBuf;

use nalgebra::DVector;
use serde::Deserialize;
use weylflow::flows::{FlowConfig, Method};
use weylflow::potentials::model_by_name;
use weylflow::{Chart, PotentialModel};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub model: String,
    pub chart: Option<String>,
    pub initial: Vec<f64>,
    pub t_end: Option<f64>,
    pub step: Option<f64>,
    pub method: Option<String>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub boundary_margin: Option<f64>,
    pub checks: Option<Vec<String>>,
    pub outdir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub sweep_steps: Option<Vec<f64>>,
}

/// The nine named checks, in the order they appear in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckName {
    Orthogonality,
    Linearization,
    Hamiltonian,
    Rates,
    Pregeodesic,
    Weyl,
    Gauge,
    Transport,
    ProperTime,
}

pub const ALL_CHECKS: [CheckName; 9] = [
    CheckName::Orthogonality,
    CheckName::Linearization,
    CheckName::Hamiltonian,
    CheckName::Rates,
    CheckName::Pregeodesic,
    CheckName::Weyl,
    CheckName::Gauge,
    CheckName::Transport,
    CheckName::ProperTime,
];

impl CheckName {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckName::Orthogonality => "orthogonality",
            CheckName::Linearization => "linearization",
            CheckName::Hamiltonian => "hamiltonian",
            CheckName::Rates => "rates",
            CheckName::Pregeodesic => "pregeodesic",
            CheckName::Weyl => "weyl",
            CheckName::Gauge => "gauge",
            CheckName::Transport => "transport",
            CheckName::ProperTime => "proper_time",
        }
    }

    fn parse(s: &str) -> Option<CheckName> {
        ALL_CHECKS.iter().copied().find(|c| c.as_str() == s)
    }

    pub fn tolerance(&self) -> f64 {
        match self {
            CheckName::Orthogonality => 1e-4,
            CheckName::Linearization => 1e-8,
            CheckName::Hamiltonian => 1e-8,
            CheckName::Rates => 1e-4,
            CheckName::Pregeodesic => 1e-5,
            CheckName::Weyl => 1e-5,
            CheckName::Gauge => 1e-6,
            CheckName::Transport => 1e-4,
            CheckName::ProperTime => 1e-5,
        }
    }

    /// Checks that make sense on a dual-chart run. The pre-geodesic family,
    /// transport and the proper-time defect are statements about primal
    /// trajectories.
    pub fn valid_on_eta(&self) -> bool {
        matches!(
            self,
            CheckName::Orthogonality
                | CheckName::Linearization
                | CheckName::Hamiltonian
                | CheckName::Rates
                | CheckName::Gauge
        )
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub struct Experiment {
    pub model: PotentialModel,
    pub chart: Chart,
    pub initial: DVector<f64>,
    pub flow: FlowConfig,
    pub checks: Vec<CheckName>,
    pub outdir: PathBuf,
    pub seed: u64,
    pub sweep_steps: Vec<f64>,
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

pub fn load(path: &std::path::Path) -> Result<Experiment, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| ConfigError(e.to_string()))?;
    validate(raw)
}

pub fn validate(raw: RawConfig) -> Result<Experiment, ConfigError> {
    let model = match model_by_name(&raw.model) {
        Some(m) => m,
        None => return err(format!("unknown model {:?}", raw.model)),
    };
    let chart = match raw.chart.as_deref() {
        None | Some("theta") => Chart::Theta,
        Some("eta") => Chart::Eta,
        Some(other) => return err(format!("unknown chart {other:?} (theta or eta)")),
    };
    if raw.initial.len() != model.dim() {
        return err(format!(
            "initial point has length {}, model {} has dim {}",
            raw.initial.len(),
            model.name(),
            model.dim()
        ));
    }
    let method = match raw.method.as_deref() {
        None | Some("rk4") => Method::Rk4,
        Some("dp45") => Method::Dp45,
        Some(other) => return err(format!("unknown method {other:?} (rk4 or dp45)")),
    };
    let defaults = FlowConfig::default();
    let flow = FlowConfig {
        t_end: raw.t_end.unwrap_or(defaults.t_end),
        step: raw.step.unwrap_or(defaults.step),
        method,
        rel_tol: raw.rel_tol.unwrap_or(defaults.rel_tol),
        abs_tol: raw.abs_tol.unwrap_or(defaults.abs_tol),
        boundary_margin: raw.boundary_margin.unwrap_or(defaults.boundary_margin),
    };
    if !(flow.t_end > 0.0 && flow.step > 0.0) {
        return err("t_end and step must be positive");
    }
    let requested = raw.checks.unwrap_or_else(|| vec!["all".into()]);
    if requested.is_empty() {
        return err("checks must be nonempty");
    }
    let mut checks: Vec<CheckName> = Vec::new();
    for name in &requested {
        if name == "all" {
            for c in ALL_CHECKS {
                if (chart == Chart::Theta || c.valid_on_eta()) && !checks.contains(&c) {
                    checks.push(c);
                }
            }
            continue;
        }
        let c = match CheckName::parse(name) {
            Some(c) => c,
            None => return err(format!("unknown check {name:?}")),
        };
        if chart == Chart::Eta && !c.valid_on_eta() {
            return err(format!("check {c} is not defined for eta-chart runs"));
        }
        if !checks.contains(&c) {
            checks.push(c);
        }
    }
    let sweep_steps = raw.sweep_steps.unwrap_or_else(|| vec![4e-3, 2e-3, 1e-3]);
    if sweep_steps.len() < 2 || sweep_steps.iter().any(|s| *s <= 0.0) {
        return err("sweep_steps needs at least two positive entries");
    }
    Ok(Experiment {
        model,
        chart,
        initial: DVector::from_vec(raw.initial),
        flow,
        checks,
        outdir: raw.outdir.unwrap_or_else(|| PathBuf::from("weylflow-out")),
        seed: raw.seed.unwrap_or(0),
        sweep_steps,
    })
}
