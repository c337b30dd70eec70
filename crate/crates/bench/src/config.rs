use std::path::{Path, PathBuf};

use acn_core::{MuRule, ObjectiveKind, Transport};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    /// Probe-point estimate refined on pilot trajectories.
    Empirical,
    /// `√(32L²d/n)`.
    Theory,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Acn,
    RestartedAcn,
    CubicNewton,
    Agd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Acn, Method::RestartedAcn, Method::CubicNewton, Method::Agd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Acn => "acn",
            Method::RestartedAcn => "restarted_acn",
            Method::CubicNewton => "cubic_newton",
            Method::Agd => "agd",
        }
    }
}

/// Exactly one stopping criterion. For `restarted_acn`, `t_max` counts stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    TMax(usize),
    TargetGap(f64),
    Rounds(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ObjectiveKind,
    #[serde(rename = "N")]
    pub n_total: usize,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub feat_bound: f64,
    /// Decay exponent of the feature covariance spectrum.
    #[serde(default)]
    pub spectrum_decay: f64,
    pub mu_rule: MuRule,
    #[serde(default = "one")]
    pub mu_scale: f64,
    /// Radius `R` of the ball around `x₀` assumed to hold the solution.
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_beta_source")]
    pub beta_source: BetaSource,
    #[serde(default = "one")]
    pub beta_scale: f64,
    #[serde(default)]
    pub master_shard: usize,
}

fn one() -> f64 {
    1.0
}

fn default_radius() -> f64 {
    2.0
}

fn default_beta_source() -> BetaSource {
    BetaSource::Empirical
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub method: Method,
    pub budget: Budget,
    /// Hard cap on rounds for target-based budgets.
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
    /// `inproc` or `tcp:HOST:PORT`.
    #[serde(default = "default_transport")]
    pub transport: String,
    /// Restart radius; `‖∇F(x₀)‖/μ` when absent.
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
}

fn default_max_rounds() -> u64 {
    20_000
}

fn default_transport() -> String {
    "inproc".into()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("out/cache")
}

impl RunConfig {
    pub fn transport(&self) -> Result<Transport, HarnessError> {
        parse_transport(&self.transport)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.problem.validate()?;
        self.transport()?;
        match self.budget {
            Budget::TargetGap(g) if !(g > 0.0) => Err(HarnessError::Config(format!("target_gap {g} must be positive"))),
            _ => Ok(()),
        }
    }
}

impl ProblemConfig {
    pub fn generator_params(&self) -> acn_core::objective::GeneratorParams {
        acn_core::objective::GeneratorParams { spectrum_decay: self.spectrum_decay, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let p = self;
        if p.m == 0 || p.n_total == 0 || p.d == 0 {
            return Err(HarnessError::Config("N, d and m must be positive".into()));
        }
        if !p.n_total.is_multiple_of(p.m) {
            return Err(HarnessError::Config(format!("m = {} does not divide N = {}", p.m, p.n_total)));
        }
        if p.master_shard >= p.m {
            return Err(HarnessError::Config(format!("master_shard {} out of range", p.master_shard)));
        }
        if !(p.radius > 0.0 && p.feat_bound > 0.0 && p.mu_scale > 0.0 && p.beta_scale > 0.0) {
            return Err(HarnessError::Config("radius, feat_bound and scales must be positive".into()));
        }
        Ok(())
    }
}

pub fn parse_transport(s: &str) -> Result<Transport, HarnessError> {
    match s.split_once(':') {
        None if s == "inproc" => Ok(Transport::InProc),
        Some(("tcp", addr)) if !addr.is_empty() => Ok(Transport::Tcp(addr.to_string())),
        _ => Err(HarnessError::Config(format!("unknown transport {s:?}"))),
    }
}

/// Applies `key=value` overrides to a JSON document. Keys are dotted paths;
/// values parse as JSON and fall back to plain strings.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<(), HarnessError> {
    for item in overrides {
        let (key, raw) =
            item.split_once('=').ok_or_else(|| HarnessError::Config(format!("override {item:?} is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut *doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| HarnessError::Config(format!("{key}: {part} is not inside an object")))?;
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

pub fn load<T: serde::de::DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T, HarnessError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    apply_overrides(&mut doc, overrides)?;
    serde_json::from_value(doc).map_err(|e| HarnessError::Config(e.to_string()))
}
