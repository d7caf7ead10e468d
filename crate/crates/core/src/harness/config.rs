//! Run configuration from flat `section.key = value` TOML.
//!
//! Both `plant.m = 2.0` and a `[plant]` table with `m = 2.0` are accepted.
//! Unknown keys are rejected. An empty file yields the defaults.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::agent::{Activation, AgentConfig, ObservationScales, RewardWeights, SafetyLimits};
use crate::certification::{build_library, AdmissibleLibrary, GainBounds, QChoice, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::harness::episode::EnvConfig;
use crate::plant::PlantParams;
use crate::reference::{snap_sup_norm, Profile, TrajectoryConfig};

/// Level set used as the admissible initial-error region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoAdm {
    /// The largest invariance level over the library.
    Auto,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub trajectory: TrajectoryConfig,
    /// Episode length [s].
    pub duration: f64,
    pub n_trans: usize,
    pub n_yaw: usize,
    /// Gain bounds file; the built-in table when absent.
    pub bounds_file: Option<PathBuf>,
    pub q_choice: QChoice,
    pub margin: f64,
    pub rho_adm: RhoAdm,
    pub reward: RewardWeights,
    pub safety: SafetyLimits,
    pub agent: AgentConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            trajectory: TrajectoryConfig::default(),
            duration: 10.0,
            n_trans: 5,
            n_yaw: 3,
            bounds_file: None,
            q_choice: QChoice::Identity,
            margin: DEFAULT_MARGIN,
            rho_adm: RhoAdm::Auto,
            reward: RewardWeights::default(),
            safety: SafetyLimits::default(),
            agent: AgentConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "plant.m",
    "plant.g",
    "plant.inertia",
    "plant.dt",
    "trajectory.r0",
    "trajectory.r_star",
    "trajectory.tf",
    "trajectory.profile",
    "episode.duration",
    "library.n_trans",
    "library.n_yaw",
    "library.bounds_file",
    "certification.q_scale",
    "certification.margin",
    "certification.rho_adm",
    "reward.w_r",
    "reward.w_v",
    "reward.w_eta",
    "reward.w_omega",
    "reward.w_u",
    "reward.w_s",
    "reward.rho_fail",
    "safety.position_error",
    "safety.tilt",
    "agent.episodes",
    "agent.gamma",
    "agent.lr",
    "agent.eps_start",
    "agent.eps_end",
    "agent.eps_decay_fraction",
    "agent.hidden",
    "agent.activation",
    "agent.dwell_steps",
    "agent.replay",
    "agent.target_network",
    "agent.replay_capacity",
    "agent.batch_size",
    "agent.target_sync",
    "agent.train_every",
    "agent.warmup",
    "run.seed",
    "run.output_dir",
];

fn parse_err(key: &str, expected: &str, v: &Value) -> Error {
    Error::Parse(format!("`{key}` expects {expected}, got `{v}`"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(parse_err(key, "a number", v)),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(parse_err(key, "a nonnegative integer", v)),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| parse_err(key, "true or false", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| parse_err(key, "a string", v))
}

fn as_vec3(key: &str, v: &Value) -> Result<Vector3<f64>> {
    let arr = v.as_array().ok_or_else(|| parse_err(key, "an array of 3 numbers", v))?;
    if arr.len() != 3 {
        return Err(parse_err(key, "an array of 3 numbers", v));
    }
    Ok(Vector3::new(as_f64(key, &arr[0])?, as_f64(key, &arr[1])?, as_f64(key, &arr[2])?))
}

/// Flattens nested tables into `(dotted.key, value)` pairs.
fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn fmt_vec3(v: &Vector3<f64>) -> String {
    format!("[{:?}, {:?}, {:?}]", v[0], v[1], v[2])
}

impl RunConfig {
    /// Parses TOML text on top of the defaults, then validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the keys in `text` without validating.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs);
        let unknown: Vec<&str> = pairs
            .iter()
            .map(|(k, _)| k.as_str())
            .filter(|k| !KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::validation(unknown.join(", "), "unknown configuration key"));
        }
        for (k, v) in &pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// `key=value` override; the value uses TOML syntax, with bare words
    /// read as strings.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        if !KEYS.contains(&key) {
            return Err(Error::validation(key, "unknown configuration key"));
        }
        self.set(key, &value)
    }

    fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "plant.m" => self.plant.m = as_f64(key, v)?,
            "plant.g" => self.plant.g = as_f64(key, v)?,
            "plant.inertia" => self.plant.inertia = as_vec3(key, v)?,
            "plant.dt" => self.plant.dt = as_f64(key, v)?,
            "trajectory.r0" => self.trajectory.r0 = as_vec3(key, v)?,
            "trajectory.r_star" => self.trajectory.r_star = as_vec3(key, v)?,
            "trajectory.tf" => self.trajectory.tf = as_f64(key, v)?,
            "trajectory.profile" => {
                let name = as_str(key, v)?;
                self.trajectory.profile =
                    Profile::parse(name).ok_or_else(|| parse_err(key, "\"quintic\" or \"nonic\"", v))?;
            }
            "episode.duration" => self.duration = as_f64(key, v)?,
            "library.n_trans" => self.n_trans = as_usize(key, v)?,
            "library.n_yaw" => self.n_yaw = as_usize(key, v)?,
            "library.bounds_file" => {
                let path = as_str(key, v)?;
                self.bounds_file = (!path.is_empty()).then(|| PathBuf::from(path));
            }
            "certification.q_scale" => {
                let s = as_f64(key, v)?;
                self.q_choice = if s == 1.0 {
                    QChoice::Identity
                } else {
                    QChoice::ScaledIdentity(s)
                };
            }
            "certification.margin" => self.margin = as_f64(key, v)?,
            "certification.rho_adm" => {
                self.rho_adm = match v {
                    Value::String(s) if s == "auto" => RhoAdm::Auto,
                    _ => RhoAdm::Value(as_f64(key, v).map_err(|_| parse_err(key, "\"auto\" or a number", v))?),
                }
            }
            "reward.w_r" => self.reward.w_r = as_f64(key, v)?,
            "reward.w_v" => self.reward.w_v = as_f64(key, v)?,
            "reward.w_eta" => self.reward.w_eta = as_f64(key, v)?,
            "reward.w_omega" => self.reward.w_omega = as_f64(key, v)?,
            "reward.w_u" => self.reward.w_u = as_f64(key, v)?,
            "reward.w_s" => self.reward.w_s = as_f64(key, v)?,
            "reward.rho_fail" => self.reward.rho_fail = as_f64(key, v)?,
            "safety.position_error" => self.safety.position_error = as_f64(key, v)?,
            "safety.tilt" => self.safety.tilt = as_f64(key, v)?,
            "agent.episodes" => self.agent.episodes = as_usize(key, v)?,
            "agent.gamma" => self.agent.gamma = as_f64(key, v)?,
            "agent.lr" => self.agent.lr = as_f64(key, v)?,
            "agent.eps_start" => self.agent.eps_start = as_f64(key, v)?,
            "agent.eps_end" => self.agent.eps_end = as_f64(key, v)?,
            "agent.eps_decay_fraction" => self.agent.eps_decay_fraction = as_f64(key, v)?,
            "agent.hidden" => {
                let arr = v.as_array().ok_or_else(|| parse_err(key, "an array of layer widths", v))?;
                self.agent.hidden = arr.iter().map(|w| as_usize(key, w)).collect::<Result<_>>()?;
            }
            "agent.activation" => {
                let name = as_str(key, v)?;
                self.agent.activation =
                    Activation::parse(name).ok_or_else(|| parse_err(key, "\"relu\" or \"tanh\"", v))?;
            }
            "agent.dwell_steps" => self.agent.dwell_steps = as_usize(key, v)?,
            "agent.replay" => self.agent.replay = as_bool(key, v)?,
            "agent.target_network" => self.agent.target_network = as_bool(key, v)?,
            "agent.replay_capacity" => self.agent.replay_capacity = as_usize(key, v)?,
            "agent.batch_size" => self.agent.batch_size = as_usize(key, v)?,
            "agent.target_sync" => self.agent.target_sync = as_usize(key, v)?,
            "agent.train_every" => self.agent.train_every = as_usize(key, v)?,
            "agent.warmup" => self.agent.warmup = as_usize(key, v)?,
            "run.seed" => match v {
                Value::Integer(i) if *i >= 0 => self.seed = *i as u64,
                _ => return Err(parse_err(key, "a nonnegative integer", v)),
            },
            "run.output_dir" => self.output_dir = PathBuf::from(as_str(key, v)?),
            other => return Err(Error::validation(other, "unknown configuration key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be > 0, got {v}")))
            }
        };
        positive("trajectory.tf", self.trajectory.tf)?;
        positive("episode.duration", self.duration)?;
        let steps = self.duration / self.plant.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::validation(
                "episode.duration",
                "must be an integer multiple of plant.dt",
            ));
        }
        if self.n_trans == 0 {
            return Err(Error::validation("library.n_trans", "must be at least 1"));
        }
        if self.n_yaw == 0 {
            return Err(Error::validation("library.n_yaw", "must be at least 1"));
        }
        if let QChoice::ScaledIdentity(s) = self.q_choice {
            positive("certification.q_scale", s)?;
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::validation("certification.margin", "must be finite and >= 0"));
        }
        if let RhoAdm::Value(r) = self.rho_adm {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::validation("certification.rho_adm", "must be \"auto\" or >= 0"));
            }
        }
        self.reward.validate()?;
        positive("safety.position_error", self.safety.position_error)?;
        positive("safety.tilt", self.safety.tilt)?;
        self.agent.validate()
    }

    /// Resolved `key = value` lines in canonical key order; reparsing them
    /// reproduces this configuration.
    pub fn canonical_pairs(&self) -> Vec<(&'static str, String)> {
        let f = |x: f64| format!("{x:?}");
        let s = |x: &str| format!("{x:?}");
        let q_scale = match self.q_choice {
            QChoice::Identity => 1.0,
            QChoice::ScaledIdentity(v) => v,
        };
        let a = &self.agent;
        let values = vec![
            f(self.plant.m),
            f(self.plant.g),
            fmt_vec3(&self.plant.inertia),
            f(self.plant.dt),
            fmt_vec3(&self.trajectory.r0),
            fmt_vec3(&self.trajectory.r_star),
            f(self.trajectory.tf),
            s(self.trajectory.profile.name()),
            f(self.duration),
            self.n_trans.to_string(),
            self.n_yaw.to_string(),
            s(&self
                .bounds_file
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()),
            f(q_scale),
            f(self.margin),
            match self.rho_adm {
                RhoAdm::Auto => s("auto"),
                RhoAdm::Value(v) => f(v),
            },
            f(self.reward.w_r),
            f(self.reward.w_v),
            f(self.reward.w_eta),
            f(self.reward.w_omega),
            f(self.reward.w_u),
            f(self.reward.w_s),
            f(self.reward.rho_fail),
            f(self.safety.position_error),
            f(self.safety.tilt),
            a.episodes.to_string(),
            f(a.gamma),
            f(a.lr),
            f(a.eps_start),
            f(a.eps_end),
            f(a.eps_decay_fraction),
            format!(
                "[{}]",
                a.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(", ")
            ),
            s(a.activation.name()),
            a.dwell_steps.to_string(),
            a.replay.to_string(),
            a.target_network.to_string(),
            a.replay_capacity.to_string(),
            a.batch_size.to_string(),
            a.target_sync.to_string(),
            a.train_every.to_string(),
            a.warmup.to_string(),
            self.seed.to_string(),
            s(&self.output_dir.display().to_string()),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    pub fn to_toml_string(&self) -> String {
        self.canonical_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the canonical dump, excluding the seed and output
    /// directory so runs differing only in those share a hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical_pairs() {
            if k != "run.seed" && k != "run.output_dir" {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn gain_bounds(&self) -> Result<GainBounds> {
        match &self.bounds_file {
            Some(path) => GainBounds::load(path),
            None => Ok(GainBounds::default()),
        }
    }

    /// Disturbance bound of the configured reference.
    pub fn r_bar(&self) -> f64 {
        snap_sup_norm(&self.trajectory)
    }

    pub fn build_library(&self) -> Result<AdmissibleLibrary> {
        build_library(
            &self.gain_bounds()?,
            self.n_trans,
            self.n_yaw,
            self.q_choice,
            self.margin,
            self.r_bar(),
        )
    }

    /// `rho_adm`, resolving `auto` against `library` and refusing values
    /// below any entry's invariance level.
    pub fn resolve_rho_adm(&self, library: &AdmissibleLibrary) -> Result<f64> {
        let floor = library.max_rho_star();
        match self.rho_adm {
            RhoAdm::Auto => Ok(floor),
            RhoAdm::Value(v) if v >= floor => Ok(v),
            RhoAdm::Value(v) => Err(Error::validation(
                "certification.rho_adm",
                format!("{v} is below the largest invariance level {floor}"),
            )),
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            plant: self.plant,
            trajectory: self.trajectory,
            duration: self.duration,
            weights: self.reward,
            safety: self.safety,
            scales: ObservationScales::for_hover_thrust(self.plant.hover_thrust()),
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_toml_str(&std::fs::read_to_string(path)?)
}
