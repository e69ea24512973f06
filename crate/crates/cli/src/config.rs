//! Run configuration, read from a single JSON file.

use std::fmt;
use std::path::{Path, PathBuf};

use coarselat_core::{Configuration, ConstructionOptions, ModelParams};
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Forward,
    Backward,
    Construct,
    Kernel,
    Sweep,
    Analyze,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Backward => "backward",
            Command::Construct => "construct",
            Command::Kernel => "kernel",
            Command::Sweep => "sweep",
            Command::Analyze => "analyze",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Model parameters as written in a config; omitted fields take the library
/// defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub beta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_equilibrate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode_tol: Option<f64>,
}

fn default_epsilon() -> f64 {
    1.0 / 6.0
}

impl ParamsConfig {
    pub fn model(&self) -> Result<ModelParams, RunError> {
        let mut p = ModelParams::new(self.beta, self.epsilon).map_err(|e| RunError::Config(e.to_string()))?;
        if let Some(t) = self.t_equilibrate {
            p = p.with_t_equilibrate(t);
        }
        if let Some(t) = self.mass_tol {
            p = p.with_mass_tol(t);
        }
        if let Some(t) = self.ode_tol {
            p = p.with_ode_tol(t);
        }
        p.validate().map_err(|e| RunError::Config(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialData {
    Constant { value: f64 },
    /// Pattern repeated over the window.
    Periodic { pattern: Vec<f64> },
    /// Independent uniform masses on `[lo, hi]`.
    Random {
        lo: f64,
        hi: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Configuration JSON as written by the library.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

pub const SWEEP_AXES: [&str; 6] = ["beta", "epsilon", "n", "window_size", "t_end", "seed"];

/// Overrides for the construction pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots_per_stage: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub params: ParamsConfig,
    #[serde(default = "default_window")]
    pub window_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_data: Option<InitialData>,
    #[serde(default)]
    pub t_end: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_axis: Option<SweepAxis>,
    /// Command run for every sweep value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_command: Option<Command>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Seed for random data and construction probes.
    #[serde(default)]
    pub seed: u64,
    /// Floor added to zero masses before a backward run.
    #[serde(default)]
    pub delta: f64,
    /// Number of construction stages.
    #[serde(default)]
    pub n: usize,
    /// Build the instability approximant instead of the coarsening one.
    #[serde(default)]
    pub instability: bool,
    /// Kernel profile times.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t_list: Vec<f64>,
    /// Snapshot spacing for forward and backward runs (0 records every step).
    #[serde(default)]
    pub record_interval: f64,
    #[serde(default)]
    pub construction: ConstructionConfig,
    /// Trajectory CSV read by `analyze`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

fn default_window() -> usize {
    64
}

fn default_output() -> PathBuf {
    PathBuf::from("run")
}

fn default_threads() -> usize {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(format!("config: {e}")))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(InitialData::File { path }) = &mut cfg.initial_data {
            rebase(path);
        }
        if let Some(p) = &mut cfg.input {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The command a sweep runs per value, or the command itself.
    pub fn effective_command(&self) -> Command {
        match self.command {
            Command::Sweep => self.sweep_command.unwrap_or(Command::Forward),
            c => c,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |msg: String| Err(RunError::Config(msg));
        self.params.model()?;
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        if self.command == Command::Sweep {
            let Some(axis) = &self.sweep_axis else {
                return bad("sweep needs sweep_axis".into());
            };
            if axis.values.is_empty() {
                return bad("sweep_axis.values is empty".into());
            }
            if !SWEEP_AXES.contains(&axis.name.as_str()) {
                return bad(format!("unknown sweep axis '{}' (one of {SWEEP_AXES:?})", axis.name));
            }
            if matches!(self.sweep_command, Some(Command::Sweep)) {
                return bad("sweep_command cannot be sweep".into());
            }
            for &v in &axis.values {
                self.with_axis_value(&axis.name, v)?.validate()?;
            }
            return Ok(());
        }
        let needs_data = matches!(self.command, Command::Forward | Command::Backward);
        if needs_data {
            if self.window_size == 0 {
                return bad("window_size must be >= 1".into());
            }
            match &self.initial_data {
                None => return bad(format!("{} needs initial_data", self.command)),
                Some(InitialData::File { path }) if !path.is_file() => {
                    return bad(format!("initial data file {} does not exist", path.display()))
                }
                _ => {}
            }
            if !(self.t_end > 0.0 && self.t_end.is_finite()) {
                return bad(format!("t_end = {} must be positive", self.t_end));
            }
            if !(self.record_interval >= 0.0) {
                return bad("record_interval must be >= 0".into());
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta = {} must be >= 0", self.delta));
        }
        match self.command {
            Command::Kernel => {
                if self.t_list.is_empty() {
                    return bad("kernel needs a nonempty t_list".into());
                }
                if let Some(t) = self.t_list.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
                    return bad(format!("kernel time {t} must be positive"));
                }
                if self.params.beta != 1.0 && self.window_size < 3 {
                    return bad("kernel runs need window_size >= 3".into());
                }
            }
            Command::Analyze => match &self.input {
                None => return bad("analyze needs input".into()),
                Some(p) if !p.is_file() => return bad(format!("input {} does not exist", p.display())),
                _ => {}
            },
            Command::Construct if self.window_size < 2 => {
                return bad("window_size must be >= 2".into());
            }
            _ => {}
        }
        Ok(())
    }

    /// Initial configuration for forward and backward runs.
    pub fn initial_configuration(&self) -> Result<Configuration, RunError> {
        let cfg_err = |e: coarselat_core::Error| RunError::Config(format!("initial_data: {e}"));
        match self.initial_data.as_ref() {
            None => Err(RunError::Config("initial_data missing".into())),
            Some(InitialData::Constant { value }) => {
                Configuration::constant(*value, self.window_size).map_err(cfg_err)
            }
            Some(InitialData::Periodic { pattern }) => {
                Configuration::periodic_pattern(pattern, self.window_size).map_err(cfg_err)
            }
            Some(InitialData::Random { lo, hi, seed }) => {
                Configuration::random_uniform(*lo, *hi, self.window_size, seed.unwrap_or(self.seed))
                    .map_err(cfg_err)
            }
            Some(InitialData::File { path }) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
                Configuration::from_json(&text).map_err(cfg_err)
            }
        }
    }

    pub fn construction_options(&self) -> ConstructionOptions {
        let mut o = ConstructionOptions {
            window: self.window_size,
            seed: self.seed,
            ..ConstructionOptions::default()
        };
        let c = &self.construction;
        if let Some(v) = c.probes {
            o.probes = v;
        }
        if let Some(v) = c.safety {
            o.safety = v;
        }
        if let Some(v) = c.snapshots_per_stage {
            o.snapshots_per_stage = v;
        }
        if let Some(v) = c.t_max {
            o.t_max = v;
        }
        if let Some(v) = c.delta {
            o.delta = v;
        }
        o
    }

    /// Applies a `--seed` override to the config and to random initial data.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(InitialData::Random { seed: s, .. }) = &mut self.initial_data {
            *s = Some(seed);
        }
    }

    /// Copy of the config for one sweep value, with the sweep fields cleared.
    pub fn with_axis_value(&self, name: &str, value: f64) -> Result<RunConfig, RunError> {
        let mut c = self.clone();
        c.command = self.effective_command();
        c.sweep_axis = None;
        c.sweep_command = None;
        let as_count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(RunError::Config(format!("sweep value {v} for '{name}' is not a count")))
            }
        };
        match name {
            "beta" => c.params.beta = value,
            "epsilon" => c.params.epsilon = value,
            "n" => c.n = as_count(value)?,
            "window_size" => c.window_size = as_count(value)?,
            "t_end" => c.t_end = value,
            "seed" => c.set_seed(as_count(value)? as u64),
            _ => return Err(RunError::Config(format!("unknown sweep axis '{name}'"))),
        }
        Ok(c)
    }
}

/// Directory name of one sweep value, e.g. `beta=-1`.
pub fn axis_dir_name(name: &str, value: f64) -> String {
    format!("{name}={value}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_json(
            r#"{"command":"forward","params":{"beta":-1},"window_size":8,
                "initial_data":{"kind":"periodic","pattern":[2,1]},"t_end":1}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_validates() {
        let c = base();
        c.validate().unwrap();
        assert_eq!(c.params.epsilon, 1.0 / 6.0);
        assert_eq!(c.initial_configuration().unwrap().masses()[..2], [2.0, 1.0]);
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(RunConfig::from_json(r#"{"command":"forward","params":{"beta":1},"bogus":1}"#).is_err());
        let mut c = base();
        c.t_end = 0.0;
        assert!(matches!(c.validate(), Err(RunError::Config(_))));
        let mut c = base();
        c.params.beta = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sweep_validation() {
        let mut c = base();
        c.command = Command::Sweep;
        assert!(c.validate().is_err());
        c.sweep_axis = Some(SweepAxis {
            name: "beta".into(),
            values: vec![],
        });
        assert!(c.validate().is_err());
        c.sweep_axis = Some(SweepAxis {
            name: "beta".into(),
            values: vec![-1.0, 0.5],
        });
        c.validate().unwrap();
        let sub = c.with_axis_value("beta", 0.5).unwrap();
        assert_eq!(sub.command, Command::Forward);
        assert_eq!(sub.params.beta, 0.5);
        assert!(c.with_axis_value("n", 1.5).is_err());
        assert_eq!(axis_dir_name("beta", -1.0), "beta=-1");
        assert_eq!(axis_dir_name("beta", 0.5), "beta=0.5");
    }

    #[test]
    fn seed_override_reaches_random_data() {
        let mut c = base();
        c.initial_data = Some(InitialData::Random {
            lo: 0.5,
            hi: 1.0,
            seed: None,
        });
        c.set_seed(7);
        let a = c.initial_configuration().unwrap();
        c.set_seed(8);
        assert_ne!(a, c.initial_configuration().unwrap());
    }
}
