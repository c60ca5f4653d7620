//! Experiment configuration: JSON on disk, dot-path overrides, and the hash
//! recorded in the manifest.

use std::path::Path;

use condmv::fleming_viot::DEFAULT_REINSERTION_CAP;
use condmv::killed_sim::{InitialLaw, SimConfig};
use condmv::mimic::RegressionBins;
use condmv::model::{Control, FeedbackPolicy, ModelSpec, OpenLoopControl};
use condmv::picard::PicardSettings;
use condmv::reward_opt::{Objective, PolicyFamily, SearchMethod, SearchSettings};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FvVariant {
    Finite,
    MeanField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FvBlock {
    pub variant: FvVariant,
    #[serde(default = "default_cap")]
    pub reinsertion_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_REINSERTION_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalBlock {
    pub dt_r: f64,
    /// Particles per kernel row; the sim block size when absent.
    #[serde(default)]
    pub n_particles: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeBlock {
    pub family: PolicyFamily,
    pub objective: Objective<f64>,
    pub method: SearchMethod,
    pub budget: usize,
    pub start: Vec<f64>,
    pub step: f64,
}

impl OptimizeBlock {
    pub fn settings(&self) -> SearchSettings<f64> {
        SearchSettings {
            method: self.method,
            budget: self.budget,
            start: self.start.clone(),
            step: self.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec<f64>,
    #[serde(default)]
    pub policy: Option<FeedbackPolicy<f64>>,
    #[serde(default)]
    pub open_loop: Option<OpenLoopControl<f64>>,
    pub initial: InitialLaw<f64>,
    pub sim: SimConfig<f64>,
    #[serde(default)]
    pub picard: Option<PicardSettings<f64>>,
    #[serde(default)]
    pub fv: Option<FvBlock>,
    #[serde(default)]
    pub renewal: Option<RenewalBlock>,
    #[serde(default)]
    pub mimic: Option<RegressionBins>,
    #[serde(default)]
    pub optimize: Option<OptimizeBlock>,
}

const DEFAULT_PICARD: PicardSettings<f64> = PicardSettings {
    tol: 1e-2,
    max_iter: 10,
};

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.sim.seed
    }

    pub fn picard_settings(&self) -> PicardSettings<f64> {
        self.picard.unwrap_or(DEFAULT_PICARD)
    }

    pub fn feedback(&self) -> Result<&FeedbackPolicy<f64>, ConfigError> {
        self.policy
            .as_ref()
            .ok_or_else(|| ConfigError("missing field `policy`".into()))
    }

    pub fn open_loop(&self) -> Result<&OpenLoopControl<f64>, ConfigError> {
        self.open_loop
            .as_ref()
            .ok_or_else(|| ConfigError("missing field `open_loop`".into()))
    }

    /// The feedback policy if given, else the open-loop control.
    pub fn control(&self) -> Result<Control<'_, f64>, ConfigError> {
        match (&self.policy, &self.open_loop) {
            (Some(p), _) => Ok(Control::Feedback(p)),
            (None, Some(o)) => Ok(Control::OpenLoop(o)),
            (None, None) => Err(ConfigError(
                "missing field `policy` (or `open_loop`)".into(),
            )),
        }
    }

    pub fn block<'a, B>(&self, block: &'a Option<B>, name: &str) -> Result<&'a B, ConfigError> {
        block
            .as_ref()
            .ok_or_else(|| ConfigError(format!("missing field `{name}`")))
    }
}

/// Config in resolved JSON form together with its parsed value.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub value: Value,
    pub config: ExperimentConfig,
}

impl LoadedConfig {
    /// SHA-256 of the compact JSON serialization (object keys sorted).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.value).expect("JSON value serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    resolve(value, overrides)
}

/// Applies overrides, checks the seed and parses. A manifest is accepted in
/// place of a config: its `config` member is used.
pub fn resolve(mut value: Value, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    if value.get("config_hash").is_some() {
        value = value
            .get("config")
            .cloned()
            .ok_or_else(|| ConfigError("manifest lacks `config`".into()))?;
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    match value.pointer("/sim/seed") {
        None | Some(Value::Null) => {
            return Err(ConfigError(
                "missing field `seed` in `sim`: a seed is required".into(),
            ))
        }
        Some(Value::Number(n)) if n.as_u64().is_some() => {}
        Some(_) => {
            return Err(ConfigError(
                "field `seed` must be a nonnegative integer".into(),
            ))
        }
    }
    let config: ExperimentConfig =
        serde_json::from_value(value.clone()).map_err(|e| ConfigError(e.to_string()))?;
    Ok(LoadedConfig { value, config })
}

/// `a.b.c=v`: `v` is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{spec}` is not key=value")))?;
    if path.is_empty() {
        return Err(ConfigError(format!("override `{spec}` has an empty key")));
    }
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (depth, key) in keys.iter().enumerate() {
        let last = depth + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), new);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| {
                    ConfigError(format!("override `{path}`: `{key}` is not an index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    ConfigError(format!("override `{path}`: index {idx} out of range {len}"))
                })?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(ConfigError(format!(
                    "override `{path}`: `{key}` is inside a scalar"
                )))
            }
        };
    }
    unreachable!("loop returns on the last key")
}
