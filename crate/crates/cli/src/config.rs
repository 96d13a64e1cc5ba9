use std::path::{Path, PathBuf};

use centerlab::kan::{KanError, KanMap};
use centerlab::models::{DAMap, DAParams, ModelError};
use centerlab::torus::IntegerAutomorphism;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ops::Experiment;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NoConvergence(_) | ModelError::DegenerateFrame(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<KanError> for CliError {
    fn from(e: KanError) -> Self {
        match e {
            KanError::ConditionViolated { index, ref detail } => {
                CliError::Model(format!("Kan condition ({index}) violated: {detail}"))
            }
            KanError::InvalidParameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Map model block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Linear { matrix: Vec<i64> },
    Da(DAParams),
    Kan { a: f64, s: f64 },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Da(DAMap::reference().params())
    }
}

impl ModelConfig {
    /// Accepts a block without `kind` as a DA block.
    pub fn from_value(mut v: Value) -> Result<Self, CliError> {
        if let Value::Object(map) = &mut v {
            map.entry("kind").or_insert_with(|| Value::String("da".into()));
        }
        serde_json::from_value(v).map_err(|e| CliError::Config(format!("model block: {e}")))
    }

    pub fn torus_map(&self) -> Result<DAMap, CliError> {
        match self {
            ModelConfig::Linear { matrix } => {
                Ok(DAMap::linear(IntegerAutomorphism::from_row_major(matrix).map_err(ModelError::from)?))
            }
            ModelConfig::Da(p) => Ok(DAMap::from_params(p)?),
            ModelConfig::Kan { .. } => Err(CliError::Config("operation needs a linear or da model".into())),
        }
    }

    pub fn kan_parameters(&self) -> Option<(f64, f64)> {
        match self {
            ModelConfig::Kan { a, s } => Some((*a, *s)),
            _ => None,
        }
    }
}

/// Builds a Kan map and checks all defining conditions.
pub fn validated_kan(a: f64, s: f64) -> Result<KanMap, CliError> {
    let m = KanMap::new(a, s).map_err(|e| CliError::Model(e.to_string()))?;
    centerlab::kan::kan_validate(&m)?;
    Ok(m)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Execution {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Config file contents. `experiment` is only required by `run`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub model: Option<ModelConfig>,
    pub experiment: Option<Experiment>,
    pub execution: Execution,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<Value>,
    experiment: Option<Value>,
    #[serde(default)]
    execution: Execution,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let model = raw.model.map(ModelConfig::from_value).transpose()?;
        let experiment = raw
            .experiment
            .map(|v| serde_json::from_value(v).map_err(|e| CliError::Config(format!("experiment block: {e}"))))
            .transpose()?;
        Ok(ConfigFile { model, experiment, execution: raw.execution })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kindless_model_block_is_da() {
        let c = ConfigFile::parse(
            r#"{"model": {"matrix": [1,-1,0,-1,2,-1,0,-1,2], "s": 0.05, "center": [0.5,0.5,0.5],
                "radius": 0.2, "direction": [0,1,0]}}"#,
        )
        .unwrap();
        assert!(matches!(c.model, Some(ModelConfig::Da(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ConfigFile::parse(r#"{"modle": {}}"#), Err(CliError::Config(_))));
    }

    #[test]
    fn kan_a_zero_names_condition_three() {
        let e = validated_kan(0.0, 0.0).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("condition (3)"), "{e}");
    }
}
