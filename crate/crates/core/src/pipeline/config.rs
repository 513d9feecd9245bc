use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DistillSettings, Experiment, Participant};
use crate::error::ResultExt;
use crate::features::{Dataset, DatasetSchema, RawTable};
use crate::learners::{ModelSpec, TrainedModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantConfig {
    pub name: String,
    pub data: PathBuf,
    pub schema: PathBuf,
    /// Trained on `data` before distillation starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    /// A model file written by `codist train`; its embedded spec is used for retraining.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_file: Option<PathBuf>,
}

/// The experiment file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub test_data: PathBuf,
    #[serde(default)]
    pub distillation: DistillSettings,
    pub participants: Vec<ParticipantConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "experiment config".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "experiment config".into(),
            message: e.to_string(),
        })
    }

    /// Reads a config, or the config embedded in a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).context(|| format!("reading {}", path.display()))?;
        let value: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse {
            what: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = if value.contains_key("config") {
            RunManifest::from_toml(&text)?.config
        } else {
            Self::from_toml(&text)?
        };
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        config.resolve_paths(base);
        Ok(config)
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.test_data);
        for p in &mut self.participants {
            fix(&mut p.data);
            fix(&mut p.schema);
            if let Some(m) = &mut p.model_file {
                fix(m);
            }
        }
    }

    /// Loads data and schemas and trains (or loads) every participant's model.
    pub fn build(&self) -> Result<Experiment> {
        self.distillation.validate()?;
        let mut participants = Vec::with_capacity(self.participants.len());
        for pc in &self.participants {
            let context = || format!("participant {:?}", pc.name);
            let schema = DatasetSchema::load(&pc.schema).context(context)?;
            let data = Dataset::load(&schema, &pc.data).context(context)?;
            let participant = match (&pc.model, &pc.model_file) {
                (Some(spec), None) => Participant::train(pc.name.clone(), data, spec.clone())?,
                (None, Some(file)) => {
                    let bytes = std::fs::read(file).context(|| format!("reading {}", file.display()))?;
                    let model = TrainedModel::deserialize(&bytes).context(context)?;
                    if model.labels() != schema.classes() || model.input_dim() != schema.dimensionality() {
                        return Err(Error::InvalidConfig(format!(
                            "model file {} does not match the schema of participant {:?}",
                            file.display(),
                            pc.name
                        )));
                    }
                    Participant {
                        name: pc.name.clone(),
                        data,
                        spec: model.spec().clone(),
                        model,
                    }
                }
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "participant {:?} needs exactly one of `model` or `model_file`",
                        pc.name
                    )))
                }
            };
            participants.push(participant);
        }
        let test = RawTable::read_csv(&self.test_data).context(|| format!("reading {}", self.test_data.display()))?;
        let experiment = Experiment {
            settings: self.distillation.clone(),
            participants,
            test,
        };
        experiment.validate()?;
        Ok(experiment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSeed {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub distillation: u64,
    pub models: Vec<ModelSeed>,
}

/// Everything needed to rerun a distillation. Loading it with
/// [`ExperimentConfig::load`] yields the resolved config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seeds: SeedRecord,
    pub timings: std::collections::BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, experiment: &Experiment, timings: &[(String, f64)]) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: SeedRecord {
                distillation: experiment.settings.seed,
                models: experiment
                    .participants
                    .iter()
                    .map(|p| ModelSeed {
                        name: p.name.clone(),
                        seed: p.spec.seed,
                    })
                    .collect(),
            },
            timings: timings.iter().cloned().collect(),
            config: config.clone(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "run manifest".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "run manifest".into(),
            message: e.to_string(),
        })
    }
}
