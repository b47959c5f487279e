//! Experiment configuration: presets, JSON files and dotted overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::figures::AnalysisConfig;
use crate::error::{Error, Result};
use crate::model::{Arch, ModelConfig};
use crate::tasks::{DataConfig, Task};
use crate::train::{EvalConfig, Preset, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, arch: Arch) -> Self {
        match preset {
            Preset::Paper => Self::paper(arch),
            Preset::Desk => Self::desk(arch),
        }
    }

    pub fn paper(arch: Arch) -> Self {
        let data = DataConfig::default();
        let model = match arch {
            Arch::Transformer => ModelConfig::paper_transformer(data.vocab_size()),
            Arch::Lstm => ModelConfig::paper_lstm(data.vocab_size()),
        };
        ExperimentConfig {
            model,
            train: TrainConfig::paper(),
            data,
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
            out_dir: PathBuf::from("runs/paper"),
        }
    }

    /// Reduced recipe that trains on one CPU core in minutes.
    pub fn desk(arch: Arch) -> Self {
        let data = DataConfig {
            examples_per_seq: [5, 10],
            ..DataConfig::default()
        };
        let model = ModelConfig {
            arch,
            num_layers: match arch {
                Arch::Transformer => 4,
                Arch::Lstm => 2,
            },
            model_dim: 64,
            num_heads: 4,
            mlp_dim: 128,
            vocab_size: data.vocab_size(),
            max_seq_len: 1024,
            phi_position: match arch {
                Arch::Transformer => 2,
                Arch::Lstm => 1,
            },
            tie_embeddings: false,
            rope_base: 10000.0,
            init_std: 0.02,
            std_floor: 1e-4,
            warm_start_sep_prob: Some(data.separator_rate()),
        };
        let train = TrainConfig {
            steps: 6000,
            batch_size: 8,
            lr: 2e-3,
            warmup_steps: 100,
            clip_norm: 1.0,
            seed: 0,
            preset: Preset::Desk,
            eval_every: 100,
            checkpoint_every: 500,
            free_bits: 0.01,
            ..TrainConfig::paper()
        };
        ExperimentConfig {
            model,
            train,
            data,
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
            out_dir: PathBuf::from("runs/desk"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        self.train.validate()?;
        self.analysis.validate()?;
        if self.model.vocab_size != self.data.vocab_size() {
            return Err(Error::config(
                "model.vocab_size",
                format!("must equal data.total_vocab + 2 = {}", self.data.vocab_size()),
            ));
        }
        let longest = self.data.example_len[1] * self.data.examples_per_seq[1] + self.data.examples_per_seq[1];
        if self.model.max_seq_len < longest {
            return Err(Error::config(
                "model.max_seq_len",
                format!("sequences can reach {longest} tokens"),
            ));
        }
        if self.eval.per_task == 0 {
            return Err(Error::config("eval.per_task", "must be positive"));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// The config without `out_dir`: what identifies a run independently of
    /// where it is stored. Hashed into run ids and stored in checkpoints.
    pub fn identity(&self) -> Value {
        let mut v = self.to_value();
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
        }
        v
    }

    /// Canonical JSON text (keys in declaration order, pretty-printed).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Pinned desk recipe behind `repro-fig`: figures 2 and 3 share a
/// multi-task run, figure 4 trains on in-context language learning alone and
/// evaluates many fresh automata. `copy` adds the copying task.
pub fn recipe(figure: u8, arch: Arch, copy: bool) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::desk(arch);
    let arch_name = match arch {
        Arch::Transformer => "transformer",
        Arch::Lstm => "lstm",
    };
    match figure {
        2 | 3 => {
            cfg.train.enabled_tasks = Task::FOUR.to_vec();
            if copy {
                cfg.train.enabled_tasks.push(Task::Copy);
            }
            let tag = if copy { "tasks5" } else { "tasks4" };
            cfg.out_dir = PathBuf::from(format!("runs/{tag}-{arch_name}"));
        }
        4 => {
            cfg.train.enabled_tasks = vec![Task::Icll];
            cfg.eval.per_task = 1000;
            cfg.out_dir = PathBuf::from(format!("runs/icll-{arch_name}"));
        }
        other => return Err(Error::config("figure", format!("expected 2, 3 or 4, got {other}"))),
    }
    Ok(cfg)
}

/// Sets `path` (dot-separated) in `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::config(path, "empty key segment"));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(parts[..i].join("."), "is not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

/// Deep merge: objects merge key by key, everything else is replaced.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses an override value as JSON, falling back to a plain string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Preset, then the config file, then overrides; finally validation.
pub fn parse_config(path: Option<&Path>, preset: Preset, arch: Arch, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    parse_config_from(ExperimentConfig::preset(preset, arch), path, overrides)
}

/// Like [`parse_config`] but starting from an already expanded base.
pub fn parse_config_from(base: ExperimentConfig, path: Option<&Path>, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let mut value = base.to_value();
    if let Some(path) = path {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        if !text.trim().is_empty() {
            let file: Value = serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
            if !file.is_object() {
                return Err(Error::config("", "config file must hold a JSON object"));
            }
            merge(&mut value, file);
        }
    }
    for (k, v) in overrides {
        set_path(&mut value, k, v.clone())?;
    }
    from_value(value)
}

/// Deserializes with key paths in error messages, then validates.
pub fn from_value(value: Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}
