//! Whole-run configuration: data generation, model widths, training and
//! evaluation, with two named presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::shape_encoder::ShapeEncoderConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub shapes: usize,
    pub classes: usize,
    pub points_per_shape: usize,
    /// Held-out fraction of shapes; 0 evaluates on the full corpus.
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for generation, initialization, batching and splitting.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ShapeEncoderConfig,
    pub train: TrainConfig,
    pub eval_k: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected desk or paper)"))),
        }
    }
}

impl RunConfig {
    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            seed: 7,
            data: DataConfig {
                shapes: 64,
                classes: 4,
                points_per_shape: 256,
                test_fraction: 0.0,
            },
            model: ShapeEncoderConfig::default(),
            train: TrainConfig::default(),
            eval_k: vec![1, 5],
        }
    }

    /// Full-scale settings: 1024-d embeddings, batch 128, 50 + 20 epochs.
    pub fn paper() -> Self {
        let desk = Self::desk();
        Self {
            model: ShapeEncoderConfig {
                d1: 64,
                d2: 128,
                d3: 1024,
                d_mid: 1024,
                d_color: 64,
                embed_dim: 1024,
                ..desk.model
            },
            train: TrainConfig {
                margin: 0.2,
                beta: 40.0,
                stage1_epochs: 50,
                stage2_epochs: 20,
                batch_size: 128,
                ..desk.train
            },
            ..desk
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Applies a partial JSON document on top of `self`; unknown keys are rejected.
    pub fn merged(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overrides);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Preset values overridden by the JSON file at `path`.
    pub fn from_file(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overrides: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !overrides.is_object() {
            return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
        }
        Self::preset(preset).merged(&overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.shapes < 2 || d.classes < 2 || d.points_per_shape == 0 {
            return Err(Error::Config(
                "data needs at least 2 shapes, 2 classes and 1 point per shape".into(),
            ));
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(Error::Config(format!("test_fraction must lie in [0, 1), got {}", d.test_fraction)));
        }
        let m = &self.model;
        if [m.d1, m.d2, m.d3, m.d_mid, m.d_color, m.embed_dim].contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.eval_k.is_empty() || self.eval_k.contains(&0) {
            return Err(Error::Config("eval_k needs at least one cutoff, all >= 1".into()));
        }
        self.train.validate()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
