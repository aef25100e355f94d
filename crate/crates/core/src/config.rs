//! Run configuration: one JSON document covering model, training, pruner and
//! rendering, with presets and dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::{PrunerState, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub chunk_rays: usize,
    /// Composited behind every ray, and behind RGBA training images.
    pub background: [f32; 3],
    /// Skip decoding samples whose saliency weight falls below this.
    pub skip_threshold: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 128,
            chunk_rays: 4096,
            background: [1.0, 1.0, 1.0],
            skip_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pruner: PrunerState,
    pub render: RenderConfig,
}

impl RunConfig {
    /// Full-scale defaults.
    pub fn full() -> Self {
        Self::default()
    }

    /// Small synthetic scenes on one CPU core.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.model.hashgrid.log2_table_size = 12;
        cfg.model.saliency.resolution = 16;
        cfg.train.steps = 20_000;
        cfg.train.rays_per_step = 128;
        cfg.train.samples_per_ray = 32;
        cfg.train.eval_interval = 2_000;
        cfg.train.eval_views = Some(4);
        cfg.pruner.budget = 0.04;
        cfg.render.samples_per_ray = 64;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Usage(format!("unknown preset '{other}' (full, desk)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.hashgrid.validate()?;
        self.model.param_count()?;
        self.train.validate()?;
        self.pruner.validate()?;
        if self.render.samples_per_ray == 0 || self.render.chunk_rays == 0 {
            return Err(Error::Config("render samples_per_ray and chunk_rays must be positive".into()));
        }
        if self.model.saliency.enabled && self.model.saliency.resolution < 2 {
            return Err(Error::Config("saliency resolution must be at least 2".into()));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides in order. Keys are dotted paths into the
    /// JSON form and must already exist; values parse as JSON, falling back
    /// to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = self.to_value();
        for o in overrides {
            apply_override(&mut v, o.as_ref())?;
        }
        let cfg = Self::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override '{assignment}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Usage(format!("'{}' is not a section", parts[..i].join("."))))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Usage(format!("unknown config key '{key}'")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(Error::Usage("empty override key".into()))
}

/// Recursive object merge, `patch` winning.
pub fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
