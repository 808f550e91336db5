//! Pipeline configuration: one JSON file plus dotted `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingSource;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::generation::GenerationConfig;
use crate::nli::NliBackend;
use crate::pairing::PairingConfig;
use crate::quantizer::QuantizerConfig;
use crate::retriever::RetrievalConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Review file (JSONL), relative to the config file.
    pub input: PathBuf,
    /// Optional reference summaries (JSONL of `{"entity_id", "summary"}`).
    pub references: Option<PathBuf>,
    /// Directory for every artifact of the run.
    pub work_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("reviews.jsonl"),
            references: None,
            work_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random substream in the run.
    pub seed: u64,
    pub paths: PathsConfig,
    pub embeddings: EmbeddingSource,
    pub nli: NliBackend,
    pub pairing: PairingConfig,
    pub quantizer: QuantizerConfig,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationConfig,
    pub eval: EvalConfig,
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.pairing;
        unit("pairing.cand_threshold", p.cand_threshold)?;
        unit("pairing.max_sim", p.max_sim)?;
        unit("pairing.neg_threshold", p.neg_threshold)?;
        unit("pairing.entail_threshold", p.entail_threshold)?;
        if p.cand_threshold > p.max_sim {
            return Err(Error::Config("pairing.cand_threshold must not exceed pairing.max_sim".into()));
        }
        if p.k_candidates == 0 {
            return Err(Error::Config("pairing.k_candidates must be >= 1".into()));
        }
        self.quantizer.validate()?;
        self.retrieval.validate()?;
        unit("retrieval.drop_threshold", self.retrieval.drop_threshold)?;
        unit("retrieval.merge_threshold", self.retrieval.merge_threshold)?;
        self.generation.validate()?;
        self.eval.validate()?;
        match &self.embeddings {
            EmbeddingSource::Mock { dim, .. } if *dim != self.quantizer.dim => Err(Error::Config(format!(
                "embeddings.dim ({dim}) must equal quantizer.dim ({})",
                self.quantizer.dim
            ))),
            _ => Ok(()),
        }
    }

    /// Parse, apply overrides, then validate.
    pub fn from_json_with_overrides(json: &str, overrides: &[String]) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(json)?;
        if value.is_null() {
            value = serde_json::json!({});
        }
        // Materialize defaults so every known key can be overridden.
        let base: PipelineConfig = serde_json::from_value(value)?;
        let mut value = serde_json::to_value(&base)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file; a missing path means all defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let json = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => "{}".into(),
        };
        Self::from_json_with_overrides(&json, overrides)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Apply one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise. Every key on the path must
/// already exist, except inside free-form maps such as backend settings.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("override {key:?}: unknown key {part:?}")))?;
        if node.is_null() {
            *node = serde_json::json!({});
        }
    }
    unreachable!("override path has at least one part")
}
