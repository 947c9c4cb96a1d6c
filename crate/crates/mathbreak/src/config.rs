//! Harness configuration: a single JSON file holding dataset, asset paths,
//! endpoints, and every experimental constant. Secrets never live here; they
//! are named environment variables on the endpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::candidates::CandidateParams;
use crate::corpus::TaskKind;
use crate::engine::PreliminaryComparison;
use crate::error::{Error, Result};
use crate::gateway::ModelEndpoint;
use crate::metrics::{LengthScope, DEFAULT_HISTOGRAM_EDGES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub task_kind: TaskKind,
    /// Defaults to the dataset file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl DatasetConfig {
    pub fn id(&self) -> String {
        match &self.id {
            Some(id) => id.clone(),
            None => self
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Embedding neighbors retrieved per word.
    #[serde(default = "default_embedding_k")]
    pub embedding_k: usize,
    /// Dictionary candidates kept after cosine re-ranking.
    #[serde(default = "default_wordnet_top")]
    pub wordnet_top: usize,
    /// Minimum masked-LM probability (strict).
    #[serde(default = "default_mlm_threshold")]
    pub mlm_threshold: f64,
    /// Masked-LM distribution truncation.
    #[serde(default = "default_mlm_top_n")]
    pub mlm_top_n: usize,
}

fn default_embedding_k() -> usize {
    10
}
fn default_wordnet_top() -> usize {
    5
}
fn default_mlm_threshold() -> f64 {
    0.1
}
fn default_mlm_top_n() -> usize {
    50
}
fn default_temperature() -> f64 {
    0.6
}
fn default_runs() -> u32 {
    3
}
fn default_workers() -> usize {
    1
}
fn default_edges() -> Vec<f64> {
    DEFAULT_HISTOGRAM_EDGES.to_vec()
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            embedding_k: default_embedding_k(),
            wordnet_top: default_wordnet_top(),
            mlm_threshold: default_mlm_threshold(),
            mlm_top_n: default_mlm_top_n(),
        }
    }
}

impl Thresholds {
    pub fn candidate_params(&self) -> CandidateParams {
        CandidateParams {
            embedding_k: self.embedding_k,
            wordnet_top: self.wordnet_top,
            mlm_threshold: self.mlm_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<PathBuf>,
    /// Directory holding WNDB `index.*` / `data.*` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wordnet: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_endpoint: Option<ModelEndpoint>,
    pub target_endpoints: Vec<ModelEndpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_endpoint: Option<ModelEndpoint>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_runs")]
    pub runs: u32,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub replay: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub preliminary_comparison: PreliminaryComparison,
    #[serde(default)]
    pub length_mean_scope: LengthScope,
    #[serde(default = "default_edges")]
    pub histogram_edges: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_prompt: Option<String>,
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: HarnessConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature < 0.0 {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        if self.runs < 1 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.thresholds.embedding_k == 0
            || self.thresholds.wordnet_top == 0
            || self.thresholds.mlm_top_n == 0
        {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        if !(self.thresholds.mlm_threshold > 0.0 && self.thresholds.mlm_threshold < 1.0) {
            return Err(Error::Config("mlm_threshold must be in (0, 1)".into()));
        }
        if self.target_endpoints.is_empty() {
            return Err(Error::Config("at least one target endpoint required".into()));
        }
        if self.replay && self.cache_dir.is_none() {
            return Err(Error::Config("replay requires cache_dir".into()));
        }
        for ep in self
            .target_endpoints
            .iter()
            .chain(&self.masked_endpoint)
            .chain(&self.judge_endpoint)
        {
            ep.validate()?;
        }
        if self.histogram_edges.len() < 2
            || self.histogram_edges.windows(2).any(|w| w[0] >= w[1])
            || self.histogram_edges[0] < 0.0
        {
            return Err(Error::Config(
                "histogram_edges must be >= 2 strictly increasing values starting >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Attack campaigns additionally need the candidate-source assets.
    pub fn validate_for_attack(&self, use_judge: bool) -> Result<()> {
        self.validate()?;
        if self.embedding.is_none() {
            return Err(Error::Config("attack requires \"embedding\"".into()));
        }
        if self.wordnet.is_none() {
            return Err(Error::Config("attack requires \"wordnet\"".into()));
        }
        if self.masked_endpoint.is_none() {
            return Err(Error::Config("attack requires \"masked_endpoint\"".into()));
        }
        if use_judge && self.judge_endpoint.is_none() {
            return Err(Error::Config(
                "attack requires \"judge_endpoint\" (or pass --no-judge)".into(),
            ));
        }
        Ok(())
    }

    pub fn find_target(&self, name: Option<&str>) -> Result<&ModelEndpoint> {
        match name {
            None => self
                .target_endpoints
                .first()
                .ok_or_else(|| Error::Config("no target endpoints".into())),
            Some(n) => self
                .target_endpoints
                .iter()
                .find(|e| e.name == n)
                .ok_or_else(|| Error::Config(format!("no target endpoint named {n:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EndpointKind, DEFAULT_MASK_TOKEN};

    fn minimal() -> HarnessConfig {
        HarnessConfig {
            dataset: DatasetConfig {
                path: PathBuf::from("data/gsm8k.jsonl"),
                task_kind: TaskKind::Gsm8k,
                id: None,
            },
            embedding: Some(PathBuf::from("assets/vectors.vec")),
            wordnet: Some(PathBuf::from("assets/wndb")),
            masked_endpoint: Some(ModelEndpoint::scripted("bert", PathBuf::from("m.json"))),
            target_endpoints: vec![ModelEndpoint::scripted("target", PathBuf::from("t.json"))],
            judge_endpoint: Some(ModelEndpoint::scripted("judge", PathBuf::from("j.json"))),
            thresholds: Thresholds::default(),
            temperature: 0.6,
            runs: 3,
            workers: 1,
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            replay: false,
            seed: Some(7),
            preliminary_comparison: PreliminaryComparison::Gold,
            length_mean_scope: LengthScope::SuccessOnly,
            histogram_edges: DEFAULT_HISTOGRAM_EDGES.to_vec(),
            judge_prompt: None,
        }
    }

    #[test]
    fn round_trips_through_render_and_parse() {
        let config = minimal();
        let text = config.render();
        let parsed: HarnessConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn defaults_match_experiment_constants() {
        let t = Thresholds::default();
        assert_eq!(t.embedding_k, 10);
        assert_eq!(t.wordnet_top, 5);
        assert_eq!(t.mlm_threshold, 0.1);
        assert_eq!(default_temperature(), 0.6);
        assert_eq!(default_runs(), 3);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut c = minimal();
        c.runs = 0;
        assert!(c.validate().is_err());

        let mut c = minimal();
        c.temperature = -1.0;
        assert!(c.validate().is_err());

        let mut c = minimal();
        c.thresholds.mlm_threshold = 0.0;
        assert!(c.validate().is_err());

        let mut c = minimal();
        c.target_endpoints.clear();
        assert!(c.validate().is_err());

        let mut c = minimal();
        c.replay = true;
        assert!(c.validate().is_err());
        c.cache_dir = Some(PathBuf::from("cache"));
        assert!(c.validate().is_ok());

        let mut c = minimal();
        c.histogram_edges = vec![2.0, 1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn attack_validation_requires_assets() {
        let mut c = minimal();
        c.embedding = None;
        assert!(c.validate_for_attack(true).is_err());

        let mut c = minimal();
        c.judge_endpoint = None;
        assert!(c.validate_for_attack(true).is_err());
        assert!(c.validate_for_attack(false).is_ok());
    }

    #[test]
    fn dataset_id_defaults_to_stem() {
        let c = minimal();
        assert_eq!(c.dataset.id(), "gsm8k");
    }

    #[test]
    fn find_target_by_name() {
        let mut c = minimal();
        c.target_endpoints.push(ModelEndpoint {
            name: "second".into(),
            kind: EndpointKind::Scripted,
            base_url: None,
            model: None,
            asset: Some(PathBuf::from("s.json")),
            args: vec![],
            auth_env: None,
            max_retries: 3,
            rate_limit_rpm: None,
            mask_token: DEFAULT_MASK_TOKEN.into(),
            solve_prompt: None,
            tokenizer_vocab: None,
            retry_backoff_ms: 1,
        });
        assert_eq!(c.find_target(None).unwrap().name, "target");
        assert_eq!(c.find_target(Some("second")).unwrap().name, "second");
        assert!(c.find_target(Some("missing")).is_err());
    }
}
