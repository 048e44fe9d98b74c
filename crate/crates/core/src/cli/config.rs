use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::eval_harness::ClickModel;
use crate::intent_filter::IntentFilterConfig;
use crate::llm_alternator::{DiversityConfig, HttpClientConfig};
use crate::query_repr::SimilarityConfig;
use crate::sequence_miner::PruneConfig;

/// Stage files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub events: PathBuf,
    pub chains: PathBuf,
    pub profiles: PathBuf,
    pub journeys: PathBuf,
    pub candidates: PathBuf,
    pub store: PathBuf,
    /// JSON report; the text table goes next to it with a `.txt` extension.
    pub report: PathBuf,
    /// Mock LLM fixtures (JSONL).
    pub fixtures: Option<PathBuf>,
    /// Few-shot exemplars (JSONL of `{"journey": .., "response": ..}`).
    pub few_shots: Option<PathBuf>,
    /// When set, synthesized impression logs are written here.
    pub impressions_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            events: "events.jsonl".into(),
            chains: "chains.jsonl".into(),
            profiles: "profiles.jsonl".into(),
            journeys: "journeys.jsonl".into(),
            candidates: "candidates.jsonl".into(),
            store: "store.jsonl".into(),
            report: "report.json".into(),
            fixtures: None,
            few_shots: None,
            impressions_dir: None,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.events,
            &mut self.chains,
            &mut self.profiles,
            &mut self.journeys,
            &mut self.candidates,
            &mut self.store,
            &mut self.report,
        ] {
            join(p);
        }
        for p in [&mut self.fixtures, &mut self.few_shots, &mut self.impressions_dir]
            .into_iter()
            .flatten()
        {
            join(p);
        }
    }

    pub fn report_table(&self) -> PathBuf {
        self.report.with_extension("txt")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlternatorSettings {
    pub k: usize,
    pub strict_json: bool,
    /// Answer from `paths.fixtures` instead of calling the endpoint.
    pub mock: bool,
    pub client: HttpClientConfig,
}

impl Default for AlternatorSettings {
    fn default() -> Self {
        AlternatorSettings {
            k: crate::llm_alternator::DEFAULT_K,
            strict_json: false,
            mock: false,
            client: HttpClientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSettings {
    pub bind: String,
    /// Snapshot poll interval; 0 disables reloading.
    pub reload_interval_ms: u64,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings {
            bind: "127.0.0.1:8080".into(),
            reload_interval_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub n_impressions: usize,
    pub click_model: ClickModel,
    /// Replay these impression logs instead of synthesizing traffic.
    pub baseline_log: Option<PathBuf>,
    pub variant_log: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_impressions: 10_000,
            click_model: ClickModel::default(),
            baseline_log: None,
            variant_log: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub intent: IntentFilterConfig,
    pub similarity: SimilarityConfig,
    pub prune: PruneConfig,
    pub alternator: AlternatorSettings,
    pub diversity: DiversityConfig,
    pub serve: ServeSettings,
    pub eval: EvalSettings,
    pub seed: u64,
    /// Stamped on every suggestion record.
    pub built_at_ms: u64,
}

impl PipelineConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad config: {e}")))?;
        cfg.paths.resolve(base);
        let resolve_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve_opt(&mut cfg.eval.baseline_log);
        resolve_opt(&mut cfg.eval.variant_log);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let config = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.intent.validate().map_err(|e| config(&e))?;
        self.similarity.validate().map_err(|e| config(&e))?;
        self.diversity.validate().map_err(|e| config(&e))?;
        self.eval.click_model.validate().map_err(|e| config(&e))?;
        if self.prune.min_support < 1 {
            return Err(CliError::Config("prune.min_support must be >= 1".into()));
        }
        if self.alternator.k < 1 {
            return Err(CliError::Config("alternator.k must be >= 1".into()));
        }
        if self.alternator.mock && self.paths.fixtures.is_none() {
            return Err(CliError::Config("alternator.mock requires paths.fixtures".into()));
        }
        if self.eval.baseline_log.is_some() != self.eval.variant_log.is_some() {
            return Err(CliError::Config(
                "eval.baseline_log and eval.variant_log go together".into(),
            ));
        }
        self.bind_addr()?;
        Ok(())
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, CliError> {
        self.serve
            .bind
            .parse()
            .map_err(|e| CliError::Config(format!("bad serve.bind {:?}: {e}", self.serve.bind)))
    }
}
