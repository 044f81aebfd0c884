//! The run configuration file: JSON, versioned, unknown keys rejected.
//! Every section is optional and falls back to its documented defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::{RequirementKind, SafetyRequirement, DEFAULT_INFEASIBLE_PENALTY};
use crate::ecf::{TimeoutFallback, DEFAULT_REVIEW_TIMEOUT};
use crate::env::EnvConfig;
use crate::evolution::{EvolutionConfig, ScoreSource};
use crate::llm::{ChatBackend, HttpChatClient, LlmEndpointConfig, LlmError, MockScript};
use crate::ppo::{LagrangeConfig, PpoConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    #[default]
    Off,
    Live,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub mode: LlmMode,
    /// Directory of numbered response files for `mode = mock`.
    pub fixtures: Option<PathBuf>,
    pub endpoint: LlmEndpointConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySection {
    pub kind: RequirementKind,
    pub d: f64,
    pub epsilon: f64,
    /// Penalty of the infeasible branch of the constrained fitness.
    pub n: f64,
}

impl Default for SafetySection {
    fn default() -> Self {
        SafetySection {
            kind: RequirementKind::Traditional,
            d: 10.0,
            epsilon: 0.0,
            n: DEFAULT_INFEASIBLE_PENALTY,
        }
    }
}

impl SafetySection {
    pub fn requirement(&self) -> Result<SafetyRequirement, String> {
        SafetyRequirement::new(self.kind, self.d, self.epsilon).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Parent directory of all run directories.
    pub root: PathBuf,
    /// Fixed run id. A fresh timestamped id is chosen when absent.
    pub run_id: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            root: PathBuf::from("runs"),
            run_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewMode {
    #[default]
    Auto,
    Interactive,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub mode: ReviewMode,
    pub timeout_s: f64,
    pub fallback: TimeoutFallback,
}

impl Default for ReviewSection {
    fn default() -> Self {
        ReviewSection {
            mode: ReviewMode::Auto,
            timeout_s: DEFAULT_REVIEW_TIMEOUT.as_secs_f64(),
            fallback: TimeoutFallback::Auto,
        }
    }
}

impl ReviewSection {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Episodes of the final deterministic evaluation.
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub lambda_lr: f64,
    pub init_lambda: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let lag = LagrangeConfig::default();
        TrainSection {
            eval_episodes: 20,
            eval_seed: crate::fpe::DEFAULT_EVAL_SEED,
            lambda_lr: lag.lambda_lr,
            init_lambda: lag.init_lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    /// Extra seed-library entries, one `.cost` file each.
    #[serde(default)]
    pub seed_library_paths: Vec<PathBuf>,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub safety: SafetySection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub review: ReviewSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            train: TrainSection::default(),
            evolution: EvolutionConfig::default(),
            seed_library_paths: Vec::new(),
            llm: LlmSection::default(),
            safety: SafetySection::default(),
            output: OutputSection::default(),
            review: ReviewSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses `text` without touching the filesystem.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Ok(cfg)
    }

    /// Reads, resolves relative paths against the file's directory, folds
    /// in seed-library files, and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) -> Result<(), ConfigError> {
        self.output.root = resolve(base, &self.output.root);
        if let Some(f) = &self.llm.fixtures {
            self.llm.fixtures = Some(resolve(base, f));
        }
        for p in std::mem::take(&mut self.seed_library_paths) {
            let full = resolve(base, &p);
            let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::Io {
                path: full.clone(),
                source,
            })?;
            let text = text.trim().to_string();
            if !self.evolution.seed_library.contains(&text) {
                self.evolution.seed_library.push(text);
            }
        }
        Ok(())
    }

    /// Collects every problem instead of stopping at the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if let Err(e) = self.env.validate() {
            errs.push(format!("env: {e}"));
        }
        if let Err(e) = self.ppo.validate() {
            errs.push(format!("ppo: {e}"));
        }
        if let Err(e) = self.evolution.validate(&self.env, &self.ppo) {
            errs.push(format!("evolution: {e}"));
        }
        if let Err(e) = self.safety.requirement() {
            errs.push(format!("safety: {e}"));
        }
        if !(self.safety.n > 0.0 && self.safety.n.is_finite()) {
            errs.push("safety: n must be > 0".into());
        }
        if !(self.review.timeout_s > 0.0 && self.review.timeout_s.is_finite()) {
            errs.push("review: timeout_s must be > 0".into());
        }
        if self.train.eval_episodes == 0 {
            errs.push("train: eval_episodes must be >= 1".into());
        }
        match self.llm.mode {
            LlmMode::Mock if self.llm.fixtures.is_none() => errs.push("llm: mode mock needs `fixtures`".into()),
            LlmMode::Off if self.evolution.score_source != ScoreSource::Expr => {
                errs.push("evolution: score_source llm needs an llm mode other than off".into())
            }
            _ => {}
        }
        if self.llm.mode == LlmMode::Off && self.evolution.seed_library.is_empty() {
            errs.push("evolution: empty seed library and no llm leaves nothing to evolve".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    pub fn requirement(&self) -> SafetyRequirement {
        self.safety.requirement().expect("validated")
    }

    pub fn lagrange(&self) -> LagrangeConfig {
        LagrangeConfig {
            cost_limit: self.safety.d,
            lambda_lr: self.train.lambda_lr,
            init_lambda: self.train.init_lambda,
        }
    }

    /// The configured generator, or `None` when the LLM is off.
    pub fn backend(&self) -> Result<Option<Box<dyn ChatBackend>>, LlmError> {
        Ok(match self.llm.mode {
            LlmMode::Off => None,
            LlmMode::Mock => {
                let dir = self.llm.fixtures.as_ref().ok_or_else(|| LlmError::Config("no fixtures".into()))?;
                Some(Box::new(MockScript::from_dir(dir)?))
            }
            LlmMode::Live => Some(Box::new(HttpChatClient::new(self.llm.endpoint.clone().with_env())?)),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
