use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use decker_core::harness::{MemoryMode, Mode, RunConfig};
use decker_core::knowledge::MatchMode;
use decker_core::resolve::ConflictConfig;
use decker_core::selection::SampleConfig;
use decker_core::synth::{CaseSetSpec, FaultMode};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hash,
    Remote,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Canonical,
    Mquake,
}

/// Every run setting. Flags and the JSON config file share these names
/// (kebab-case on the command line, snake_case in the file); a flag wins over
/// the file, the file over built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_format: Option<DatasetFormat>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Per-candidate JSONL trace.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Samples per question in bon mode.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logprobs_k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit_batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval_k: Option<usize>,
    /// Master sampling seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long = "match")]
    #[serde(rename = "match", skip_serializing_if = "Option::is_none")]
    pub match_mode: Option<MatchMode>,
    /// Try every rewrite even after a correct one.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub all_rewrites: Option<bool>,
    /// Leave the answer entity out of type-check scoring.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ki_exclude_answer: Option<bool>,
    /// `original` fills the memory with the facts the edits replace.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemoryMode>,
    /// Record wall-clock timings in the report (makes it nondeterministic).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<bool>,

    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend_url: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Reply fixtures for the scripted backend.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Environment variable holding the API key.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,

    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder: Option<EmbedderKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder_url: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder_dim: Option<usize>,
    /// `{text: vector}` map for the scripted embedder.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder_fixtures: Option<PathBuf>,

    /// Seed of the synthetic world (and of generated cases).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kg_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kg_entities: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kg_relations: Option<usize>,
    /// Number of synthetic cases when no dataset is given.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cases: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hops: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_edits: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault_mode: Option<FaultMode>,
}

pub const DEFAULT_API_KEY_ENV: &str = "DECKER_API_KEY";
pub const DEFAULT_REPORT: &str = "decker-report.json";

impl Settings {
    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set here replace those of `base`.
    pub fn over(&self, base: &Settings) -> Result<Settings> {
        let mut merged = serde_json::to_value(base)?;
        let top = serde_json::to_value(self)?;
        if let (Value::Object(m), Value::Object(t)) = (&mut merged, top) {
            m.extend(t);
        }
        let mut out: Settings = serde_json::from_value(merged)?;
        out.config = self.config.clone();
        Ok(out)
    }

    /// Flags over the config file named by `--config`, if any.
    pub fn resolve(flags: &Settings) -> Result<Settings> {
        match &flags.config {
            Some(path) => flags.over(&Settings::from_file(path)?),
            None => Ok(flags.clone()),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let d = RunConfig::default();
        let ds = SampleConfig::default();
        let dc = ConflictConfig::default();
        let config = RunConfig {
            mode: self.mode.unwrap_or(d.mode),
            conflict: ConflictConfig {
                alpha: self.alpha.unwrap_or(dc.alpha),
                beta: self.beta.unwrap_or(dc.beta),
            },
            sample: SampleConfig {
                n: self.n.unwrap_or(ds.n),
                top_p: self.top_p.unwrap_or(ds.top_p),
                temperature: self.temperature.unwrap_or(ds.temperature),
                keep_fraction: self.keep_fraction.unwrap_or(ds.keep_fraction),
                logprobs_k: self.logprobs_k.unwrap_or(ds.logprobs_k),
            },
            edit_batch_size: self.edit_batch_size.unwrap_or(d.edit_batch_size),
            parallelism: self.parallelism.unwrap_or(d.parallelism),
            retrieval_k: self.retrieval_k.unwrap_or(d.retrieval_k),
            match_mode: self.match_mode.unwrap_or(d.match_mode),
            all_rewrites: self.all_rewrites.unwrap_or(d.all_rewrites),
            ki_include_answer: !self.ki_exclude_answer.unwrap_or(!d.ki_include_answer),
            memory: self.memory.unwrap_or(d.memory),
            seed: self.seed.unwrap_or(d.seed),
            generation_max_tokens: d.generation_max_tokens,
            record_timing: self.timing.unwrap_or(d.record_timing),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn case_spec(&self) -> CaseSetSpec {
        let d = CaseSetSpec::default();
        CaseSetSpec {
            count: self.cases.unwrap_or(d.count),
            hops: self.hops.clone().unwrap_or(d.hops),
            max_edits: self.max_edits.unwrap_or(d.max_edits),
            group_size: self.group_size.unwrap_or(d.group_size),
            seed: self.kg_seed.unwrap_or(d.seed),
        }
    }

    pub fn kg_shape(&self) -> (u64, usize, usize) {
        (
            self.kg_seed.unwrap_or(0),
            self.kg_entities.unwrap_or(60),
            self.kg_relations.unwrap_or(8),
        )
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.unwrap_or(BackendKind::Remote)
    }

    pub fn api_key_env(&self) -> &str {
        self.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV)
    }

    pub fn check(&self) -> Result<()> {
        if self.backend_kind() == BackendKind::Remote && self.backend_url.is_none() {
            bail!("the remote backend needs --backend-url");
        }
        if self.backend_kind() == BackendKind::Scripted && self.fixtures.is_none() {
            bail!("the scripted backend needs --fixtures");
        }
        Ok(())
    }
}
