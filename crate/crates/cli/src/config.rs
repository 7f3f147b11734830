//! Run configuration: one TOML document is the source of truth, flags
//! override it, and the resolved config (plus its hash) is captured in every
//! manifest so a run can be reproduced from its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use troupe_core::clock::ClockKind;
use troupe_core::gateway::{BackendConfig, BackendKind, BackoffPolicy, Script, TraceFilter};
use troupe_core::{EvaluationConfig, SimulationConfig, TurnControlConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelsConfig {
    pub protagonist: String,
    pub npc: String,
    pub environment: String,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            protagonist: "model-alpha".to_string(),
            npc: "npc-backbone".to_string(),
            environment: "env-backbone".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKindConfig {
    Scripted,
    Http,
}

/// One backend entry in the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendEntry {
    pub kind: BackendKindConfig,
    /// Script file path (scripted backends).
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Endpoint base URL (http backends).
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub backoff: Option<BackoffPolicy>,
    #[serde(default)]
    pub filter: Option<TraceFilter>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_embed_model")]
    pub embed_model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_max_attempts() -> u32 {
    4
}
fn default_max_concurrency() -> usize {
    8
}
fn default_embed_dim() -> usize {
    32
}
fn default_embed_model() -> String {
    "embedding".to_string()
}
fn default_timeout_ms() -> u64 {
    60_000
}

impl BackendEntry {
    /// Resolve into a core backend config, loading scripts from disk.
    /// Relative script paths resolve against `base_dir`.
    pub fn to_backend_config(&self, name: &str, base_dir: &Path) -> Result<BackendConfig> {
        let kind = match self.kind {
            BackendKindConfig::Scripted => {
                let path = self
                    .script
                    .as_ref()
                    .with_context(|| format!("backend `{name}`: scripted kind needs `script`"))?;
                let resolved =
                    if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let script = Script::from_path(&resolved)
                    .with_context(|| format!("backend `{name}`: loading {}", resolved.display()))?;
                BackendKind::Scripted { script }
            }
            BackendKindConfig::Http => {
                let base_url = self
                    .base_url
                    .clone()
                    .with_context(|| format!("backend `{name}`: http kind needs `base_url`"))?;
                BackendKind::Http {
                    base_url,
                    api_key: None,
                    embed_model: self.embed_model.clone(),
                    timeout_ms: self.timeout_ms,
                }
            }
        };
        let backoff = self.backoff.clone().unwrap_or(match self.kind {
            // Scripted runs never wait and never jitter.
            BackendKindConfig::Scripted => {
                BackoffPolicy { initial_ms: 0, multiplier: 2.0, max_delay_ms: 0, jitter: false }
            }
            BackendKindConfig::Http => BackoffPolicy::default(),
        });
        Ok(BackendConfig {
            name: name.to_string(),
            kind,
            max_attempts: self.max_attempts,
            backoff,
            max_concurrency: self.max_concurrency,
            filter: self.filter.clone().unwrap_or_default(),
            embed_dim: self.embed_dim,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationSection {
    pub judges: Vec<String>,
    pub arbiter: String,
    #[serde(default = "default_threshold")]
    pub dispute_threshold: f64,
    #[serde(default)]
    pub judge_temperature: f64,
}

fn default_threshold() -> f64 {
    1.0
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            judges: vec!["judge-a".to_string(), "judge-b".to_string(), "judge-c".to_string()],
            arbiter: "arbiter".to_string(),
            dispute_threshold: default_threshold(),
            judge_temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportSection {
    #[serde(default = "default_top")]
    pub sft_top_k: usize,
    #[serde(default = "default_top")]
    pub dpo_top_n: usize,
}

fn default_top() -> usize {
    50
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection { sft_top_k: default_top(), dpo_top_n: default_top() }
    }
}

/// The resolved run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub bank: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_sample_n")]
    pub sample_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_agent_temperature")]
    pub agent_temperature: f64,
    #[serde(default = "default_retrieval_k")]
    pub retrieval_k: usize,
    #[serde(default)]
    pub clock: ClockKind,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub turn_control: TurnControlConfig,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub export: ExportSection,
    pub backends: BTreeMap<String, BackendEntry>,
}

fn default_sample_n() -> usize {
    10
}
fn default_repeats() -> u32 {
    1
}
fn default_parallelism() -> usize {
    4
}
fn default_agent_temperature() -> f64 {
    0.7
}
fn default_retrieval_k() -> usize {
    5
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative paths in the file resolve against its directory.
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if config.bank.is_relative() {
            config.bank = base.join(&config.bank);
        }
        if config.out.is_relative() {
            config.out = base.join(&config.out);
        }
        for entry in config.backends.values_mut() {
            if let Some(script) = &entry.script {
                if script.is_relative() {
                    entry.script = Some(base.join(script));
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bank.exists() {
            bail!("bank file {} does not exist", self.bank.display());
        }
        if self.evaluation.judges.is_empty() {
            bail!("judge roster must be non-empty");
        }
        if self.turn_control.max_turns < 1 {
            bail!("max_turns must be >= 1");
        }
        if self.parallelism < 1 {
            bail!("parallelism must be >= 1");
        }
        for name in ["protagonist", "npc", "environment"] {
            if !self.backends.contains_key(name) {
                bail!("missing [backends.{name}] section");
            }
        }
        for (name, entry) in &self.backends {
            if let BackendKindConfig::Scripted = entry.kind {
                let script = entry
                    .script
                    .as_ref()
                    .with_context(|| format!("backend `{name}` needs a script path"))?;
                if !script.exists() {
                    bail!("backend `{name}` script {} does not exist", script.display());
                }
            }
        }
        Ok(())
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        SimulationConfig {
            seed: self.seed,
            turn_control: self.turn_control,
            agent_temperature: self.agent_temperature,
            retrieval_k: self.retrieval_k,
            clock: self.clock,
        }
    }

    pub fn evaluation_config(&self) -> EvaluationConfig {
        EvaluationConfig {
            judges: self.evaluation.judges.clone(),
            arbiter: self.evaluation.arbiter.clone(),
            dispute_threshold: self.evaluation.dispute_threshold,
            temperature: self.evaluation.judge_temperature,
        }
    }

    /// The judge backend falls back to the environment backend when no
    /// dedicated `[backends.judge]` entry exists.
    pub fn judge_backend_name(&self) -> &str {
        if self.backends.contains_key("judge") {
            "judge"
        } else {
            "environment"
        }
    }

    /// Hash of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Flag overrides applied on top of the loaded file; flags win.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub bank: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub repeats: Option<u32>,
    pub parallelism: Option<usize>,
    pub no_early_stop: bool,
    pub judges: Option<Vec<String>>,
    pub arbiter: Option<String>,
    pub threshold: Option<f64>,
    pub model: Option<String>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) {
        if let Some(bank) = &self.bank {
            config.bank = bank.clone();
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(repeats) = self.repeats {
            config.repeats = repeats;
        }
        if let Some(parallelism) = self.parallelism {
            config.parallelism = parallelism;
        }
        if self.no_early_stop {
            config.turn_control.early_stop_enabled = false;
        }
        if let Some(judges) = &self.judges {
            config.evaluation.judges = judges.clone();
        }
        if let Some(arbiter) = &self.arbiter {
            config.evaluation.arbiter = arbiter.clone();
        }
        if let Some(threshold) = self.threshold {
            config.evaluation.dispute_threshold = threshold;
        }
        if let Some(model) = &self.model {
            config.models.protagonist = model.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml(dir: &Path) -> String {
        format!(
            r#"
bank = "personas.jsonl"
out = "out"
sample_n = 2
seed = 7

[models]
protagonist = "m-a"
npc = "m-npc"
environment = "m-env"

[backends.protagonist]
kind = "scripted"
script = "script.protagonist.json"

[backends.npc]
kind = "scripted"
script = "script.npc.json"

[backends.environment]
kind = "scripted"
script = "script.environment.json"
"#,
            // base dir unused in the document itself
        )
        .replace("BASEDIR", &dir.display().to_string())
    }

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::load(&config_path).unwrap();
        assert_eq!(config.bank, dir.path().join("personas.jsonl"));
        assert_eq!(config.sample_n, 2);
        assert_eq!(config.turn_control.dim_quorum, 4);
        assert_eq!(config.evaluation.judges.len(), 3);
        assert_eq!(
            config.backends["protagonist"].script.as_ref().unwrap(),
            &dir.path().join("script.protagonist.json")
        );
    }

    #[test]
    fn overrides_win_over_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, minimal_toml(dir.path())).unwrap();
        let mut config = RunConfig::load(&config_path).unwrap();
        let overrides = Overrides {
            seed: Some(99),
            no_early_stop: true,
            judges: Some(vec!["only-judge".to_string(), "second".to_string()]),
            threshold: Some(2.0),
            model: Some("swapped".to_string()),
            ..Overrides::default()
        };
        overrides.apply(&mut config);
        assert_eq!(config.seed, 99);
        assert!(!config.turn_control.early_stop_enabled);
        assert_eq!(config.evaluation.judges, vec!["only-judge", "second"]);
        assert_eq!(config.evaluation.dispute_threshold, 2.0);
        assert_eq!(config.models.protagonist, "swapped");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::load(&config_path).unwrap();
        let h1 = config.hash();
        let h2 = RunConfig::load(&config_path).unwrap().hash();
        assert_eq!(h1, h2);
        let mut changed = config.clone();
        changed.seed = 8;
        assert_ne!(h1, changed.hash());
    }
}
