//! Run configuration: a single TOML file, resolved relative to its own
//! location, with credentials supplied via environment variables only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vmap_core::dataset::{PersonaConfig, TemplateSet, DEFAULT_OOD_STRATA, DEFAULT_TRAIN_STRATA};
use vmap_core::gateway::sha256_hex;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub survey: SurveyConfig,
    #[serde(default)]
    pub strata: StrataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderConfig>,
    #[serde(default)]
    pub persona: PersonaSection,
    #[serde(default)]
    pub templates: TemplateSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub codebook: PathBuf,
    pub responses: PathBuf,
    #[serde(default)]
    pub delimiter: Option<String>,
    #[serde(default)]
    pub raw_age_column: Option<String>,
    #[serde(default)]
    pub exclusions: Vec<String>,
    #[serde(default = "default_min_n")]
    pub min_n: usize,
}

fn default_min_n() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrataConfig {
    #[serde(default = "default_axes")]
    pub axes: Vec<String>,
    #[serde(default = "default_train")]
    pub train: Vec<String>,
    #[serde(default = "default_ood")]
    pub ood: Vec<String>,
}

fn default_axes() -> Vec<String> {
    ["sex", "age_group", "ethnicity", "religion"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_train() -> Vec<String> {
    DEFAULT_TRAIN_STRATA.iter().map(|s| s.to_string()).collect()
}

fn default_ood() -> Vec<String> {
    DEFAULT_OOD_STRATA.iter().map(|s| s.to_string()).collect()
}

impl Default for StrataConfig {
    fn default() -> Self {
        Self {
            axes: default_axes(),
            train: default_train(),
            ood: default_ood(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_level")]
    pub bootstrap_level: f64,
    #[serde(default)]
    pub strict_parsing: bool,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_seed() -> u64 {
    42
}
fn default_resamples() -> usize {
    vmap_core::stats::DEFAULT_BOOTSTRAP_RESAMPLES
}
fn default_level() -> f64 {
    vmap_core::stats::DEFAULT_BOOTSTRAP_LEVEL
}
fn default_in_flight() -> usize {
    4
}
fn default_max_tokens() -> u32 {
    2048
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            bootstrap_resamples: default_resamples(),
            bootstrap_level: default_level(),
            strict_parsing: false,
            max_in_flight: default_in_flight(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub mock: Option<MockSpec>,
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Openai,
}

/// Scripted behaviour for a mock provider.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum MockSpec {
    /// Answer every request with its sample's gold target.
    Gold,
    /// Always reply with the given text.
    Fixed { text: String },
    /// Always reply with a refusal sentence.
    Refuse,
    /// Per-request responses from a JSON map file (request_id -> text).
    Map { path: PathBuf },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PersonaSection {
    /// Extra display forms per axis, merged over the standard defaults.
    #[serde(default)]
    pub display: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub strict: bool,
}

/// Optional template override files; defaults otherwise.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TemplateSection {
    #[serde(default)]
    pub system: Option<PathBuf>,
    #[serde(default)]
    pub numerical_user: Option<PathBuf>,
    #[serde(default)]
    pub open_ended_user: Option<PathBuf>,
    #[serde(default)]
    pub judge: Option<PathBuf>,
}

/// A loaded, validated configuration plus derived context.
pub struct Ctx {
    pub config: RunConfig,
    /// Directory of the config file; relative paths resolve against it.
    pub base_dir: PathBuf,
    /// Output directory (created on load).
    pub out_dir: PathBuf,
    /// Content hash of dataset-defining inputs; stamped into run logs.
    pub config_hash: String,
}

impl Ctx {
    pub fn load(config_path: &Path) -> Result<Ctx> {
        let text = std::fs::read_to_string(config_path)
            .with_context(|| format!("cannot read config {}", config_path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", config_path.display()))?;
        let base_dir = config_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));

        let ctx_paths = [&config.survey.codebook, &config.survey.responses];
        for p in ctx_paths {
            let resolved = resolve(&base_dir, p);
            if !resolved.exists() {
                bail!("configured file does not exist: {}", resolved.display());
            }
        }
        for name in &config.strata.train {
            if config.strata.ood.contains(name) {
                bail!("stratum `{name}` appears in both train and ood splits");
            }
        }
        if !(0.0..1.0).contains(&(1.0 - config.eval.bootstrap_level))
            || config.eval.bootstrap_level <= 0.0
        {
            bail!("bootstrap_level must lie in (0, 1)");
        }
        for (name, provider) in &config.providers {
            match provider.kind {
                ProviderKind::Openai => {
                    if provider.base_url.is_none() {
                        bail!("provider `{name}` is openai-kind but has no base_url");
                    }
                }
                ProviderKind::Mock => {
                    if let Some(MockSpec::Map { path }) = &provider.mock {
                        let resolved = resolve(&base_dir, path);
                        if !resolved.exists() {
                            bail!(
                                "mock map for provider `{name}` does not exist: {}",
                                resolved.display()
                            );
                        }
                    }
                }
            }
        }

        let out_dir = resolve(&base_dir, &config.output.dir);
        std::fs::create_dir_all(&out_dir)
            .with_context(|| format!("cannot create output dir {}", out_dir.display()))?;
        std::fs::create_dir_all(out_dir.join("runs"))?;

        let config_hash = dataset_hash(&config, &base_dir)?;
        Ok(Ctx {
            config,
            base_dir,
            out_dir,
            config_hash,
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        resolve(&self.base_dir, path)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.jsonl")
    }

    pub fn numeric_run_log(&self, label: &str) -> PathBuf {
        self.out_dir
            .join("runs")
            .join(format!("{label}.numeric.jsonl"))
    }

    pub fn open_run_log(&self, label: &str) -> PathBuf {
        self.out_dir
            .join("runs")
            .join(format!("{label}.open.jsonl"))
    }

    pub fn judge_log(&self, evaluatee: &str, baseline: &str) -> PathBuf {
        self.out_dir
            .join("runs")
            .join(format!("judge_{evaluatee}_vs_{baseline}.jsonl"))
    }

    pub fn provider(&self, name: &str) -> Result<&ProviderConfig> {
        self.config
            .providers
            .get(name)
            .with_context(|| format!("no [providers.{name}] section in the config"))
    }

    /// The prompt renderer implied by the config: template override files
    /// layered over the defaults, display forms merged over the standard
    /// vocabulary.
    pub fn renderer(&self) -> Result<vmap_core::dataset::PromptRenderer> {
        let mut templates = TemplateSet::default();
        let read = |p: &Option<PathBuf>| -> Result<Option<String>> {
            match p {
                Some(path) => {
                    let resolved = self.resolve(path);
                    Ok(Some(std::fs::read_to_string(&resolved).with_context(
                        || format!("cannot read template {}", resolved.display()),
                    )?))
                }
                None => Ok(None),
            }
        };
        if let Some(text) = read(&self.config.templates.system)? {
            templates.system = text;
            templates.version = format!("{}-custom", templates.version);
        }
        if let Some(text) = read(&self.config.templates.numerical_user)? {
            templates.numerical_user = text;
            templates.version = format!("{}-custom", templates.version);
        }
        if let Some(text) = read(&self.config.templates.open_ended_user)? {
            templates.open_ended_user = text;
            templates.version = format!("{}-custom", templates.version);
        }

        let mut persona = PersonaConfig::standard();
        persona.strict = self.config.persona.strict;
        for (axis, forms) in &self.config.persona.display {
            let entry = persona.display.entry(axis.clone()).or_default();
            for (value, form) in forms {
                entry.insert(value.clone(), form.clone());
            }
        }
        Ok(vmap_core::dataset::PromptRenderer { templates, persona })
    }

    pub fn judge_template(&self) -> Result<String> {
        match &self.config.templates.judge {
            Some(path) => {
                let resolved = self.resolve(path);
                std::fs::read_to_string(&resolved)
                    .with_context(|| format!("cannot read judge template {}", resolved.display()))
            }
            None => Ok(vmap_core::judge::DEFAULT_JUDGE_TEMPLATE.to_string()),
        }
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Hash of everything that defines sample identity: the survey file
/// contents plus the filtering and split configuration.
fn dataset_hash(config: &RunConfig, base_dir: &Path) -> Result<String> {
    let mut material = Vec::new();
    for path in [&config.survey.codebook, &config.survey.responses] {
        let resolved = resolve(base_dir, path);
        let bytes = std::fs::read(&resolved)
            .with_context(|| format!("cannot read {}", resolved.display()))?;
        material.extend_from_slice(&sha256_hex(&bytes).into_bytes());
    }
    let knobs = serde_json::json!({
        "min_n": config.survey.min_n,
        "exclusions": config.survey.exclusions,
        "raw_age_column": config.survey.raw_age_column,
        "axes": config.strata.axes,
        "train": config.strata.train,
        "ood": config.strata.ood,
        "strict_parsing": config.eval.strict_parsing,
    });
    material.extend_from_slice(knobs.to_string().as_bytes());
    Ok(sha256_hex(&material))
}
