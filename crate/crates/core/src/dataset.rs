//! Persona and prompt rendering, train / OOD split assembly, and the
//! line-delimited exports consumed by external trainers and the evaluation
//! commands.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stratify::{OpinionMatrix, Subgroup};
use crate::survey::QuestionSpec;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no display form configured for `{value}` on axis `{axis}`")]
    MissingDisplayForm { axis: String, value: String },
    #[error("question `{0}` is excluded")]
    ExcludedQuestion(String),
    #[error("stratum `{0}` appears in both splits")]
    OverlappingStrata(String),
    #[error("stratum `{0}` does not resolve to any opinion-matrix stratum")]
    UnknownStratum(String),
    #[error("question `{0}` is not in the codebook")]
    UnknownQuestion(String),
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
}

/// Version tag stamped into manifests so prompt changes are detectable.
pub const TEMPLATE_VERSION: &str = "v1";

/// System prompt shared by SFT and evaluation. Placeholder: {persona}.
pub const SYSTEM_TEMPLATE: &str = "You are a helpful assistant. Your task is to respond from the perspective of a typical Singaporean who is a {persona}. Fully embody this persona in your response, considering their likely values, priorities, and way of speaking. Answer the user's question directly.";

/// User prompt for the structured numerical task. Placeholders: {question},
/// {choices}. The trailing format instruction is what the answer parser
/// keys on.
pub const NUMERICAL_USER_TEMPLATE: &str = "{question}\n\nPlease choose one of the following options:\n{choices}\n\nRespond with only the number of your choice in the format: \"Answer: {number}\"";

/// User prompt for the open-ended task. Placeholders: {question}, {choices}.
pub const OPEN_ENDED_USER_TEMPLATE: &str = "{question}\n\nFor context, here are the response options that were provided in the original survey:\n{choices}\n\nBased on your persona, consider the options above and explain your reasoning, what you think about this topic, and which option you would lean towards. Provide your answer in a natural, open-ended conversational style.";

/// Prompt task flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Numerical,
    OpenEnded,
}

/// A rendered (system, user) prompt pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub system_prompt: String,
    pub user_prompt: String,
    pub mode: PromptMode,
}

/// The three prompt templates, overridable via config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub system: String,
    pub numerical_user: String,
    pub open_ended_user: String,
    pub version: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            system: SYSTEM_TEMPLATE.to_string(),
            numerical_user: NUMERICAL_USER_TEMPLATE.to_string(),
            open_ended_user: OPEN_ENDED_USER_TEMPLATE.to_string(),
            version: TEMPLATE_VERSION.to_string(),
        }
    }
}

/// Display forms for demographic values, per axis. With `strict` unset,
/// unmapped values fall back to the raw survey value; strict mode turns
/// them into `MissingDisplayForm` errors instead.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaConfig {
    pub display: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub strict: bool,
}

impl PersonaConfig {
    /// Defaults for the standard survey vocabulary: sex values lowercased,
    /// age buckets spelled out, everything else used verbatim.
    pub fn standard() -> Self {
        let mut display: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        display.insert(
            "sex".to_string(),
            BTreeMap::from([
                ("Female".to_string(), "female".to_string()),
                ("Male".to_string(), "male".to_string()),
            ]),
        );
        display.insert(
            "age_group".to_string(),
            BTreeMap::from([
                ("16-24 years".to_string(), "16-24 years old".to_string()),
                ("25-34 years".to_string(), "25-34 years old".to_string()),
                ("35-44 years".to_string(), "35-44 years old".to_string()),
                ("45-54 years".to_string(), "45-54 years old".to_string()),
                ("55-64 years".to_string(), "55-64 years old".to_string()),
                (
                    "65 and over".to_string(),
                    "65 years old or over".to_string(),
                ),
            ]),
        );
        Self {
            display,
            strict: false,
        }
    }

    fn display_for(&self, axis: &str, value: &str) -> Result<String, DatasetError> {
        if let Some(form) = self.display.get(axis).and_then(|m| m.get(value)) {
            return Ok(form.clone());
        }
        if self.strict {
            return Err(DatasetError::MissingDisplayForm {
                axis: axis.to_string(),
                value: value.to_string(),
            });
        }
        Ok(value.to_string())
    }
}

/// Renders personas and prompts from a template set and display config.
#[derive(Debug, Clone, Default)]
pub struct PromptRenderer {
    pub templates: TemplateSet,
    pub persona: PersonaConfig,
}

impl PromptRenderer {
    pub fn standard() -> Self {
        Self {
            templates: TemplateSet::default(),
            persona: PersonaConfig::standard(),
        }
    }

    /// Comma-joined human-readable descriptors in the subgroup's axis order,
    /// e.g. "female, Buddhist".
    pub fn render_persona(&self, subgroup: &Subgroup) -> Result<String, DatasetError> {
        let mut parts = Vec::with_capacity(subgroup.values.len());
        for (axis, value) in subgroup.stratum.axes.iter().zip(&subgroup.values) {
            parts.push(self.persona.display_for(axis, value)?);
        }
        Ok(parts.join(", "))
    }

    /// One line per labelled code, ascending, `code: label`. Codebooks that
    /// label only anchor points render just those anchors; a codebook with
    /// no labels at all falls back to the bare codes.
    pub fn render_choices(&self, question: &QuestionSpec) -> String {
        if question.choice_labels.is_empty() {
            return (question.scale_min..=question.scale_max)
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("\n");
        }
        question
            .choice_labels
            .iter()
            .map(|(code, label)| format!("{code}: {label}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Render the system and user prompts for one (question, subgroup).
    pub fn render_prompts(
        &self,
        question: &QuestionSpec,
        subgroup: &Subgroup,
        mode: PromptMode,
    ) -> Result<PromptSet, DatasetError> {
        if question.excluded {
            return Err(DatasetError::ExcludedQuestion(question.question_id.clone()));
        }
        let persona = self.render_persona(subgroup)?;
        let choices = self.render_choices(question);
        let system_prompt = self.templates.system.replace("{persona}", &persona);
        let user_template = match mode {
            PromptMode::Numerical => &self.templates.numerical_user,
            PromptMode::OpenEnded => &self.templates.open_ended_user,
        };
        let user_prompt = user_template
            .replace("{question}", &question.text)
            .replace("{choices}", &choices);
        Ok(PromptSet {
            system_prompt,
            user_prompt,
            mode,
        })
    }
}

/// Which split a sample belongs to, decided solely by its stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    EvalOod,
}

/// One dataset sample: a (question, subgroup) cell with rendered prompts
/// and the subgroup's modal answer as the gold target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub question_id: String,
    pub subgroup: Subgroup,
    pub persona_text: String,
    pub split: Split,
    pub prompts: PromptSet,
    pub gold_modal_code: i64,
    /// Choice label of the modal code, or the bare code when unlabelled.
    pub gold_stance_label: String,
}

impl SampleRecord {
    /// Stable identity used to pair samples with completion results.
    pub fn sample_key(&self) -> String {
        format!(
            "{}|{}|{}",
            self.question_id,
            self.subgroup.stratum.name,
            self.subgroup.key()
        )
    }
}

/// Per-stratum record counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCount {
    pub subgroups: usize,
    pub samples: usize,
}

/// Snapshot of the knobs that shaped a manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestConfig {
    pub min_n: usize,
    pub exclusions: Vec<String>,
    pub template_version: String,
}

/// All sample records plus per-stratum counts and the config snapshot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub counts: BTreeMap<String, StratumCount>,
    pub config: ManifestConfig,
}

impl DatasetManifest {
    pub fn records_for(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// The seven strata trained on by default.
pub const DEFAULT_TRAIN_STRATA: [&str; 7] = [
    "sex",
    "age_group",
    "ethnicity",
    "religion",
    "sex_x_age",
    "sex_x_ethnicity",
    "sex_x_religion",
];

/// The three held-out pairwise strata evaluated out-of-distribution.
pub const DEFAULT_OOD_STRATA: [&str; 3] =
    ["age_x_ethnicity", "age_x_religion", "ethnicity_x_religion"];

fn natural_qid(id: &str) -> (String, u64, String) {
    let prefix: String = id.chars().take_while(|c| !c.is_ascii_digit()).collect();
    let digits: String = id
        .chars()
        .skip(prefix.chars().count())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    (prefix, digits.parse().unwrap_or(0), id.to_string())
}

/// Assemble one SampleRecord per valid (question, subgroup) cell of the
/// listed strata. Subgroup inclusion requires the whole-subgroup population
/// to meet the matrix's min_n; each emitted sample additionally requires
/// the per-question answer count to meet it. Records are ordered
/// (split, stratum, subgroup, question id).
pub fn build_splits(
    matrix: &OpinionMatrix,
    codebook: &[QuestionSpec],
    renderer: &PromptRenderer,
    train_strata: &[String],
    ood_strata: &[String],
    exclusions: &[String],
) -> Result<DatasetManifest, DatasetError> {
    for name in train_strata {
        if ood_strata.contains(name) {
            return Err(DatasetError::OverlappingStrata(name.clone()));
        }
    }
    let known = matrix.stratum_names();
    for name in train_strata.iter().chain(ood_strata) {
        if !known.contains(name) {
            return Err(DatasetError::UnknownStratum(name.clone()));
        }
    }
    let by_id: BTreeMap<&str, &QuestionSpec> = codebook
        .iter()
        .map(|q| (q.question_id.as_str(), q))
        .collect();

    let mut records = Vec::new();
    let mut counts: BTreeMap<String, StratumCount> = BTreeMap::new();
    let mut counted_subgroups: BTreeSet<(String, Vec<String>)> = BTreeSet::new();

    for (split, names) in [(Split::Train, train_strata), (Split::EvalOod, ood_strata)] {
        let mut split_records = Vec::new();
        for (key, opinion) in &matrix.entries {
            if !names.contains(&key.stratum_name) {
                continue;
            }
            if opinion.subgroup.population_n < matrix.min_n || !opinion.valid {
                continue;
            }
            let Some(gold_modal_code) = opinion.modal_code else {
                continue;
            };
            let question = by_id
                .get(key.question_id.as_str())
                .ok_or_else(|| DatasetError::UnknownQuestion(key.question_id.clone()))?;
            let persona_text = renderer.render_persona(&opinion.subgroup)?;
            let prompts =
                renderer.render_prompts(question, &opinion.subgroup, PromptMode::Numerical)?;
            split_records.push(SampleRecord {
                question_id: key.question_id.clone(),
                subgroup: opinion.subgroup.clone(),
                persona_text,
                split,
                prompts,
                gold_modal_code,
                gold_stance_label: question.label_for(gold_modal_code),
            });
        }
        split_records.sort_by(|a, b| {
            a.subgroup
                .stratum
                .name
                .cmp(&b.subgroup.stratum.name)
                .then_with(|| a.subgroup.values.cmp(&b.subgroup.values))
                .then_with(|| natural_qid(&a.question_id).cmp(&natural_qid(&b.question_id)))
        });
        for record in &split_records {
            let stratum = record.subgroup.stratum.name.clone();
            let entry = counts.entry(stratum.clone()).or_default();
            entry.samples += 1;
            if counted_subgroups.insert((stratum, record.subgroup.values.clone())) {
                entry.subgroups += 1;
            }
        }
        records.extend(split_records);
    }

    Ok(DatasetManifest {
        records,
        counts,
        config: ManifestConfig {
            min_n: matrix.min_n,
            exclusions: exclusions.to_vec(),
            template_version: renderer.templates.version.clone(),
        },
    })
}

/// Check the compositional-generalisation precondition: every single-axis
/// component of every OOD subgroup appears in some train-split subgroup.
/// Returns the missing (axis, value) pairs, empty when the split is sound.
pub fn compositional_coverage_gaps(manifest: &DatasetManifest) -> Vec<(String, String)> {
    let mut train_components: BTreeSet<(String, String)> = BTreeSet::new();
    for record in manifest.records_for(Split::Train) {
        for (axis, value) in record
            .subgroup
            .stratum
            .axes
            .iter()
            .zip(&record.subgroup.values)
        {
            train_components.insert((axis.clone(), value.clone()));
        }
    }
    let mut missing = BTreeSet::new();
    for record in manifest.records_for(Split::EvalOod) {
        for (axis, value) in record
            .subgroup
            .stratum
            .axes
            .iter()
            .zip(&record.subgroup.values)
        {
            if !train_components.contains(&(axis.clone(), value.clone())) {
                missing.insert((axis.clone(), value.clone()));
            }
        }
    }
    missing.into_iter().collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingLine<'a> {
    system: &'a str,
    user: &'a str,
    assistant: String,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Export train-split records as JSONL {system, user, assistant} with the
/// target completion "Answer: {gold}".
pub fn export_training_records(
    manifest: &DatasetManifest,
    path: &Path,
) -> Result<(), DatasetError> {
    if manifest.records.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    for record in manifest.records_for(Split::Train) {
        let line = TrainingLine {
            system: &record.prompts.system_prompt,
            user: &record.prompts.user_prompt,
            assistant: format!("Answer: {}", record.gold_modal_code),
        };
        serde_json::to_writer(&mut writer, &line).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
        writeln!(writer).map_err(io_err(path))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestMeta {
    config: ManifestConfig,
}

/// Export the full manifest (or one split of it) as JSONL: a meta line with
/// the config snapshot, then one record per line including the gold fields.
pub fn export_manifest(
    manifest: &DatasetManifest,
    path: &Path,
    split: Option<Split>,
) -> Result<(), DatasetError> {
    if manifest.records.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    let meta = ManifestMeta {
        config: manifest.config.clone(),
    };
    serde_json::to_writer(&mut writer, &meta).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })?;
    writeln!(writer).map_err(io_err(path))?;
    for record in &manifest.records {
        if split.is_some_and(|s| s != record.split) {
            continue;
        }
        serde_json::to_writer(&mut writer, record).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
        writeln!(writer).map_err(io_err(path))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Import a manifest exported by [`export_manifest`], recomputing the
/// per-stratum counts from the records.
pub fn import_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let meta_line = lines
        .next()
        .ok_or_else(|| DatasetError::MalformedManifest {
            line: 0,
            reason: "empty manifest file".to_string(),
        })?
        .1
        .map_err(|e| DatasetError::MalformedManifest {
            line: 0,
            reason: e.to_string(),
        })?;
    let meta: ManifestMeta =
        serde_json::from_str(&meta_line).map_err(|e| DatasetError::MalformedManifest {
            line: 0,
            reason: e.to_string(),
        })?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| DatasetError::MalformedManifest {
            line: i,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedManifest {
                line: i,
                reason: e.to_string(),
            })?;
        records.push(record);
    }

    let mut counts: BTreeMap<String, StratumCount> = BTreeMap::new();
    let mut counted_subgroups: BTreeSet<(String, Vec<String>)> = BTreeSet::new();
    for record in &records {
        let stratum = record.subgroup.stratum.name.clone();
        let entry = counts.entry(stratum.clone()).or_default();
        entry.samples += 1;
        if counted_subgroups.insert((stratum, record.subgroup.values.clone())) {
            entry.subgroups += 1;
        }
    }
    Ok(DatasetManifest {
        records,
        counts,
        config: meta.config,
    })
}
