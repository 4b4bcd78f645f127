//! Survey codebook and respondent microdata loading, plus the range and
//! exclusion filters that produce the clean in-memory table every other
//! stage consumes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token used when a demographic value is missing or unparsable. Respondents
/// carrying it on an axis are skipped by strata built over that axis.
pub const UNKNOWN_VALUE: &str = "unknown";

/// The four demographic axes every respondent record must carry.
pub const DEMOGRAPHIC_AXES: [&str; 4] = ["sex", "age_group", "ethnicity", "religion"];

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("codebook is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("codebook entry {entry} is missing required field `{field}`")]
    MissingField { entry: usize, field: &'static str },
    #[error("duplicate question id `{0}` in codebook")]
    DuplicateQuestionId(String),
    #[error("question `{question_id}` has a non-ordinal scale {scale_min}..{scale_max}")]
    NonOrdinalScale {
        question_id: String,
        scale_min: i64,
        scale_max: i64,
    },
    #[error("question `{question_id}` labels code {code} outside its scale")]
    ChoiceLabelOutOfRange { question_id: String, code: i64 },
    #[error("question `{question_id}` has unparsable choice code `{key}`")]
    InvalidChoiceCode { question_id: String, key: String },
    #[error("response column `{0}` does not match any codebook question")]
    UnknownQuestionColumn(String),
    #[error("response file is missing required column `{0}`")]
    MissingColumn(String),
    #[error("malformed response row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
}

/// One survey question: ordinal scale bounds plus the labelled anchor codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub question_id: String,
    pub text: String,
    pub category: String,
    pub scale_min: i64,
    pub scale_max: i64,
    /// Labels keyed by answer code. Sparse when only anchor points are named.
    pub choice_labels: BTreeMap<i64, String>,
    #[serde(default)]
    pub excluded: bool,
}

impl QuestionSpec {
    /// Number of answer choices, |C| = scale_max - scale_min + 1.
    pub fn n_choices(&self) -> usize {
        (self.scale_max - self.scale_min + 1) as usize
    }

    /// Width of the ordinal scale, s_max - s_min.
    pub fn scale_range(&self) -> i64 {
        self.scale_max - self.scale_min
    }

    pub fn in_scale(&self, code: i64) -> bool {
        code >= self.scale_min && code <= self.scale_max
    }

    /// Label of a code when the codebook names it, else the bare code.
    pub fn label_for(&self, code: i64) -> String {
        match self.choice_labels.get(&code) {
            Some(label) => label.clone(),
            None => code.to_string(),
        }
    }
}

/// One respondent: id, the four demographic axis values, and raw answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RespondentRecord {
    pub respondent_id: String,
    pub demographics: BTreeMap<String, String>,
    pub answers: BTreeMap<String, i64>,
}

impl RespondentRecord {
    pub fn axis_value(&self, axis: &str) -> &str {
        self.demographics
            .get(axis)
            .map(String::as_str)
            .unwrap_or(UNKNOWN_VALUE)
    }
}

/// Counters written by `apply_filters`, emitted alongside outputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterLog {
    pub answers_dropped_below_range: u64,
    pub answers_dropped_above_range: u64,
    pub answers_dropped_excluded: u64,
    pub questions_excluded: u64,
    pub unknown_exclusion_ids: Vec<String>,
}

impl fmt::Display for FilterLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "answers_dropped_below_range: {}",
            self.answers_dropped_below_range
        )?;
        writeln!(
            f,
            "answers_dropped_above_range: {}",
            self.answers_dropped_above_range
        )?;
        writeln!(
            f,
            "answers_dropped_excluded: {}",
            self.answers_dropped_excluded
        )?;
        writeln!(f, "questions_excluded: {}", self.questions_excluded)?;
        writeln!(
            f,
            "unknown_exclusion_ids: {}",
            self.unknown_exclusion_ids.join(",")
        )
    }
}

/// Source paths and filter history for a loaded table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub codebook_path: String,
    pub responses_path: String,
    pub filter_log: FilterLog,
}

/// Immutable survey table: questions, respondents, provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyTable {
    pub questions: Vec<QuestionSpec>,
    pub respondents: Vec<RespondentRecord>,
    pub provenance: Provenance,
}

impl SurveyTable {
    pub fn question(&self, id: &str) -> Option<&QuestionSpec> {
        self.questions.iter().find(|q| q.question_id == id)
    }

    /// Questions that survived exclusion filtering.
    pub fn active_questions(&self) -> impl Iterator<Item = &QuestionSpec> {
        self.questions.iter().filter(|q| !q.excluded)
    }

    /// Distinct observed values for one demographic axis, unknown excluded.
    pub fn axis_values(&self, axis: &str) -> BTreeSet<String> {
        self.respondents
            .iter()
            .map(|r| r.axis_value(axis).to_string())
            .filter(|v| v != UNKNOWN_VALUE)
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct RawCodebookEntry {
    question_id: Option<String>,
    text: Option<String>,
    category: Option<String>,
    scale_min: Option<i64>,
    scale_max: Option<i64>,
    choice_labels: Option<BTreeMap<String, String>>,
    #[serde(default)]
    excluded: bool,
}

/// Load a JSON codebook: an array of question entries with id, text,
/// category, scale bounds and choice labels.
pub fn load_codebook(path: &Path) -> Result<Vec<QuestionSpec>, SurveyError> {
    let file = File::open(path).map_err(|source| SurveyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut text = String::new();
    BufReader::new(file)
        .read_to_string(&mut text)
        .map_err(|source| SurveyError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let raw: Vec<RawCodebookEntry> = serde_json::from_str(&text)?;
    parse_codebook_entries(raw)
}

fn parse_codebook_entries(raw: Vec<RawCodebookEntry>) -> Result<Vec<QuestionSpec>, SurveyError> {
    let mut seen = BTreeSet::new();
    let mut questions = Vec::with_capacity(raw.len());
    for (entry, r) in raw.into_iter().enumerate() {
        let missing = |field| SurveyError::MissingField { entry, field };
        let question_id = r.question_id.ok_or_else(|| missing("question_id"))?;
        let text = r.text.ok_or_else(|| missing("text"))?;
        let category = r.category.ok_or_else(|| missing("category"))?;
        let scale_min = r.scale_min.ok_or_else(|| missing("scale_min"))?;
        let scale_max = r.scale_max.ok_or_else(|| missing("scale_max"))?;
        if scale_min >= scale_max {
            return Err(SurveyError::NonOrdinalScale {
                question_id,
                scale_min,
                scale_max,
            });
        }
        let mut choice_labels = BTreeMap::new();
        for (key, label) in r.choice_labels.unwrap_or_default() {
            let code: i64 = key
                .trim()
                .parse()
                .map_err(|_| SurveyError::InvalidChoiceCode {
                    question_id: question_id.clone(),
                    key: key.clone(),
                })?;
            if code < scale_min || code > scale_max {
                return Err(SurveyError::ChoiceLabelOutOfRange { question_id, code });
            }
            choice_labels.insert(code, label);
        }
        if !seen.insert(question_id.clone()) {
            return Err(SurveyError::DuplicateQuestionId(question_id));
        }
        questions.push(QuestionSpec {
            question_id,
            text,
            category,
            scale_min,
            scale_max,
            choice_labels,
            excluded: r.excluded,
        });
    }
    Ok(questions)
}

/// Options for reading the delimited response file.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// When set, this column holds a raw integer age which is bucketed into
    /// the standard age groups instead of reading a pre-bucketed `age_group`
    /// column.
    pub raw_age_column: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            raw_age_column: None,
        }
    }
}

/// Bucket a raw integer age into the standard survey age groups.
pub fn age_bucket(age: i64) -> &'static str {
    match age {
        16..=24 => "16-24 years",
        25..=34 => "25-34 years",
        35..=44 => "35-44 years",
        45..=54 => "45-54 years",
        55..=64 => "55-64 years",
        65.. => "65 and over",
        _ => UNKNOWN_VALUE,
    }
}

/// Load respondent microdata from a delimited file with a header row.
///
/// Expected columns: `respondent_id`, the four demographic axes (or the
/// configured raw-age column in place of `age_group`), and one column per
/// codebook question. Unparsable answer cells are recorded as missing;
/// out-of-range codes are kept verbatim for `apply_filters` to drop.
pub fn load_responses(
    path: &Path,
    codebook: &[QuestionSpec],
    options: &LoadOptions,
) -> Result<SurveyTable, SurveyError> {
    let file = File::open(path).map_err(|source| SurveyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .flexible(false)
        .from_reader(BufReader::new(file));

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| SurveyError::MalformedRow {
            row: 0,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();

    let known: BTreeSet<&str> = codebook.iter().map(|q| q.question_id.as_str()).collect();
    let mut id_col = None;
    let mut axis_cols: BTreeMap<String, usize> = BTreeMap::new();
    let mut raw_age_col = None;
    let mut question_cols: Vec<(usize, String)> = Vec::new();

    for (i, name) in headers.iter().enumerate() {
        if name == "respondent_id" {
            id_col = Some(i);
        } else if options.raw_age_column.as_deref() == Some(name.as_str()) {
            raw_age_col = Some(i);
        } else if DEMOGRAPHIC_AXES.contains(&name.as_str()) {
            axis_cols.insert(name.clone(), i);
        } else if known.contains(name.as_str()) {
            question_cols.push((i, name.clone()));
        } else {
            return Err(SurveyError::UnknownQuestionColumn(name.clone()));
        }
    }

    let id_col = id_col.ok_or(SurveyError::MissingColumn("respondent_id".into()))?;
    for axis in DEMOGRAPHIC_AXES {
        if axis == "age_group" && raw_age_col.is_some() {
            continue;
        }
        if !axis_cols.contains_key(axis) {
            return Err(SurveyError::MissingColumn(axis.into()));
        }
    }

    let mut respondents = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| SurveyError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let cell = |i: usize| -> Result<&str, SurveyError> {
            record.get(i).ok_or_else(|| SurveyError::MalformedRow {
                row,
                reason: format!("missing field {i}"),
            })
        };

        let respondent_id = cell(id_col)?.trim().to_string();
        let mut demographics = BTreeMap::new();
        for (axis, &col) in &axis_cols {
            let value = cell(col)?.trim();
            let value = if value.is_empty() {
                UNKNOWN_VALUE
            } else {
                value
            };
            demographics.insert(axis.clone(), value.to_string());
        }
        if let Some(col) = raw_age_col {
            let bucket = cell(col)?
                .trim()
                .parse::<i64>()
                .map(age_bucket)
                .unwrap_or(UNKNOWN_VALUE);
            demographics.insert("age_group".into(), bucket.to_string());
        }

        let mut answers = BTreeMap::new();
        for (col, qid) in &question_cols {
            let raw = cell(*col)?.trim();
            if raw.is_empty() {
                continue;
            }
            if let Ok(code) = raw.parse::<i64>() {
                answers.insert(qid.clone(), code);
            }
            // unparsable cells are recorded as missing
        }

        respondents.push(RespondentRecord {
            respondent_id,
            demographics,
            answers,
        });
    }

    Ok(SurveyTable {
        questions: codebook.to_vec(),
        respondents,
        provenance: Provenance {
            codebook_path: String::new(),
            responses_path: path.display().to_string(),
            filter_log: FilterLog::default(),
        },
    })
}

/// Apply the pre-processing filters: flag and strip excluded questions, and
/// (when `drop_out_of_range` is set) remove every answer whose code falls
/// outside its question's scale. Below-range codes cover the negative
/// "don't know" / "no answer" family; the same sweep also drops the rare
/// above-range code so the retained table always satisfies
/// scale_min <= code <= scale_max.
///
/// Filtering never removes respondents, only answers, and is idempotent.
/// Unknown exclusion ids are recorded in the filter log rather than raised.
pub fn apply_filters(
    mut table: SurveyTable,
    exclusion_ids: &[String],
    drop_out_of_range: bool,
) -> SurveyTable {
    let mut log = table.provenance.filter_log.clone();
    let known: BTreeSet<&str> = table
        .questions
        .iter()
        .map(|q| q.question_id.as_str())
        .collect();
    for id in exclusion_ids {
        if !known.contains(id.as_str()) && !log.unknown_exclusion_ids.contains(id) {
            log.unknown_exclusion_ids.push(id.clone());
        }
    }

    let to_exclude: BTreeSet<&str> = exclusion_ids
        .iter()
        .map(String::as_str)
        .filter(|id| known.contains(id))
        .collect();
    for q in &mut table.questions {
        if to_exclude.contains(q.question_id.as_str()) && !q.excluded {
            q.excluded = true;
            log.questions_excluded += 1;
        }
    }

    let scales: BTreeMap<&str, (i64, i64, bool)> = table
        .questions
        .iter()
        .map(|q| {
            (
                q.question_id.as_str(),
                (q.scale_min, q.scale_max, q.excluded),
            )
        })
        .collect();

    for respondent in &mut table.respondents {
        respondent.answers.retain(|qid, code| {
            let Some(&(min, max, excluded)) = scales.get(qid.as_str()) else {
                return true;
            };
            if excluded {
                log.answers_dropped_excluded += 1;
                return false;
            }
            if drop_out_of_range && *code < min {
                log.answers_dropped_below_range += 1;
                return false;
            }
            if drop_out_of_range && *code > max {
                log.answers_dropped_above_range += 1;
                return false;
            }
            true
        });
    }

    table.provenance.filter_log = log;
    table
}
