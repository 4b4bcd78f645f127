//! Parsing of structured numerical answers, refusal detection, and
//! accuracy / NMAE aggregation per subgroup, stratum, and overall.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SampleRecord;
use crate::gateway::CompletionResult;
use crate::survey::QuestionSpec;
use crate::Score;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate result for request `{0}`")]
    DuplicateResult(String),
    #[error("no records to aggregate")]
    EmptyGroup,
    #[error("question `{0}` is not in the codebook")]
    UnknownQuestion(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Why a response yielded no usable answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefusalReason {
    /// No unambiguous integer anywhere in the text.
    NoNumber,
    /// An integer was found but falls outside the question's scale.
    OutOfRange,
    /// Several integers without the answer pattern, alongside safety-refusal
    /// phrasing.
    SafetyText,
}

/// Outcome of parsing one model response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ParsedAnswer {
    Value { code: i64 },
    Refusal { reason: RefusalReason },
}

impl ParsedAnswer {
    pub fn is_refusal(&self) -> bool {
        matches!(self, ParsedAnswer::Refusal { .. })
    }

    pub fn code(&self) -> Option<i64> {
        match self {
            ParsedAnswer::Value { code } => Some(*code),
            ParsedAnswer::Refusal { .. } => None,
        }
    }
}

/// Parsing knobs. Strict mode accepts only the `Answer: <integer>` pattern
/// and never falls back to a lone integer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub strict: bool,
}

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)\banswer\b\s*[:\-]?\s*["'*_\(\[]*\s*(-?\d+)"#).expect("valid regex")
    })
}

fn integer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+").expect("valid regex"))
}

fn safety_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(i\s+cannot|i\s+can'?t|i\s+won'?t|i'?\s*a?m\s+(unable|sorry)|unable\s+to|i\s+apologi[sz]e|as\s+an\s+ai)\b",
        )
        .expect("valid regex")
    })
}

/// Parse a raw response into an in-range answer or a refusal. Total: never
/// fails, whatever the text.
///
/// The scan looks for the last `Answer: <integer>` occurrence,
/// case-insensitively and tolerant of surrounding whitespace and
/// punctuation. Without that pattern, a text containing exactly one integer
/// is taken at face value. Out-of-range integers become
/// `Refusal(OutOfRange)`; texts with no usable integer become
/// `Refusal(NoNumber)`, or `Refusal(SafetyText)` when several candidate
/// integers are accompanied by safety-refusal phrasing.
pub fn parse_numeric(raw_text: &str, question: &QuestionSpec) -> ParsedAnswer {
    parse_numeric_with(raw_text, question, ParseOptions::default())
}

pub fn parse_numeric_with(
    raw_text: &str,
    question: &QuestionSpec,
    options: ParseOptions,
) -> ParsedAnswer {
    let classify = |code: i64| -> ParsedAnswer {
        if question.in_scale(code) {
            ParsedAnswer::Value { code }
        } else {
            ParsedAnswer::Refusal {
                reason: RefusalReason::OutOfRange,
            }
        }
    };

    if let Some(caps) = answer_pattern().captures_iter(raw_text).last() {
        if let Ok(code) = caps[1].parse::<i64>() {
            return classify(code);
        }
    }
    if options.strict {
        return ParsedAnswer::Refusal {
            reason: RefusalReason::NoNumber,
        };
    }

    let integers: Vec<i64> = integer_pattern()
        .find_iter(raw_text)
        .filter_map(|m| m.as_str().parse::<i64>().ok())
        .collect();
    match integers.as_slice() {
        [only] => classify(*only),
        [] => ParsedAnswer::Refusal {
            reason: RefusalReason::NoNumber,
        },
        _ => {
            if safety_pattern().is_match(raw_text) {
                ParsedAnswer::Refusal {
                    reason: RefusalReason::SafetyText,
                }
            } else {
                ParsedAnswer::Refusal {
                    reason: RefusalReason::NoNumber,
                }
            }
        }
    }
}

/// One scored model response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample: SampleRecord,
    pub parsed: ParsedAnswer,
    /// Exact match against the gold modal code; refusals count as incorrect.
    pub correct: bool,
    /// |predicted - gold| / (scale_max - scale_min); absent for refusals.
    pub abs_err_norm: Option<Score>,
}

/// Score every sample against its completion result. Results are matched by
/// request id = sample key; a sample with no result is scored as a
/// `NoNumber` refusal so batch failures degrade gracefully.
pub fn score_records(
    samples: &[SampleRecord],
    results: &[CompletionResult],
    codebook: &[QuestionSpec],
    options: ParseOptions,
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut by_id: BTreeMap<&str, &CompletionResult> = BTreeMap::new();
    for result in results {
        if by_id.insert(result.request_id.as_str(), result).is_some() {
            return Err(EvalError::DuplicateResult(result.request_id.clone()));
        }
    }
    let questions: BTreeMap<&str, &QuestionSpec> = codebook
        .iter()
        .map(|q| (q.question_id.as_str(), q))
        .collect();

    let mut records = Vec::with_capacity(samples.len());
    for sample in samples {
        let question = questions
            .get(sample.question_id.as_str())
            .ok_or_else(|| EvalError::UnknownQuestion(sample.question_id.clone()))?;
        let raw_text = by_id
            .get(sample.sample_key().as_str())
            .map(|r| r.raw_text.as_str())
            .unwrap_or("");
        let parsed = parse_numeric_with(raw_text, question, options);
        let (correct, abs_err_norm) = match parsed {
            ParsedAnswer::Value { code } => {
                let err = (code - sample.gold_modal_code).abs() as Score
                    / question.scale_range() as Score;
                (code == sample.gold_modal_code, Some(err))
            }
            ParsedAnswer::Refusal { .. } => (false, None),
        };
        records.push(EvalRecord {
            sample: sample.clone(),
            parsed,
            correct,
            abs_err_norm,
        });
    }
    Ok(records)
}

/// Aggregation granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Subgroup,
    Stratum,
    Overall,
}

/// Accuracy, NMAE and refusal rate of one group of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupMetrics {
    pub stratum: String,
    /// Subgroup key, empty for stratum-level and overall rows.
    pub subgroup: String,
    pub n_samples: usize,
    /// Correct / total; refusals count against accuracy.
    pub accuracy: Score,
    /// Mean normalized absolute error over parsable responses only; absent
    /// when every response was a refusal.
    pub nmae: Option<Score>,
    pub refusal_rate: Score,
}

/// What counts in the accuracy denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyDenominator {
    /// Accuracy = correct / all samples; refusals count as incorrect.
    #[default]
    AllSamples,
    /// Accuracy = correct / parsable samples; refusals drop out of the
    /// ratio (0 when nothing was parsable).
    ParsableOnly,
}

fn metrics_for(
    stratum: &str,
    subgroup: &str,
    records: &[&EvalRecord],
    denominator: AccuracyDenominator,
) -> SubgroupMetrics {
    let n = records.len();
    let correct = records.iter().filter(|r| r.correct).count();
    let refusals = records.iter().filter(|r| r.parsed.is_refusal()).count();
    let errs: Vec<Score> = records.iter().filter_map(|r| r.abs_err_norm).collect();
    let accuracy_denominator = match denominator {
        AccuracyDenominator::AllSamples => n,
        AccuracyDenominator::ParsableOnly => n - refusals,
    };
    SubgroupMetrics {
        stratum: stratum.to_string(),
        subgroup: subgroup.to_string(),
        n_samples: n,
        accuracy: if accuracy_denominator == 0 {
            0.0
        } else {
            correct as Score / accuracy_denominator as Score
        },
        nmae: if errs.is_empty() {
            None
        } else {
            Some(errs.iter().sum::<Score>() / errs.len() as Score)
        },
        refusal_rate: refusals as Score / n as Score,
    }
}

/// Aggregate records at the requested granularity. The overall row is the
/// unweighted mean over samples, not over subgroups. Refusals count
/// against accuracy.
pub fn aggregate(
    records: &[EvalRecord],
    group_by: GroupBy,
) -> Result<Vec<SubgroupMetrics>, EvalError> {
    aggregate_with(records, group_by, AccuracyDenominator::AllSamples)
}

/// Aggregate with an explicit accuracy-denominator convention.
pub fn aggregate_with(
    records: &[EvalRecord],
    group_by: GroupBy,
    denominator: AccuracyDenominator,
) -> Result<Vec<SubgroupMetrics>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyGroup);
    }
    match group_by {
        GroupBy::Overall => {
            let all: Vec<&EvalRecord> = records.iter().collect();
            Ok(vec![metrics_for("overall", "", &all, denominator)])
        }
        GroupBy::Stratum => {
            let mut groups: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
            for r in records {
                groups
                    .entry(r.sample.subgroup.stratum.name.clone())
                    .or_default()
                    .push(r);
            }
            Ok(groups
                .into_iter()
                .map(|(stratum, rs)| metrics_for(&stratum, "", &rs, denominator))
                .collect())
        }
        GroupBy::Subgroup => {
            let mut groups: BTreeMap<(String, String), Vec<&EvalRecord>> = BTreeMap::new();
            for r in records {
                groups
                    .entry((
                        r.sample.subgroup.stratum.name.clone(),
                        r.sample.subgroup.key(),
                    ))
                    .or_default()
                    .push(r);
            }
            Ok(groups
                .into_iter()
                .map(|((stratum, subgroup), rs)| metrics_for(&stratum, &subgroup, &rs, denominator))
                .collect())
        }
    }
}

/// Write aggregated metrics as delimited text.
pub fn write_metrics_csv<W: Write>(
    metrics: &[SubgroupMetrics],
    writer: W,
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "stratum",
        "subgroup",
        "n_samples",
        "accuracy",
        "nmae",
        "refusal_rate",
    ])
    .map_err(csv_err)?;
    for m in metrics {
        w.write_record([
            m.stratum.as_str(),
            m.subgroup.as_str(),
            &m.n_samples.to_string(),
            &format!("{:.6}", m.accuracy),
            &m.nmae.map(|v| format!("{v:.6}")).unwrap_or_default(),
            &format!("{:.6}", m.refusal_rate),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Write per-record outcomes as delimited text.
pub fn write_records_csv<W: Write>(records: &[EvalRecord], writer: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "sample_key",
        "split",
        "gold_modal_code",
        "parsed_code",
        "refusal_reason",
        "correct",
        "abs_err_norm",
    ])
    .map_err(csv_err)?;
    for r in records {
        let refusal = match r.parsed {
            ParsedAnswer::Refusal { reason } => match reason {
                RefusalReason::NoNumber => "no_number",
                RefusalReason::OutOfRange => "out_of_range",
                RefusalReason::SafetyText => "safety_text",
            },
            ParsedAnswer::Value { .. } => "",
        };
        w.write_record([
            r.sample.sample_key().as_str(),
            match r.sample.split {
                crate::dataset::Split::Train => "train",
                crate::dataset::Split::EvalOod => "eval_ood",
            },
            &r.sample.gold_modal_code.to_string(),
            &r.parsed.code().map(|c| c.to_string()).unwrap_or_default(),
            refusal,
            &r.correct.to_string(),
            &r.abs_err_norm
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> EvalError {
    EvalError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{PromptMode, PromptSet, Split};
    use crate::gateway::RequestStatus;
    use crate::stratify::{Stratum, Subgroup};
    use proptest::prelude::*;

    fn question(min: i64, max: i64) -> QuestionSpec {
        QuestionSpec {
            question_id: "Q1".to_string(),
            text: "t".to_string(),
            category: "Ethical Values".to_string(),
            scale_min: min,
            scale_max: max,
            choice_labels: BTreeMap::new(),
            excluded: false,
        }
    }

    #[test]
    fn parses_answer_pattern() {
        let q = question(1, 10);
        assert_eq!(
            parse_numeric("Answer: 7", &q),
            ParsedAnswer::Value { code: 7 }
        );
        assert_eq!(
            parse_numeric("answer: 7", &q),
            ParsedAnswer::Value { code: 7 }
        );
        assert_eq!(
            parse_numeric("  ANSWER :  3 .", &q),
            ParsedAnswer::Value { code: 3 }
        );
        assert_eq!(
            parse_numeric("My final answer is \"Answer: 5\"", &q),
            ParsedAnswer::Value { code: 5 }
        );
    }

    #[test]
    fn last_answer_pattern_wins() {
        let q = question(1, 10);
        assert_eq!(
            parse_numeric("Answer: 4. Wait, no. Answer: 6", &q),
            ParsedAnswer::Value { code: 6 }
        );
    }

    #[test]
    fn refusal_text_has_no_number() {
        let q = question(1, 10);
        assert_eq!(
            parse_numeric("I cannot answer that request.", &q),
            ParsedAnswer::Refusal {
                reason: RefusalReason::NoNumber
            }
        );
    }

    #[test]
    fn out_of_range_is_refusal() {
        let q = question(1, 10);
        assert_eq!(
            parse_numeric("Answer: 15", &q),
            ParsedAnswer::Refusal {
                reason: RefusalReason::OutOfRange
            }
        );
        assert_eq!(
            parse_numeric("Answer: -2", &q),
            ParsedAnswer::Refusal {
                reason: RefusalReason::OutOfRange
            }
        );
    }

    #[test]
    fn lone_integer_fallback() {
        let q = question(1, 10);
        assert_eq!(
            parse_numeric("I would say 7, definitely.", &q),
            ParsedAnswer::Value { code: 7 }
        );
    }

    #[test]
    fn ambiguous_integers_refuse() {
        let q = question(1, 10);
        assert_eq!(
            parse_numeric("Either 3 or 5, hard to say.", &q),
            ParsedAnswer::Refusal {
                reason: RefusalReason::NoNumber
            }
        );
        assert_eq!(
            parse_numeric("I'm sorry, I can't pick between 1 and 10 on this.", &q),
            ParsedAnswer::Refusal {
                reason: RefusalReason::SafetyText
            }
        );
    }

    #[test]
    fn strict_mode_disables_fallback() {
        let q = question(1, 10);
        let strict = ParseOptions { strict: true };
        assert_eq!(
            parse_numeric_with("I would say 7.", &q, strict),
            ParsedAnswer::Refusal {
                reason: RefusalReason::NoNumber
            }
        );
        assert_eq!(
            parse_numeric_with("Answer: 7", &q, strict),
            ParsedAnswer::Value { code: 7 }
        );
    }

    fn sample(id: usize, gold: i64) -> SampleRecord {
        SampleRecord {
            question_id: "Q1".to_string(),
            subgroup: Subgroup {
                stratum: Stratum::new(&["sex"]).unwrap(),
                values: vec![format!("g{id}")],
                population_n: 50,
            },
            persona_text: format!("g{id}"),
            split: Split::EvalOod,
            prompts: PromptSet {
                system_prompt: "s".to_string(),
                user_prompt: "u".to_string(),
                mode: PromptMode::Numerical,
            },
            gold_modal_code: gold,
            gold_stance_label: gold.to_string(),
        }
    }

    fn result_for(s: &SampleRecord, text: &str) -> CompletionResult {
        CompletionResult {
            request_id: s.sample_key(),
            raw_text: text.to_string(),
            status: RequestStatus::Ok,
            attempts: 1,
            error: None,
        }
    }

    #[test]
    fn scoring_hand_arithmetic() {
        let q = vec![question(1, 4)];
        let samples = vec![sample(0, 1)];
        let results = vec![result_for(&samples[0], "Answer: 3")];
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        assert!(!records[0].correct);
        assert!((records[0].abs_err_norm.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_match_scores_zero_error() {
        let q = vec![question(1, 10)];
        let samples = vec![sample(0, 5)];
        let results = vec![result_for(&samples[0], "Answer: 5")];
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        assert!(records[0].correct);
        assert_eq!(records[0].abs_err_norm, Some(0.0));
    }

    #[test]
    fn nmae_matches_brute_force_sum() {
        let q = vec![question(1, 10)];
        let samples = vec![sample(0, 1), sample(1, 5), sample(2, 1)];
        let results = vec![
            result_for(&samples[0], "Answer: 3"),
            result_for(&samples[1], "Answer: 5"),
            result_for(&samples[2], "Answer: 10"),
        ];
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        let overall = aggregate(&records, GroupBy::Overall).unwrap();
        let expected = (2.0 / 9.0 + 0.0 + 1.0) / 3.0;
        assert!((overall[0].nmae.unwrap() - expected).abs() < 1e-12);
        assert!((overall[0].accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_results_become_refusals() {
        let q = vec![question(1, 10)];
        let samples = vec![sample(0, 5), sample(1, 5)];
        let results = vec![result_for(&samples[0], "Answer: 5")];
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        assert!(records[1].parsed.is_refusal());
    }

    #[test]
    fn duplicate_results_are_rejected() {
        let q = vec![question(1, 10)];
        let samples = vec![sample(0, 5)];
        let results = vec![
            result_for(&samples[0], "Answer: 5"),
            result_for(&samples[0], "Answer: 6"),
        ];
        assert!(matches!(
            score_records(&samples, &results, &q, ParseOptions::default()),
            Err(EvalError::DuplicateResult(_))
        ));
    }

    #[test]
    fn accuracy_denominator_is_switchable() {
        let q = vec![question(1, 10)];
        let samples = vec![sample(0, 5), sample(1, 5), sample(2, 5), sample(3, 5)];
        let texts = [
            "Answer: 5",
            "Answer: 7",
            "I cannot answer that request.",
            "Answer: 5",
        ];
        let results: Vec<CompletionResult> = samples
            .iter()
            .zip(texts)
            .map(|(s, t)| result_for(s, t))
            .collect();
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        let all = &aggregate_with(&records, GroupBy::Overall, AccuracyDenominator::AllSamples)
            .unwrap()[0];
        assert!((all.accuracy - 2.0 / 4.0).abs() < 1e-12);
        let parsable = &aggregate_with(
            &records,
            GroupBy::Overall,
            AccuracyDenominator::ParsableOnly,
        )
        .unwrap()[0];
        assert!((parsable.accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_refusals_flag_undefined_nmae() {
        let q = vec![question(1, 10)];
        let samples = vec![sample(0, 5), sample(1, 3)];
        let results: Vec<CompletionResult> = samples
            .iter()
            .map(|s| result_for(s, "I cannot answer that request."))
            .collect();
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        let overall = aggregate(&records, GroupBy::Overall).unwrap();
        assert_eq!(overall[0].accuracy, 0.0);
        assert_eq!(overall[0].refusal_rate, 1.0);
        assert_eq!(overall[0].nmae, None);
    }

    #[test]
    fn perfect_model_aggregates_cleanly() {
        let q = vec![question(1, 10)];
        let samples: Vec<SampleRecord> = (0..6).map(|i| sample(i, 4)).collect();
        let results: Vec<CompletionResult> =
            samples.iter().map(|s| result_for(s, "Answer: 4")).collect();
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        let overall = aggregate(&records, GroupBy::Overall).unwrap();
        assert_eq!(overall[0].accuracy, 1.0);
        assert_eq!(overall[0].nmae, Some(0.0));
        assert_eq!(overall[0].refusal_rate, 0.0);
    }

    #[test]
    fn mixed_fixture_matches_independent_tally() {
        let q = vec![question(1, 10)];
        let samples: Vec<SampleRecord> = (0..6).map(|i| sample(i, 5)).collect();
        let texts = [
            "Answer: 5",
            "Answer: 7",
            "I cannot answer that request.",
            "Answer: 5",
            "Answer: 1",
            "Answer: 99",
        ];
        let results: Vec<CompletionResult> = samples
            .iter()
            .zip(texts)
            .map(|(s, t)| result_for(s, t))
            .collect();
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        let overall = &aggregate(&records, GroupBy::Overall).unwrap()[0];

        // independent tally
        let correct = 2.0;
        let refusals = 2.0; // no-number + out-of-range
        let errors = [0.0, 2.0 / 9.0, 0.0f64.max(4.0 / 9.0)];
        let nmae = (errors[0] + errors[1] + 0.0 + errors[2]) / 4.0;
        assert!((overall.accuracy - correct / 6.0).abs() < 1e-12);
        assert!((overall.refusal_rate - refusals / 6.0).abs() < 1e-12);
        assert!((overall.nmae.unwrap() - nmae).abs() < 1e-12);
    }

    #[test]
    fn grouping_by_subgroup_and_stratum() {
        let q = vec![question(1, 10)];
        let samples = vec![sample(0, 5), sample(1, 5)];
        let results = vec![
            result_for(&samples[0], "Answer: 5"),
            result_for(&samples[1], "Answer: 6"),
        ];
        let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
        let by_subgroup = aggregate(&records, GroupBy::Subgroup).unwrap();
        assert_eq!(by_subgroup.len(), 2);
        let by_stratum = aggregate(&records, GroupBy::Stratum).unwrap();
        assert_eq!(by_stratum.len(), 1);
        assert_eq!(by_stratum[0].n_samples, 2);
    }

    proptest! {
        #[test]
        fn parser_is_total_and_in_range(text in ".{0,200}") {
            let q = question(1, 10);
            let parsed = parse_numeric(&text, &q);
            if let ParsedAnswer::Value { code } = parsed {
                prop_assert!(q.in_scale(code));
            }
        }

        #[test]
        fn shares_sum_to_one(
            outcomes in proptest::collection::vec(0u8..3, 1..60),
        ) {
            let q = vec![question(1, 10)];
            let samples: Vec<SampleRecord> =
                (0..outcomes.len()).map(|i| sample(i, 5)).collect();
            let results: Vec<CompletionResult> = samples
                .iter()
                .zip(&outcomes)
                .map(|(s, o)| {
                    let text = match o {
                        0 => "Answer: 5",
                        1 => "Answer: 7",
                        _ => "I cannot answer that request.",
                    };
                    result_for(s, text)
                })
                .collect();
            let records = score_records(&samples, &results, &q, ParseOptions::default()).unwrap();
            let overall = &aggregate(&records, GroupBy::Overall).unwrap()[0];
            let wrong_parsable = records
                .iter()
                .filter(|r| !r.correct && !r.parsed.is_refusal())
                .count() as Score
                / records.len() as Score;
            prop_assert!((overall.accuracy + wrong_parsable + overall.refusal_rate - 1.0).abs() < 1e-12);
            if let Some(nmae) = overall.nmae {
                prop_assert!((0.0..=1.0).contains(&nmae));
            }
        }
    }
}
