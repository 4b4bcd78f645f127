//! Demographic strata and subgroups, and the per-(question, subgroup)
//! opinions (answer histograms, modal answers, mode margins, validity) that
//! everything downstream is built on.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::survey::{SurveyTable, UNKNOWN_VALUE};
use crate::Score;

#[derive(Debug, Error)]
pub enum StratifyError {
    #[error("duplicate axis `{0}`")]
    DuplicateAxis(String),
    #[error("unknown or inactive question `{0}`")]
    UnknownQuestion(String),
    #[error("unknown demographic axis `{0}`")]
    UnknownAxis(String),
    #[error("value `{value}` never observed on axis `{axis}`")]
    UnknownAxisValue { axis: String, value: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Short form of an axis name used when composing pairwise stratum names,
/// e.g. `sex_x_age` rather than `sex_x_age_group`.
fn short_axis_name(axis: &str) -> &str {
    match axis {
        "age_group" => "age",
        other => other,
    }
}

/// A demographic partitioning scheme over one or two axes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub axes: Vec<String>,
    pub name: String,
}

impl Stratum {
    /// Build a stratum from 1..2 distinct axes in canonical order.
    pub fn new(axes: &[&str]) -> Result<Self, StratifyError> {
        assert!(
            !axes.is_empty() && axes.len() <= 2,
            "strata cover one or two axes"
        );
        if axes.len() == 2 && axes[0] == axes[1] {
            return Err(StratifyError::DuplicateAxis(axes[0].to_string()));
        }
        let name = if axes.len() == 1 {
            axes[0].to_string()
        } else {
            format!(
                "{}_x_{}",
                short_axis_name(axes[0]),
                short_axis_name(axes[1])
            )
        };
        Ok(Self {
            axes: axes.iter().map(|a| a.to_string()).collect(),
            name,
        })
    }
}

/// One cell of a stratum: the axis values and how many respondents match.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subgroup {
    pub stratum: Stratum,
    pub values: Vec<String>,
    pub population_n: usize,
}

impl Subgroup {
    /// Display key, e.g. `Female_Chinese`.
    pub fn key(&self) -> String {
        self.values.join("_")
    }
}

/// Per-(question, subgroup) answer histogram with modal statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupOpinion {
    pub question_id: String,
    pub subgroup: Subgroup,
    pub histogram: BTreeMap<i64, u64>,
    /// Total answers observed, n = sum of histogram counts.
    pub n: usize,
    /// Most frequent code; ties break to the lowest code. None when n = 0.
    pub modal_code: Option<i64>,
    /// (top count - second count) / n; 1.0 when a single code is observed.
    pub mode_margin: Score,
    /// n >= min_n for the min_n the opinion was computed with.
    pub valid: bool,
}

/// Enumerate all single-axis strata plus all unordered pairs, each pair
/// once, with axis order inherited from the input list.
pub fn enumerate_strata(axes: &[&str]) -> Result<Vec<Stratum>, StratifyError> {
    assert!(!axes.is_empty(), "axes must be non-empty");
    for (i, a) in axes.iter().enumerate() {
        if axes[..i].contains(a) {
            return Err(StratifyError::DuplicateAxis(a.to_string()));
        }
    }
    let mut strata = Vec::new();
    for a in axes {
        strata.push(Stratum::new(&[a])?);
    }
    for i in 0..axes.len() {
        for j in (i + 1)..axes.len() {
            strata.push(Stratum::new(&[axes[i], axes[j]])?);
        }
    }
    Ok(strata)
}

fn check_axes(table: &SurveyTable, stratum: &Stratum) -> Result<(), StratifyError> {
    for axis in &stratum.axes {
        if table.axis_values(axis).is_empty() {
            return Err(StratifyError::UnknownAxis(axis.clone()));
        }
    }
    Ok(())
}

/// Indices of respondents matching every (axis, value) pair of a subgroup.
fn member_indices(table: &SurveyTable, subgroup: &Subgroup) -> Vec<usize> {
    table
        .respondents
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            subgroup
                .stratum
                .axes
                .iter()
                .zip(&subgroup.values)
                .all(|(axis, value)| r.axis_value(axis) == value)
        })
        .map(|(i, _)| i)
        .collect()
}

fn opinion_from_members(
    table: &SurveyTable,
    question_id: &str,
    subgroup: &Subgroup,
    members: &[usize],
    min_n: usize,
) -> SubgroupOpinion {
    let mut histogram: BTreeMap<i64, u64> = BTreeMap::new();
    for &i in members {
        if let Some(&code) = table.respondents[i].answers.get(question_id) {
            *histogram.entry(code).or_insert(0) += 1;
        }
    }
    let n: u64 = histogram.values().sum();
    let (modal_code, mode_margin) = modal_stats(&histogram, n);
    SubgroupOpinion {
        question_id: question_id.to_string(),
        subgroup: subgroup.clone(),
        histogram,
        n: n as usize,
        modal_code,
        mode_margin,
        valid: (n as usize) >= min_n,
    }
}

/// Modal code (ties to the lowest code) and mode margin of a histogram.
fn modal_stats(histogram: &BTreeMap<i64, u64>, n: u64) -> (Option<i64>, Score) {
    if n == 0 {
        return (None, 0.0);
    }
    let mut top_code = 0i64;
    let mut top = 0u64;
    let mut second = 0u64;
    // Ascending code order: a strictly greater count is required to displace
    // the incumbent, so ties resolve to the lowest code.
    for (&code, &count) in histogram {
        if count > top {
            second = top;
            top = count;
            top_code = code;
        } else if count > second {
            second = count;
        }
    }
    let margin = (top - second) as Score / n as Score;
    (Some(top_code), margin)
}

/// Compute one subgroup's opinion on one question.
pub fn compute_opinion(
    table: &SurveyTable,
    question_id: &str,
    subgroup: &Subgroup,
    min_n: usize,
) -> Result<SubgroupOpinion, StratifyError> {
    let question = table
        .question(question_id)
        .filter(|q| !q.excluded)
        .ok_or_else(|| StratifyError::UnknownQuestion(question_id.to_string()))?;
    check_axes(table, &subgroup.stratum)?;
    for (axis, value) in subgroup.stratum.axes.iter().zip(&subgroup.values) {
        if !table.axis_values(axis).contains(value) {
            return Err(StratifyError::UnknownAxisValue {
                axis: axis.clone(),
                value: value.clone(),
            });
        }
    }
    let members = member_indices(table, subgroup);
    let _ = question;
    Ok(opinion_from_members(
        table,
        question_id,
        subgroup,
        &members,
        min_n,
    ))
}

/// Which respondent count gates a subgroup's validity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidityScope {
    /// Total respondents matching the subgroup (governs subgroup inclusion).
    WholeSubgroup,
    /// Respondents matching the subgroup who answered the given question
    /// (governs per-question sample emission).
    PerQuestion(String),
}

/// Enumerate the observed subgroups of a stratum, then keep those whose
/// respondent count under `scope` meets `min_n`. Respondents with an
/// unknown value on any stratum axis are left out of that stratum entirely.
pub fn valid_subgroups(
    table: &SurveyTable,
    stratum: &Stratum,
    min_n: usize,
    scope: &ValidityScope,
) -> Result<Vec<Subgroup>, StratifyError> {
    check_axes(table, stratum)?;
    if let ValidityScope::PerQuestion(qid) = scope {
        if table.question(qid).filter(|q| !q.excluded).is_none() {
            return Err(StratifyError::UnknownQuestion(qid.clone()));
        }
    }
    let grouped = group_by_subgroup(table, stratum);
    let mut result = Vec::new();
    for (values, members) in grouped {
        let population_n = members.len();
        let scoped_n = match scope {
            ValidityScope::WholeSubgroup => population_n,
            ValidityScope::PerQuestion(qid) => members
                .iter()
                .filter(|&&i| table.respondents[i].answers.contains_key(qid))
                .count(),
        };
        if scoped_n >= min_n {
            result.push(Subgroup {
                stratum: stratum.clone(),
                values,
                population_n,
            });
        }
    }
    Ok(result)
}

/// Respondent indices per observed value combination, unknowns excluded.
fn group_by_subgroup(table: &SurveyTable, stratum: &Stratum) -> BTreeMap<Vec<String>, Vec<usize>> {
    let mut grouped: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    'resp: for (i, r) in table.respondents.iter().enumerate() {
        let mut values = Vec::with_capacity(stratum.axes.len());
        for axis in &stratum.axes {
            let v = r.axis_value(axis);
            if v == UNKNOWN_VALUE {
                continue 'resp;
            }
            values.push(v.to_string());
        }
        grouped.entry(values).or_default().push(i);
    }
    grouped
}

/// Key of one opinion-matrix cell; ordering is (question id with natural
/// numeric comparison, stratum name, subgroup values).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixKey {
    pub question_id: String,
    pub stratum_name: String,
    pub values: Vec<String>,
}

/// Natural sort key for question ids: leading alpha prefix, then the first
/// digit run numerically, then the full id (so Q2 sorts before Q10).
fn natural_key(id: &str) -> (String, u64, String) {
    let prefix: String = id.chars().take_while(|c| !c.is_ascii_digit()).collect();
    let digits: String = id
        .chars()
        .skip(prefix.chars().count())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let num = digits.parse().unwrap_or(0);
    (prefix, num, id.to_string())
}

impl Ord for MatrixKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        natural_key(&self.question_id)
            .cmp(&natural_key(&other.question_id))
            .then_with(|| self.stratum_name.cmp(&other.stratum_name))
            .then_with(|| self.values.cmp(&other.values))
    }
}

impl PartialOrd for MatrixKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Complete opinion matrix: every active question crossed with every
/// observed subgroup of every requested stratum, valid or not.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpinionMatrix {
    pub entries: BTreeMap<MatrixKey, SubgroupOpinion>,
    pub min_n: usize,
}

impl OpinionMatrix {
    pub fn get(
        &self,
        question_id: &str,
        stratum_name: &str,
        values: &[String],
    ) -> Option<&SubgroupOpinion> {
        self.entries.get(&MatrixKey {
            question_id: question_id.to_string(),
            stratum_name: stratum_name.to_string(),
            values: values.to_vec(),
        })
    }

    /// Valid opinions of one stratum for one question.
    pub fn valid_for(&self, question_id: &str, stratum_name: &str) -> Vec<&SubgroupOpinion> {
        self.entries
            .iter()
            .filter(|(k, op)| {
                k.question_id == question_id && k.stratum_name == stratum_name && op.valid
            })
            .map(|(_, op)| op)
            .collect()
    }

    pub fn stratum_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .entries
            .keys()
            .map(|k| k.stratum_name.clone())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn question_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.keys().map(|k| k.question_id.clone()).collect();
        ids.sort_by_key(|id| natural_key(id));
        ids.dedup();
        ids
    }
}

/// Build the complete matrix over active questions and all observed
/// subgroups of the given strata. Validity of each cell uses the
/// per-question answer count against `min_n`.
pub fn opinion_matrix(
    table: &SurveyTable,
    strata: &[Stratum],
    min_n: usize,
) -> Result<OpinionMatrix, StratifyError> {
    let mut entries = BTreeMap::new();
    for stratum in strata {
        check_axes(table, stratum)?;
        let grouped = group_by_subgroup(table, stratum);
        for (values, members) in grouped {
            let subgroup = Subgroup {
                stratum: stratum.clone(),
                values: values.clone(),
                population_n: members.len(),
            };
            for question in table.active_questions() {
                let opinion =
                    opinion_from_members(table, &question.question_id, &subgroup, &members, min_n);
                entries.insert(
                    MatrixKey {
                        question_id: question.question_id.clone(),
                        stratum_name: stratum.name.clone(),
                        values: values.clone(),
                    },
                    opinion,
                );
            }
        }
    }
    Ok(OpinionMatrix { entries, min_n })
}

/// Write the matrix as delimited text: one row per (question, stratum,
/// subgroup) with n, modal code, margin and validity.
pub fn write_opinion_matrix_csv<W: Write>(
    matrix: &OpinionMatrix,
    writer: W,
) -> Result<(), StratifyError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "question_id",
        "stratum",
        "subgroup",
        "n",
        "modal_code",
        "mode_margin",
        "valid",
    ])
    .map_err(io_err)?;
    for (key, op) in &matrix.entries {
        w.write_record([
            key.question_id.as_str(),
            key.stratum_name.as_str(),
            &key.values.join("_"),
            &op.n.to_string(),
            &op.modal_code.map(|c| c.to_string()).unwrap_or_default(),
            &format!("{:.6}", op.mode_margin),
            &op.valid.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> StratifyError {
    StratifyError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::{Provenance, QuestionSpec, RespondentRecord};
    use proptest::prelude::*;

    fn question(id: &str, min: i64, max: i64) -> QuestionSpec {
        QuestionSpec {
            question_id: id.to_string(),
            text: format!("text {id}"),
            category: "Economic Values".to_string(),
            scale_min: min,
            scale_max: max,
            choice_labels: BTreeMap::new(),
            excluded: false,
        }
    }

    fn respondent(id: usize, sex: &str, age: &str, answers: &[(&str, i64)]) -> RespondentRecord {
        let mut demographics = BTreeMap::new();
        demographics.insert("sex".to_string(), sex.to_string());
        demographics.insert("age_group".to_string(), age.to_string());
        demographics.insert("ethnicity".to_string(), "Chinese".to_string());
        demographics.insert("religion".to_string(), "Buddhist".to_string());
        RespondentRecord {
            respondent_id: format!("r{id}"),
            demographics,
            answers: answers.iter().map(|(q, c)| (q.to_string(), *c)).collect(),
        }
    }

    fn table(respondents: Vec<RespondentRecord>) -> SurveyTable {
        SurveyTable {
            questions: vec![question("Q1", 1, 10)],
            respondents,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn four_axes_yield_ten_strata() {
        let strata = enumerate_strata(&["sex", "age_group", "ethnicity", "religion"]).unwrap();
        assert_eq!(strata.len(), 10);
        let names: Vec<&str> = strata.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "sex",
                "age_group",
                "ethnicity",
                "religion",
                "sex_x_age",
                "sex_x_ethnicity",
                "sex_x_religion",
                "age_x_ethnicity",
                "age_x_religion",
                "ethnicity_x_religion",
            ]
        );
    }

    #[test]
    fn single_axis_is_one_stratum() {
        let strata = enumerate_strata(&["sex"]).unwrap();
        assert_eq!(strata.len(), 1);
        assert_eq!(strata[0].name, "sex");
    }

    #[test]
    fn duplicate_axis_is_rejected() {
        assert!(matches!(
            enumerate_strata(&["sex", "sex"]),
            Err(StratifyError::DuplicateAxis(_))
        ));
    }

    fn sex_subgroup(t: &SurveyTable, value: &str) -> Subgroup {
        let stratum = Stratum::new(&["sex"]).unwrap();
        let n = t
            .respondents
            .iter()
            .filter(|r| r.axis_value("sex") == value)
            .count();
        Subgroup {
            stratum,
            values: vec![value.to_string()],
            population_n: n,
        }
    }

    #[test]
    fn opinion_counts_mode_and_margin() {
        // histogram {2: 6, 5: 4} over 10 respondents
        let mut respondents = Vec::new();
        for i in 0..6 {
            respondents.push(respondent(i, "Female", "16-24 years", &[("Q1", 2)]));
        }
        for i in 6..10 {
            respondents.push(respondent(i, "Female", "16-24 years", &[("Q1", 5)]));
        }
        let t = table(respondents);
        let sg = sex_subgroup(&t, "Female");
        let op = compute_opinion(&t, "Q1", &sg, 5).unwrap();
        assert_eq!(op.histogram[&2], 6);
        assert_eq!(op.histogram[&5], 4);
        assert_eq!(op.modal_code, Some(2));
        assert!((op.mode_margin - 0.2).abs() < 1e-12);
        assert!(op.valid);
    }

    #[test]
    fn unanimous_subgroup_has_margin_one() {
        let respondents = (0..10)
            .map(|i| respondent(i, "Male", "25-34 years", &[("Q1", 3)]))
            .collect();
        let t = table(respondents);
        let sg = sex_subgroup(&t, "Male");
        let op = compute_opinion(&t, "Q1", &sg, 1).unwrap();
        assert_eq!(op.modal_code, Some(3));
        assert_eq!(op.mode_margin, 1.0);
    }

    #[test]
    fn validity_threshold_is_strict() {
        let respondents = (0..29)
            .map(|i| respondent(i, "Female", "16-24 years", &[("Q1", 2)]))
            .collect();
        let t = table(respondents);
        let sg = sex_subgroup(&t, "Female");
        let op = compute_opinion(&t, "Q1", &sg, 30).unwrap();
        assert_eq!(op.n, 29);
        assert!(!op.valid);
    }

    #[test]
    fn ties_break_to_lowest_code() {
        let mut respondents = Vec::new();
        for i in 0..4 {
            respondents.push(respondent(i, "Female", "16-24 years", &[("Q1", 7)]));
        }
        for i in 4..8 {
            respondents.push(respondent(i, "Female", "16-24 years", &[("Q1", 3)]));
        }
        let t = table(respondents);
        let sg = sex_subgroup(&t, "Female");
        let op = compute_opinion(&t, "Q1", &sg, 1).unwrap();
        assert_eq!(op.modal_code, Some(3));
        assert_eq!(op.mode_margin, 0.0);
    }

    #[test]
    fn unknown_question_and_axis_value_are_rejected() {
        let t = table(vec![respondent(0, "Female", "16-24 years", &[("Q1", 1)])]);
        let sg = sex_subgroup(&t, "Female");
        assert!(matches!(
            compute_opinion(&t, "Q9", &sg, 1),
            Err(StratifyError::UnknownQuestion(_))
        ));
        let mut bad = sg.clone();
        bad.values = vec!["Nonbinary".to_string()];
        assert!(matches!(
            compute_opinion(&t, "Q1", &bad, 1),
            Err(StratifyError::UnknownAxisValue { .. })
        ));
    }

    #[test]
    fn whole_subgroup_scope_filters_on_population() {
        let mut respondents: Vec<RespondentRecord> = (0..40)
            .map(|i| respondent(i, "Female", "16-24 years", &[("Q1", 2)]))
            .collect();
        respondents.extend((40..50).map(|i| respondent(i, "Male", "16-24 years", &[("Q1", 2)])));
        let t = table(respondents);
        let stratum = Stratum::new(&["sex"]).unwrap();
        let valid = valid_subgroups(&t, &stratum, 30, &ValidityScope::WholeSubgroup).unwrap();
        assert_eq!(valid.len(), 1);
        assert_eq!(valid[0].values, vec!["Female"]);
        assert_eq!(valid[0].population_n, 40);
    }

    #[test]
    fn per_question_scope_filters_on_answered_n() {
        // 40 female respondents but only 20 answered Q1.
        let mut respondents: Vec<RespondentRecord> = (0..20)
            .map(|i| respondent(i, "Female", "16-24 years", &[("Q1", 2)]))
            .collect();
        respondents.extend((20..40).map(|i| respondent(i, "Female", "16-24 years", &[])));
        let t = table(respondents);
        let stratum = Stratum::new(&["sex"]).unwrap();
        let whole = valid_subgroups(&t, &stratum, 30, &ValidityScope::WholeSubgroup).unwrap();
        assert_eq!(whole.len(), 1);
        let per_q = valid_subgroups(
            &t,
            &stratum,
            30,
            &ValidityScope::PerQuestion("Q1".to_string()),
        )
        .unwrap();
        assert!(per_q.is_empty());
    }

    #[test]
    fn empty_table_yields_no_subgroups() {
        let t = table(vec![respondent(0, "Female", "16-24 years", &[])]);
        let stratum = Stratum::new(&["sex"]).unwrap();
        let valid = valid_subgroups(&t, &stratum, 30, &ValidityScope::WholeSubgroup).unwrap();
        assert!(valid.is_empty());
    }

    #[test]
    fn unknown_axis_values_are_excluded_from_stratum() {
        let mut r = respondent(0, "Female", "16-24 years", &[("Q1", 1)]);
        r.demographics
            .insert("sex".to_string(), UNKNOWN_VALUE.to_string());
        let t = table(vec![r, respondent(1, "Male", "16-24 years", &[("Q1", 2)])]);
        let stratum = Stratum::new(&["sex"]).unwrap();
        let valid = valid_subgroups(&t, &stratum, 1, &ValidityScope::WholeSubgroup).unwrap();
        assert_eq!(valid.len(), 1);
        assert_eq!(valid[0].values, vec!["Male"]);
    }

    #[test]
    fn matrix_covers_all_observed_subgroups() {
        let respondents = vec![
            respondent(0, "Female", "16-24 years", &[("Q1", 1)]),
            respondent(1, "Male", "16-24 years", &[("Q1", 2)]),
            respondent(2, "Male", "25-34 years", &[]),
        ];
        let t = table(respondents);
        let strata = vec![Stratum::new(&["sex"]).unwrap()];
        let matrix = opinion_matrix(&t, &strata, 1).unwrap();
        assert_eq!(matrix.entries.len(), 2);
        let male = matrix.get("Q1", "sex", &["Male".to_string()]).unwrap();
        assert_eq!(male.subgroup.population_n, 2);
        assert_eq!(male.n, 1);
    }

    #[test]
    fn matrix_flags_empty_cells_invalid() {
        let respondents = vec![
            respondent(0, "Female", "16-24 years", &[("Q1", 1)]),
            respondent(1, "Male", "16-24 years", &[]),
        ];
        let t = table(respondents);
        let strata = vec![Stratum::new(&["sex"]).unwrap()];
        let matrix = opinion_matrix(&t, &strata, 1).unwrap();
        let male = matrix.get("Q1", "sex", &["Male".to_string()]).unwrap();
        assert_eq!(male.n, 0);
        assert_eq!(male.modal_code, None);
        assert!(!male.valid);
    }

    #[test]
    fn matrix_key_order_is_natural() {
        let k = |q: &str| MatrixKey {
            question_id: q.to_string(),
            stratum_name: "sex".to_string(),
            values: vec!["Female".to_string()],
        };
        assert!(k("Q2") < k("Q10"));
        assert!(k("Q10") < k("Q241"));
    }

    #[test]
    fn matrix_csv_has_one_row_per_cell() {
        let respondents = vec![
            respondent(0, "Female", "16-24 years", &[("Q1", 1)]),
            respondent(1, "Male", "16-24 years", &[("Q1", 2)]),
        ];
        let t = table(respondents);
        let strata = vec![Stratum::new(&["sex"]).unwrap()];
        let matrix = opinion_matrix(&t, &strata, 1).unwrap();
        let mut buf = Vec::new();
        write_opinion_matrix_csv(&matrix, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("Q1,sex,Female"));
    }

    /// Brute-force tally used as the oracle for modal statistics.
    fn brute_force_mode(codes: &[i64]) -> (Option<i64>, f64) {
        if codes.is_empty() {
            return (None, 0.0);
        }
        let mut distinct: Vec<i64> = codes.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let count = |c: i64| codes.iter().filter(|&&x| x == c).count();
        let best = *distinct
            .iter()
            .max_by_key(|&&c| (count(c), std::cmp::Reverse(c)))
            .unwrap();
        let top = count(best);
        let second = distinct
            .iter()
            .filter(|&&c| c != best)
            .map(|&c| count(c))
            .max()
            .unwrap_or(0);
        ((Some(best)), (top - second) as f64 / codes.len() as f64)
    }

    proptest! {
        #[test]
        fn modal_stats_match_brute_force(codes in proptest::collection::vec(1i64..=10, 1..200)) {
            let respondents: Vec<RespondentRecord> = codes
                .iter()
                .enumerate()
                .map(|(i, &c)| respondent(i, "Female", "16-24 years", &[("Q1", c)]))
                .collect();
            let t = table(respondents);
            let sg = sex_subgroup(&t, "Female");
            let op = compute_opinion(&t, "Q1", &sg, 1).unwrap();
            let (oracle_mode, oracle_margin) = brute_force_mode(&codes);
            prop_assert_eq!(op.modal_code, oracle_mode);
            prop_assert!((op.mode_margin - oracle_margin).abs() < 1e-12);
            prop_assert!(op.mode_margin >= 0.0 && op.mode_margin <= 1.0);
        }

        #[test]
        fn modal_code_is_permutation_invariant(
            codes in proptest::collection::vec(1i64..=10, 1..100),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = codes.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            shuffled.shuffle(&mut rng);

            let build = |cs: &[i64]| {
                let respondents: Vec<RespondentRecord> = cs
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| respondent(i, "Female", "16-24 years", &[("Q1", c)]))
                    .collect();
                table(respondents)
            };
            let t1 = build(&codes);
            let t2 = build(&shuffled);
            let op1 = compute_opinion(&t1, "Q1", &sex_subgroup(&t1, "Female"), 1).unwrap();
            let op2 = compute_opinion(&t2, "Q1", &sex_subgroup(&t2, "Female"), 1).unwrap();
            prop_assert_eq!(op1.modal_code, op2.modal_code);
            prop_assert_eq!(op1.mode_margin, op2.mode_margin);
        }

        #[test]
        fn stratum_histograms_partition_answers(
            rows in proptest::collection::vec((0usize..2, 0usize..3, 1i64..=10), 1..120),
        ) {
            // Third of the respondents get an unknown sex to exercise exclusion.
            let sexes = ["Female", "Male"];
            let ages = ["16-24 years", "25-34 years", "35-44 years"];
            let respondents: Vec<RespondentRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, &(s, a, c))| {
                    let sex = if i % 3 == 2 { UNKNOWN_VALUE } else { sexes[s] };
                    respondent(i, sex, ages[a], &[("Q1", c)])
                })
                .collect();
            let answered = respondents.len();
            let known_sex = respondents
                .iter()
                .filter(|r| r.axis_value("sex") != UNKNOWN_VALUE)
                .count();
            let t = table(respondents);
            let strata = vec![Stratum::new(&["sex"]).unwrap()];
            let matrix = opinion_matrix(&t, &strata, 1).unwrap();
            let total: usize = matrix.entries.values().map(|op| op.n).sum();
            prop_assert!(total <= answered);
            prop_assert_eq!(total, known_sex);
        }
    }
}
