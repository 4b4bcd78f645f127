//! Deterministic synthetic survey generator. Produces a codebook and
//! respondent table shaped like the reference Singapore survey: the same
//! demographic axes, the same subgroup cardinalities for every sex-paired
//! stratum, 234 questions of which 20 (Q7-Q26) are meant to be excluded,
//! and answers that are a pure function of (question, demographics) so the
//! whole pipeline runs offline and reproducibly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::survey::{FilterLog, Provenance, QuestionSpec, RespondentRecord, SurveyTable};

/// The twelve question categories, cycled across the synthetic codebook.
pub const CATEGORIES: [&str; 12] = [
    "Religious Values",
    "Perceptions about Science/Tech",
    "Political Culture & Regimes",
    "Social Values, Norms, Stereotypes",
    "Perceptions of Migration",
    "Economic Values",
    "Perceptions of Corruption",
    "Perceptions of Security",
    "Political Interest & Participation",
    "Happiness and Wellbeing",
    "Ethical Values",
    "Social Capital, Trust, Membership",
];

const SCALES: [(i64, i64); 5] = [(1, 10), (1, 4), (1, 7), (0, 2), (1, 2)];

/// Qs excluded by the standard pre-processing (non-ordinal format block).
pub fn default_exclusions() -> Vec<String> {
    (7..=26).map(|i| format!("Q{i}")).collect()
}

/// 234-question codebook; after excluding Q7-Q26, 214 remain active.
pub fn synthetic_codebook() -> Vec<QuestionSpec> {
    (1..=234)
        .map(|i| {
            let (scale_min, scale_max) = SCALES[(i - 1) % SCALES.len()];
            let mut choice_labels = BTreeMap::new();
            if scale_max - scale_min <= 3 {
                for code in scale_min..=scale_max {
                    choice_labels.insert(code, format!("Option {code}"));
                }
            } else {
                choice_labels.insert(scale_min, "Not at all".to_string());
                choice_labels.insert(scale_max, "Completely".to_string());
            }
            QuestionSpec {
                question_id: format!("Q{i}"),
                text: format!(
                    "On a scale of {scale_min} to {scale_max}, where do you stand on topic {i}?"
                ),
                category: CATEGORIES[(i - 1) % CATEGORIES.len()].to_string(),
                scale_min,
                scale_max,
                choice_labels,
                excluded: false,
            }
        })
        .collect()
}

const AGES: [&str; 6] = [
    "16-24 years",
    "25-34 years",
    "35-44 years",
    "45-54 years",
    "55-64 years",
    "65 and over",
];

const ETHNICITIES: [&str; 6] = [
    "Chinese",
    "Malay",
    "South Asian",
    "Others",
    "Eurasian",
    "Caucasian",
];

const RELIGIONS: [&str; 8] = [
    "Buddhist",
    "No Denomination",
    "Protestant",
    "Muslim",
    "Other",
    "Roman Catholic",
    "Hindu",
    "Jew",
];

const FEMALE_AGE_COUNTS: [usize; 6] = [76, 174, 230, 208, 207, 193];
const MALE_AGE_COUNTS: [usize; 6] = [84, 181, 144, 172, 174, 169];
const FEMALE_ETHNICITY_COUNTS: [usize; 6] = [846, 125, 98, 14, 4, 1];
const MALE_ETHNICITY_COUNTS: [usize; 6] = [703, 111, 92, 7, 6, 5];
const FEMALE_RELIGION_COUNTS: [usize; 8] = [292, 232, 217, 146, 80, 66, 54, 1];
const MALE_RELIGION_COUNTS: [usize; 8] = [233, 240, 130, 129, 74, 60, 57, 1];

fn expand<'a>(values: &[&'a str], counts: &[usize]) -> Vec<&'a str> {
    values
        .iter()
        .zip(counts)
        .flat_map(|(v, c)| std::iter::repeat_n(*v, *c))
        .collect()
}

fn axis_index(values: &[&str], value: &str) -> usize {
    values.iter().position(|v| *v == value).unwrap_or(0)
}

/// Deterministic answer for one (question, respondent) pair. Question kinds
/// rotate: unanimous across all subgroups, sex-driven, and multi-axis, with
/// a fifth of respondents shifted by one step so histograms have spread but
/// an unambiguous mode.
fn answer_for(
    question_index: usize,
    question: &QuestionSpec,
    respondent_index: usize,
    record: &RespondentRecord,
) -> i64 {
    let n_choices = question.n_choices() as i64;
    let sex = if record.axis_value("sex") == "Female" {
        0
    } else {
        1
    } as i64;
    let age = axis_index(&AGES, record.axis_value("age_group")) as i64;
    let eth = axis_index(&ETHNICITIES, record.axis_value("ethnicity")) as i64;
    let rel = axis_index(&RELIGIONS, record.axis_value("religion")) as i64;
    // 7-cycle so every category (12-cycle) sees a mix of conflict kinds
    let q = question_index as i64;
    let base = match question_index % 7 {
        0 | 1 => q,
        2..=4 => q + sex * 2,
        _ => q + sex + age * 2 + eth + rel,
    };
    let mut code = question.scale_min + base.rem_euclid(n_choices);
    if (respondent_index * 31 + question_index * 17).is_multiple_of(5) {
        code = if code >= question.scale_max {
            code - 1
        } else {
            code + 1
        };
        code = code.clamp(question.scale_min, question.scale_max);
    }
    code
}

/// Build the full synthetic table: 2,012 respondents whose sex x age,
/// sex x ethnicity and sex x religion cell counts match the reference
/// survey exactly, with every respondent answering every question.
pub fn synthetic_table(codebook: &[QuestionSpec], seed: u64) -> SurveyTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut respondents = Vec::with_capacity(2012);

    for (sex, age_counts, eth_counts, rel_counts) in [
        (
            "Female",
            FEMALE_AGE_COUNTS,
            FEMALE_ETHNICITY_COUNTS,
            FEMALE_RELIGION_COUNTS,
        ),
        (
            "Male",
            MALE_AGE_COUNTS,
            MALE_ETHNICITY_COUNTS,
            MALE_RELIGION_COUNTS,
        ),
    ] {
        let mut ages = expand(&AGES, &age_counts);
        let mut ethnicities = expand(&ETHNICITIES, &eth_counts);
        let mut religions = expand(&RELIGIONS, &rel_counts);
        ages.shuffle(&mut rng);
        ethnicities.shuffle(&mut rng);
        religions.shuffle(&mut rng);
        for ((age, eth), rel) in ages.iter().zip(&ethnicities).zip(&religions) {
            let index = respondents.len();
            respondents.push(RespondentRecord {
                respondent_id: format!("r{:04}", index + 1),
                demographics: BTreeMap::from([
                    ("sex".to_string(), sex.to_string()),
                    ("age_group".to_string(), age.to_string()),
                    ("ethnicity".to_string(), eth.to_string()),
                    ("religion".to_string(), rel.to_string()),
                ]),
                answers: BTreeMap::new(),
            });
        }
    }

    for (r_idx, record) in respondents.iter_mut().enumerate() {
        let mut answers = BTreeMap::new();
        for (q_idx, question) in codebook.iter().enumerate() {
            answers.insert(
                question.question_id.clone(),
                answer_for(q_idx, question, r_idx, record),
            );
        }
        record.answers = answers;
    }

    SurveyTable {
        questions: codebook.to_vec(),
        respondents,
        provenance: Provenance {
            codebook_path: "<synthetic>".to_string(),
            responses_path: format!("<synthetic seed={seed}>"),
            filter_log: FilterLog::default(),
        },
    }
}

/// Write the synthetic codebook and responses to disk in the formats the
/// loaders expect; returns the (codebook, responses) paths.
pub fn write_synthetic_files(
    dir: &Path,
    seed: u64,
) -> std::io::Result<(std::path::PathBuf, std::path::PathBuf)> {
    let codebook = synthetic_codebook();
    let table = synthetic_table(&codebook, seed);

    let codebook_path = dir.join("codebook.json");
    let file = File::create(&codebook_path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &codebook).map_err(std::io::Error::other)?;

    let responses_path = dir.join("responses.csv");
    let file = File::create(&responses_path)?;
    let mut w = BufWriter::new(file);
    let mut header = vec![
        "respondent_id".to_string(),
        "sex".to_string(),
        "age_group".to_string(),
        "ethnicity".to_string(),
        "religion".to_string(),
    ];
    header.extend(codebook.iter().map(|q| q.question_id.clone()));
    writeln!(w, "{}", header.join(","))?;
    for r in &table.respondents {
        let mut row = vec![
            r.respondent_id.clone(),
            r.axis_value("sex").to_string(),
            r.axis_value("age_group").to_string(),
            r.axis_value("ethnicity").to_string(),
            r.axis_value("religion").to_string(),
        ];
        for q in &codebook {
            row.push(
                r.answers
                    .get(&q.question_id)
                    .map(|c| c.to_string())
                    .unwrap_or_default(),
            );
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok((codebook_path, responses_path))
}
