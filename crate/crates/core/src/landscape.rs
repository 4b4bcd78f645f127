//! Value-conflict scoring: modal diversity per (question, stratum), the
//! ordinal Wasserstein divergence between subgroup answer distributions,
//! category-level aggregation, and the label-stability check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{spearman, StatsError};
use crate::stratify::OpinionMatrix;
use crate::survey::QuestionSpec;
use crate::{Real, Score};

#[derive(Debug, Error)]
pub enum LandscapeError {
    #[error("no modal answers supplied")]
    EmptyModes,
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("degenerate scale: range is zero")]
    DegenerateScale,
    #[error("histogram code {code} outside scale {scale_min}..{scale_max}")]
    SupportOutOfRange {
        code: i64,
        scale_min: i64,
        scale_max: i64,
    },
    #[error("need at least two valid subgroups, got {0}")]
    InsufficientSubgroups(usize),
    #[error("question `{0}` is not in the codebook")]
    UnknownQuestion(String),
    #[error("question `{0}` has no category in the codebook")]
    UnknownCategory(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Which denominator normalises the modal-answer entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorMode {
    /// log2(min(|S|, |C|)): the theoretical maximum entropy.
    MinSC,
    /// log2(|M|): the number of distinct modal answers actually observed.
    DistinctModes,
}

impl DenominatorMode {
    pub fn name(&self) -> &'static str {
        match self {
            DenominatorMode::MinSC => "min-s-c",
            DenominatorMode::DistinctModes => "distinct-modes",
        }
    }
}

/// Raw modal-diversity outcome of one (question, stratum) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsOutcome<F = Score> {
    pub score: F,
    pub n_subgroups: usize,
    pub n_distinct_modes: usize,
    /// Set when |S| = 1, |C| = 1, or |M| = 1 made the denominator zero;
    /// the score is reported as 0 rather than failing the pipeline.
    pub degenerate_denominator: bool,
}

/// Normalised Shannon entropy (bits) of the distribution of modal answers
/// across a stratum's valid subgroups. One mode per valid subgroup;
/// `n_choices` is the question's |C|. A score of 0 means complete
/// consensus; values near 1 mean high conflict.
pub fn modal_diversity<F: Real>(
    modes: &[i64],
    n_choices: usize,
    denominator: DenominatorMode,
) -> Result<MdsOutcome<F>, LandscapeError> {
    if modes.is_empty() {
        return Err(LandscapeError::EmptyModes);
    }
    let n_subgroups = modes.len();
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &m in modes {
        *counts.entry(m).or_insert(0) += 1;
    }
    let n_distinct = counts.len();
    debug_assert!(
        n_distinct <= n_choices,
        "modes must come from the question's answer choices"
    );

    let total = F::from_usize(n_subgroups).unwrap();
    let mut entropy = F::zero();
    for &count in counts.values() {
        let p = F::from_usize(count).unwrap() / total;
        entropy = entropy - p * p.log2();
    }

    let denom_arg = match denominator {
        DenominatorMode::MinSC => n_subgroups.min(n_choices),
        DenominatorMode::DistinctModes => n_distinct,
    };
    let degenerate = denom_arg <= 1;
    let score = if entropy == F::zero() || degenerate {
        F::zero()
    } else {
        entropy / F::from_usize(denom_arg).unwrap().log2()
    };
    Ok(MdsOutcome {
        score,
        n_subgroups,
        n_distinct_modes: n_distinct,
        degenerate_denominator: degenerate,
    })
}

/// Modal diversity of one (question, stratum) cell with its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub question_id: String,
    pub stratum: String,
    pub score: Score,
    pub n_valid_subgroups: usize,
    pub n_distinct_modes: usize,
    pub denominator_mode: DenominatorMode,
    pub degenerate_denominator: bool,
}

/// First Wasserstein distance between two histograms on the integer grid
/// [scale_min, scale_max] with unit spacing, normalised by the scale range:
/// sum_k |F_p(k) - F_q(k)| / (scale_max - scale_min).
pub fn ordinal_wasserstein<F: Real>(
    p: &BTreeMap<i64, u64>,
    q: &BTreeMap<i64, u64>,
    scale_min: i64,
    scale_max: i64,
) -> Result<F, LandscapeError> {
    if scale_max <= scale_min {
        return Err(LandscapeError::DegenerateScale);
    }
    let total = |h: &BTreeMap<i64, u64>| -> Result<u64, LandscapeError> {
        if h.is_empty() || h.values().all(|&c| c == 0) {
            return Err(LandscapeError::EmptyHistogram);
        }
        for &code in h.keys() {
            if code < scale_min || code > scale_max {
                return Err(LandscapeError::SupportOutOfRange {
                    code,
                    scale_min,
                    scale_max,
                });
            }
        }
        Ok(h.values().sum())
    };
    let np = F::from_u64(total(p)?).unwrap();
    let nq = F::from_u64(total(q)?).unwrap();

    let mut cum_p = F::zero();
    let mut cum_q = F::zero();
    let mut distance = F::zero();
    for k in scale_min..scale_max {
        cum_p = cum_p + F::from_u64(p.get(&k).copied().unwrap_or(0)).unwrap() / np;
        cum_q = cum_q + F::from_u64(q.get(&k).copied().unwrap_or(0)).unwrap() / nq;
        distance = distance + (cum_p - cum_q).abs();
    }
    Ok(distance / F::from_i64(scale_max - scale_min).unwrap())
}

/// Mean pairwise ordinal Wasserstein divergence for one (question, stratum).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceScore {
    pub question_id: String,
    pub stratum: String,
    pub score: Score,
    pub pair_count: usize,
}

/// Unweighted mean of the ordinal Wasserstein divergence over all unordered
/// pairs of valid subgroup opinions for one question.
pub fn mean_pairwise_divergence(
    opinions: &[&crate::stratify::SubgroupOpinion],
    question: &QuestionSpec,
) -> Result<DivergenceScore, LandscapeError> {
    let valid: Vec<_> = opinions.iter().filter(|o| o.valid && o.n > 0).collect();
    if valid.len() < 2 {
        return Err(LandscapeError::InsufficientSubgroups(valid.len()));
    }
    let mut sum: Score = 0.0;
    let mut pairs = 0usize;
    for i in 0..valid.len() {
        for j in (i + 1)..valid.len() {
            sum += ordinal_wasserstein::<Score>(
                &valid[i].histogram,
                &valid[j].histogram,
                question.scale_min,
                question.scale_max,
            )?;
            pairs += 1;
        }
    }
    Ok(DivergenceScore {
        question_id: question.question_id.clone(),
        stratum: valid[0].subgroup.stratum.name.clone(),
        score: sum / pairs as Score,
        pair_count: pairs,
    })
}

/// Compute the modal diversity of every (question, stratum) cell that has
/// at least one valid subgroup.
pub fn diversity_scores(
    matrix: &OpinionMatrix,
    codebook: &[QuestionSpec],
    denominator: DenominatorMode,
) -> Result<Vec<DiversityScore>, LandscapeError> {
    let by_id: BTreeMap<&str, &QuestionSpec> = codebook
        .iter()
        .map(|q| (q.question_id.as_str(), q))
        .collect();
    let mut scores = Vec::new();
    for question_id in matrix.question_ids() {
        let question = by_id
            .get(question_id.as_str())
            .ok_or_else(|| LandscapeError::UnknownQuestion(question_id.clone()))?;
        for stratum in matrix.stratum_names() {
            let modes: Vec<i64> = matrix
                .valid_for(&question_id, &stratum)
                .iter()
                .filter_map(|op| op.modal_code)
                .collect();
            if modes.is_empty() {
                continue;
            }
            let outcome = modal_diversity::<Score>(&modes, question.n_choices(), denominator)?;
            scores.push(DiversityScore {
                question_id: question_id.clone(),
                stratum: stratum.clone(),
                score: outcome.score,
                n_valid_subgroups: outcome.n_subgroups,
                n_distinct_modes: outcome.n_distinct_modes,
                denominator_mode: denominator,
                degenerate_denominator: outcome.degenerate_denominator,
            });
        }
    }
    Ok(scores)
}

/// Mean pairwise divergence of every (question, stratum) cell with at least
/// two valid subgroups.
pub fn divergence_scores(
    matrix: &OpinionMatrix,
    codebook: &[QuestionSpec],
) -> Result<Vec<DivergenceScore>, LandscapeError> {
    let by_id: BTreeMap<&str, &QuestionSpec> = codebook
        .iter()
        .map(|q| (q.question_id.as_str(), q))
        .collect();
    let mut scores = Vec::new();
    for question_id in matrix.question_ids() {
        let question = by_id
            .get(question_id.as_str())
            .ok_or_else(|| LandscapeError::UnknownQuestion(question_id.clone()))?;
        for stratum in matrix.stratum_names() {
            let opinions = matrix.valid_for(&question_id, &stratum);
            if opinions.len() < 2 {
                continue;
            }
            scores.push(mean_pairwise_divergence(&opinions, question)?);
        }
    }
    Ok(scores)
}

/// Category-level conflict summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: String,
    pub total_questions: usize,
    /// Questions whose stratum-averaged score is exactly zero.
    pub unanimous_questions: usize,
    pub avg_diversity: Score,
}

/// Per-question mean score across strata.
fn question_means(scores: &[DiversityScore]) -> BTreeMap<String, Score> {
    let mut sums: BTreeMap<String, (Score, usize)> = BTreeMap::new();
    for s in scores {
        let entry = sums.entry(s.question_id.clone()).or_insert((0.0, 0));
        entry.0 += s.score;
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(q, (sum, n))| (q, sum / n as Score))
        .collect()
}

/// Aggregate diversity scores per category: each question's score is first
/// averaged across strata, category rows average those question means and
/// count unanimous questions. Sorted by average diversity descending, ties
/// by category name.
pub fn category_report(
    scores: &[DiversityScore],
    codebook: &[QuestionSpec],
) -> Result<Vec<CategoryReport>, LandscapeError> {
    if scores.is_empty() {
        return Err(LandscapeError::EmptyModes);
    }
    let category_of: BTreeMap<&str, &str> = codebook
        .iter()
        .map(|q| (q.question_id.as_str(), q.category.as_str()))
        .collect();
    let means = question_means(scores);
    let mut grouped: BTreeMap<String, Vec<Score>> = BTreeMap::new();
    for (question_id, mean) in &means {
        let category = category_of
            .get(question_id.as_str())
            .ok_or_else(|| LandscapeError::UnknownCategory(question_id.clone()))?;
        grouped.entry(category.to_string()).or_default().push(*mean);
    }
    let mut rows: Vec<CategoryReport> = grouped
        .into_iter()
        .map(|(category, question_scores)| CategoryReport {
            category,
            total_questions: question_scores.len(),
            unanimous_questions: question_scores.iter().filter(|s| **s == 0.0).count(),
            avg_diversity: question_scores.iter().sum::<Score>() / question_scores.len() as Score,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.avg_diversity
            .partial_cmp(&a.avg_diversity)
            .expect("finite scores")
            .then_with(|| a.category.cmp(&b.category))
    });
    Ok(rows)
}

/// Overall summary row across every question in the scores.
pub fn overall_summary(scores: &[DiversityScore]) -> Option<CategoryReport> {
    if scores.is_empty() {
        return None;
    }
    let means = question_means(scores);
    let n = means.len();
    Some(CategoryReport {
        category: "Overall Summary".to_string(),
        total_questions: n,
        unanimous_questions: means.values().filter(|s| **s == 0.0).count(),
        avg_diversity: means.values().sum::<Score>() / n as Score,
    })
}

/// Spearman correlation between per-cell sample size and mode margin over
/// all valid (question, subgroup) cells. The p-value uses the large-sample
/// normal approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStability {
    pub rho: Score,
    pub p_value: Score,
    pub n_pairs: usize,
}

pub fn label_stability(matrix: &OpinionMatrix) -> Result<LabelStability, LandscapeError> {
    let mut ns: Vec<Score> = Vec::new();
    let mut margins: Vec<Score> = Vec::new();
    for opinion in matrix.entries.values() {
        if opinion.valid && opinion.n > 0 {
            ns.push(opinion.n as Score);
            margins.push(opinion.mode_margin);
        }
    }
    if ns.len() < 3 {
        return Err(LandscapeError::Stats(StatsError::InsufficientData {
            needed: 3,
            got: ns.len(),
        }));
    }
    let result = spearman(&ns, &margins)?;
    Ok(LabelStability {
        rho: result.rho,
        p_value: result.p_value,
        n_pairs: result.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stratify::{Stratum, Subgroup, SubgroupOpinion};
    use proptest::prelude::*;

    /// Independent entropy route: run-length over sorted modes, natural log.
    fn oracle_mds(modes: &[i64], n_choices: usize, distinct_denominator: bool) -> f64 {
        let mut sorted = modes.to_vec();
        sorted.sort_unstable();
        let n = sorted.len() as f64;
        let mut entropy = 0.0;
        let mut i = 0;
        let mut distinct = 0usize;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let p = (j - i + 1) as f64 / n;
            entropy -= p * (p.ln() / std::f64::consts::LN_2);
            distinct += 1;
            i = j + 1;
        }
        let denom_arg = if distinct_denominator {
            distinct
        } else {
            modes.len().min(n_choices)
        };
        if denom_arg <= 1 || entropy == 0.0 {
            return 0.0;
        }
        entropy / ((denom_arg as f64).ln() / std::f64::consts::LN_2)
    }

    fn q241_modes() -> Vec<i64> {
        let mut modes = vec![7; 6];
        modes.extend([5, 5, 8, 8, 10, 10]);
        modes
    }

    #[test]
    fn mds_worked_example_min_sc() {
        let out = modal_diversity::<Score>(&q241_modes(), 10, DenominatorMode::MinSC).unwrap();
        assert!((out.score - 0.53959).abs() < 1e-5, "got {}", out.score);
        assert_eq!(out.n_subgroups, 12);
        assert_eq!(out.n_distinct_modes, 4);
    }

    #[test]
    fn mds_worked_example_distinct_modes() {
        let out =
            modal_diversity::<Score>(&q241_modes(), 10, DenominatorMode::DistinctModes).unwrap();
        assert!((out.score - 0.89624).abs() < 1e-5, "got {}", out.score);
    }

    #[test]
    fn mds_consensus_is_exactly_zero() {
        let out = modal_diversity::<Score>(&[2; 9], 5, DenominatorMode::MinSC).unwrap();
        assert_eq!(out.score, 0.0);
        assert_eq!(out.n_distinct_modes, 1);
    }

    #[test]
    fn mds_empty_is_rejected() {
        assert!(matches!(
            modal_diversity::<Score>(&[], 5, DenominatorMode::MinSC),
            Err(LandscapeError::EmptyModes)
        ));
    }

    #[test]
    fn mds_degenerate_denominators_flagged_as_zero() {
        // |S| = 1
        let out = modal_diversity::<Score>(&[3], 5, DenominatorMode::MinSC).unwrap();
        assert_eq!(out.score, 0.0);
        assert!(out.degenerate_denominator);
        // |C| = 1
        let out = modal_diversity::<Score>(&[1, 1, 1], 1, DenominatorMode::MinSC).unwrap();
        assert_eq!(out.score, 0.0);
        assert!(out.degenerate_denominator);
    }

    fn histogram(pairs: &[(i64, u64)]) -> BTreeMap<i64, u64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn wasserstein_point_masses_at_extremes() {
        let p = histogram(&[(1, 5)]);
        let q = histogram(&[(4, 3)]);
        let d: Score = ordinal_wasserstein(&p, &q, 1, 4).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn wasserstein_identity_is_zero() {
        let p = histogram(&[(1, 2), (3, 4)]);
        let d: Score = ordinal_wasserstein(&p, &p, 1, 4).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn wasserstein_uniform_pairs_hand_value() {
        let p = histogram(&[(1, 1), (2, 1)]);
        let q = histogram(&[(3, 1), (4, 1)]);
        let d: Score = ordinal_wasserstein(&p, &q, 1, 4).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_guards() {
        let p = histogram(&[(1, 1)]);
        assert!(matches!(
            ordinal_wasserstein::<Score>(&BTreeMap::new(), &p, 1, 4),
            Err(LandscapeError::EmptyHistogram)
        ));
        assert!(matches!(
            ordinal_wasserstein::<Score>(&p, &p, 2, 2),
            Err(LandscapeError::DegenerateScale)
        ));
        let bad = histogram(&[(9, 1)]);
        assert!(matches!(
            ordinal_wasserstein::<Score>(&p, &bad, 1, 4),
            Err(LandscapeError::SupportOutOfRange { code: 9, .. })
        ));
    }

    fn question(id: &str, min: i64, max: i64) -> QuestionSpec {
        QuestionSpec {
            question_id: id.to_string(),
            text: "t".to_string(),
            category: "Economic Values".to_string(),
            scale_min: min,
            scale_max: max,
            choice_labels: BTreeMap::new(),
            excluded: false,
        }
    }

    fn opinion(qid: &str, values: &[&str], hist: &[(i64, u64)]) -> SubgroupOpinion {
        let histogram = histogram(hist);
        let n: u64 = histogram.values().sum();
        SubgroupOpinion {
            question_id: qid.to_string(),
            subgroup: Subgroup {
                stratum: Stratum::new(&["sex"]).unwrap(),
                values: values.iter().map(|v| v.to_string()).collect(),
                population_n: n as usize,
            },
            histogram,
            n: n as usize,
            modal_code: Some(hist.iter().max_by_key(|(_, c)| *c).unwrap().0),
            mode_margin: 1.0,
            valid: true,
        }
    }

    #[test]
    fn mean_pairwise_identical_distributions() {
        let q = question("Q1", 1, 4);
        let a = opinion("Q1", &["Female"], &[(2, 3), (3, 1)]);
        let b = opinion("Q1", &["Male"], &[(2, 3), (3, 1)]);
        let d = mean_pairwise_divergence(&[&a, &b], &q).unwrap();
        assert_eq!(d.score, 0.0);
        assert_eq!(d.pair_count, 1);
    }

    #[test]
    fn mean_pairwise_three_point_masses() {
        let q = question("Q1", 1, 4);
        let a = opinion("Q1", &["Female"], &[(1, 5)]);
        let b = opinion("Q1", &["Male"], &[(1, 7)]);
        let c = opinion("Q1", &["Other"], &[(4, 2)]);
        let d = mean_pairwise_divergence(&[&a, &b, &c], &q).unwrap();
        assert!((d.score - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.pair_count, 3);
    }

    #[test]
    fn mean_pairwise_needs_two_valid() {
        let q = question("Q1", 1, 4);
        let a = opinion("Q1", &["Female"], &[(1, 5)]);
        assert!(matches!(
            mean_pairwise_divergence(&[&a], &q),
            Err(LandscapeError::InsufficientSubgroups(1))
        ));
    }

    fn diversity(qid: &str, stratum: &str, score: Score) -> DiversityScore {
        DiversityScore {
            question_id: qid.to_string(),
            stratum: stratum.to_string(),
            score,
            n_valid_subgroups: 2,
            n_distinct_modes: 2,
            denominator_mode: DenominatorMode::MinSC,
            degenerate_denominator: false,
        }
    }

    fn fixture_codebook() -> Vec<QuestionSpec> {
        vec![
            QuestionSpec {
                category: "Calm Category".to_string(),
                ..question("Q1", 1, 4)
            },
            QuestionSpec {
                category: "Calm Category".to_string(),
                ..question("Q2", 1, 4)
            },
            QuestionSpec {
                category: "Feisty Category".to_string(),
                ..question("Q3", 1, 4)
            },
        ]
    }

    #[test]
    fn category_report_ranks_conflicted_first() {
        let scores = vec![
            diversity("Q1", "sex", 0.0),
            diversity("Q1", "religion", 0.0),
            diversity("Q2", "sex", 0.0),
            diversity("Q3", "sex", 0.8),
            diversity("Q3", "religion", 0.6),
        ];
        let report = category_report(&scores, &fixture_codebook()).unwrap();
        assert_eq!(report.len(), 2);
        assert_eq!(report[0].category, "Feisty Category");
        assert!((report[0].avg_diversity - 0.7).abs() < 1e-12);
        assert_eq!(report[0].unanimous_questions, 0);
        assert_eq!(report[1].category, "Calm Category");
        assert_eq!(report[1].total_questions, 2);
        assert_eq!(report[1].unanimous_questions, 2);
    }

    #[test]
    fn category_report_all_unanimous() {
        let scores = vec![
            diversity("Q1", "sex", 0.0),
            diversity("Q2", "sex", 0.0),
            diversity("Q3", "sex", 0.0),
        ];
        let report = category_report(&scores, &fixture_codebook()).unwrap();
        let total: usize = report.iter().map(|r| r.total_questions).sum();
        let unanimous: usize = report.iter().map(|r| r.unanimous_questions).sum();
        assert_eq!(total, unanimous);
        assert!(report.iter().all(|r| r.avg_diversity == 0.0));
        // ties broken by category name
        assert_eq!(report[0].category, "Calm Category");
    }

    #[test]
    fn category_report_matches_hand_aggregation() {
        // Q1 mean = (0.2 + 0.4) / 2 = 0.3; Q2 mean = 0.1; category avg = 0.2
        let scores = vec![
            diversity("Q1", "sex", 0.2),
            diversity("Q1", "religion", 0.4),
            diversity("Q2", "sex", 0.1),
            diversity("Q3", "sex", 0.5),
        ];
        let report = category_report(&scores, &fixture_codebook()).unwrap();
        let calm = report
            .iter()
            .find(|r| r.category == "Calm Category")
            .unwrap();
        assert!((calm.avg_diversity - 0.2).abs() < 1e-12);
        let overall = overall_summary(&scores).unwrap();
        assert_eq!(overall.total_questions, 3);
        assert!((overall.avg_diversity - (0.3 + 0.1 + 0.5) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn category_report_rejects_unknown_question() {
        let scores = vec![diversity("Q99", "sex", 0.2)];
        assert!(matches!(
            category_report(&scores, &fixture_codebook()),
            Err(LandscapeError::UnknownCategory(_))
        ));
    }

    fn matrix_from_cells(cells: Vec<SubgroupOpinion>) -> OpinionMatrix {
        let mut matrix = OpinionMatrix {
            entries: BTreeMap::new(),
            min_n: 1,
        };
        for op in cells {
            matrix.entries.insert(
                crate::stratify::MatrixKey {
                    question_id: op.question_id.clone(),
                    stratum_name: op.subgroup.stratum.name.clone(),
                    values: op.subgroup.values.clone(),
                },
                op,
            );
        }
        matrix
    }

    #[test]
    fn label_stability_perfect_monotone() {
        let mut cells = Vec::new();
        for (i, n) in [10u64, 20, 30, 40].iter().enumerate() {
            let mut op = opinion("Q1", &[&format!("g{i}")], &[(1, *n)]);
            op.n = *n as usize;
            op.mode_margin = 0.1 + 0.2 * i as Score;
            cells.push(op);
        }
        let matrix = matrix_from_cells(cells);
        let stability = label_stability(&matrix).unwrap();
        assert!((stability.rho - 1.0).abs() < 1e-12);
        assert_eq!(stability.n_pairs, 4);
    }

    #[test]
    fn label_stability_independent_margins_are_uncorrelated() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut cells = Vec::new();
        let mut ns = Vec::new();
        let mut margins = Vec::new();
        for i in 0..400 {
            let n = rng.random_range(30u64..500);
            let margin: Score = rng.random_range(0.0..1.0);
            let mut op = opinion("Q1", &[&format!("g{i}")], &[(1, n)]);
            op.n = n as usize;
            op.mode_margin = margin;
            ns.push(n as Score);
            margins.push(margin);
            cells.push(op);
        }
        let matrix = matrix_from_cells(cells);
        let stability = label_stability(&matrix).unwrap();
        assert!(stability.rho.abs() < 0.15, "rho = {}", stability.rho);
        // agrees with the statistics module on the extracted pairs
        let direct = spearman(&ns, &margins).unwrap();
        assert!((stability.rho - direct.rho).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mds_bounds_hold_for_both_denominators(
            modes in proptest::collection::vec(1i64..=8, 1..40),
        ) {
            for denominator in [DenominatorMode::MinSC, DenominatorMode::DistinctModes] {
                let out = modal_diversity::<Score>(&modes, 8, denominator).unwrap();
                prop_assert!(out.score >= 0.0 && out.score <= 1.0 + 1e-12,
                    "score {} out of bounds", out.score);
                if out.n_distinct_modes <= 1 {
                    prop_assert_eq!(out.score, 0.0);
                }
                let oracle = oracle_mds(&modes, 8,
                    denominator == DenominatorMode::DistinctModes);
                prop_assert!((out.score - oracle).abs() < 1e-12);
            }
        }

        #[test]
        fn mds_invariant_to_order_and_relabeling(
            modes in proptest::collection::vec(1i64..=6, 2..30),
            seed in 0u64..500,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut shuffled = modes.clone();
            shuffled.shuffle(&mut rng);
            let mut relabel: Vec<i64> = (1..=6).collect();
            relabel.shuffle(&mut rng);
            let relabeled: Vec<i64> = shuffled.iter().map(|m| relabel[(*m - 1) as usize]).collect();

            let a = modal_diversity::<Score>(&modes, 6, DenominatorMode::MinSC).unwrap();
            let b = modal_diversity::<Score>(&relabeled, 6, DenominatorMode::MinSC).unwrap();
            prop_assert!((a.score - b.score).abs() < 1e-12);
            prop_assert_eq!(a.n_distinct_modes, b.n_distinct_modes);
        }

        #[test]
        fn wasserstein_metric_properties(
            p in proptest::collection::btree_map(1i64..=6, 1u64..20, 1..6),
            q in proptest::collection::btree_map(1i64..=6, 1u64..20, 1..6),
            r in proptest::collection::btree_map(1i64..=6, 1u64..20, 1..6),
        ) {
            let d_pq: Score = ordinal_wasserstein(&p, &q, 1, 6).unwrap();
            let d_qp: Score = ordinal_wasserstein(&q, &p, 1, 6).unwrap();
            let d_pp: Score = ordinal_wasserstein(&p, &p, 1, 6).unwrap();
            let d_pr: Score = ordinal_wasserstein(&p, &r, 1, 6).unwrap();
            let d_rq: Score = ordinal_wasserstein(&r, &q, 1, 6).unwrap();
            prop_assert!((d_pq - d_qp).abs() < 1e-12);
            prop_assert_eq!(d_pp, 0.0);
            prop_assert!(d_pq <= d_pr + d_rq + 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d_pq));
        }

        #[test]
        fn wasserstein_point_masses_are_normalized_distance(
            a in 1i64..=9,
            b in 1i64..=9,
        ) {
            let p = histogram(&[(a, 4)]);
            let q = histogram(&[(b, 7)]);
            let d: Score = ordinal_wasserstein(&p, &q, 1, 9).unwrap();
            let expect = (a - b).abs() as Score / 8.0;
            prop_assert!((d - expect).abs() < 1e-12);
        }
    }
}
