//! Inferential statistics: subgroup disparity metrics, paired bootstrap
//! confidence intervals, Spearman rank correlation, weighted Cohen's kappa,
//! improvement ranking, and human-annotation ingestion.
//!
//! The numeric kernels are generic over [`Real`]; the pipeline instantiates
//! them at [`Score`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::Winner;
use crate::{Real, Score};

/// Default resample count for paired bootstrap intervals.
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 2000;
/// Default confidence level for paired bootstrap intervals.
pub const DEFAULT_BOOTSTRAP_LEVEL: f64 = 0.95;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("values must all be positive")]
    NonPositiveValue,
    #[error("mean must be positive")]
    ZeroMean,
    #[error("constant input: rank correlation undefined")]
    ConstantInput,
    #[error("insufficient data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("stratum `{0}` has fewer than two subgroups")]
    SingletonStratum(String),
    #[error("degenerate marginals: expected agreement is 1")]
    DegenerateMarginals,
    #[error("key sets differ: `{0}` present on one side only")]
    KeyMismatch(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotation row {row}: {reason}")]
    MalformedAnnotation { row: usize, reason: String },
}

fn mean<F: Real>(values: &[F]) -> F {
    let sum: F = values.iter().copied().sum();
    sum / F::from_usize(values.len()).unwrap()
}

/// Relative gap between the best- and worst-performing values,
/// (max - min) / max. Defined for positive values.
pub fn normalized_range<F: Real>(values: &[F]) -> Result<F, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| *v <= F::zero()) {
        return Err(StatsError::NonPositiveValue);
    }
    let max = values.iter().copied().fold(F::neg_infinity(), F::max);
    let min = values.iter().copied().fold(F::infinity(), F::min);
    Ok((max - min) / max)
}

/// Which standard-deviation convention the CV uses. Population is the
/// default: strata are full enumerations of their subgroups, not samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaConvention {
    #[default]
    Population,
    Sample,
}

/// Population standard deviation divided by the mean.
pub fn coefficient_of_variation<F: Real>(values: &[F]) -> Result<F, StatsError> {
    coefficient_of_variation_with(values, SigmaConvention::Population)
}

/// Coefficient of variation under an explicit sigma convention.
pub fn coefficient_of_variation_with<F: Real>(
    values: &[F],
    sigma: SigmaConvention,
) -> Result<F, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mu = mean(values);
    if mu <= F::zero() {
        return Err(StatsError::ZeroMean);
    }
    let denominator = match sigma {
        SigmaConvention::Population => values.len(),
        SigmaConvention::Sample => values.len().saturating_sub(1),
    };
    if denominator == 0 {
        return Ok(F::zero());
    }
    let var: F = values.iter().map(|v| (*v - mu) * (*v - mu)).sum::<F>()
        / F::from_usize(denominator).unwrap();
    Ok(var.sqrt() / mu)
}

/// Disparity of one stratum's subgroup metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumDisparity {
    pub stratum: String,
    pub n_subgroups: usize,
    pub normalized_range: Score,
    pub cv: Score,
}

/// Per-stratum Normalized Range and CV for one metric, with the model-level
/// row computed as the unweighted mean over strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub metric_name: String,
    pub per_stratum: Vec<StratumDisparity>,
    pub model_normalized_range: Score,
    pub model_cv: Score,
}

/// Compute Normalized Range and CV per stratum over subgroup metric values,
/// then average across strata for the model-level score.
pub fn stratum_disparity(
    values_by_stratum: &BTreeMap<String, Vec<Score>>,
    metric_name: &str,
) -> Result<DisparityReport, StatsError> {
    if values_by_stratum.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut per_stratum = Vec::new();
    for (stratum, values) in values_by_stratum {
        if values.len() < 2 {
            return Err(StatsError::SingletonStratum(stratum.clone()));
        }
        // A stratum with identical subgroup values has zero disparity even
        // when the common value is 0 (where the range/CV formulas would be
        // undefined).
        let all_equal = values.iter().all(|v| *v == values[0]);
        let (nr, cv) = if all_equal {
            (0.0, 0.0)
        } else {
            (normalized_range(values)?, coefficient_of_variation(values)?)
        };
        per_stratum.push(StratumDisparity {
            stratum: stratum.clone(),
            n_subgroups: values.len(),
            normalized_range: nr,
            cv,
        });
    }
    let ranges: Vec<Score> = per_stratum.iter().map(|s| s.normalized_range).collect();
    let cvs: Vec<Score> = per_stratum.iter().map(|s| s.cv).collect();
    Ok(DisparityReport {
        metric_name: metric_name.to_string(),
        per_stratum,
        model_normalized_range: mean(&ranges),
        model_cv: mean(&cvs),
    })
}

/// Percentile bootstrap confidence interval for a paired mean difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi<F = Score> {
    pub point_delta: F,
    pub lo: F,
    pub hi: F,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

/// Paired bootstrap percentile interval for mean(treat) - mean(base).
///
/// Pairs are drawn with replacement by index; every resample recomputes the
/// mean per-pair delta. The interval is the percentile interval of the
/// resampled deltas at (1-level)/2 and 1-(1-level)/2, with linear
/// interpolation between order statistics. The generator is ChaCha8 seeded
/// with `seed`; the seed is carried in the result for reproducibility.
pub fn paired_bootstrap_ci<F: Real>(
    per_sample_base: &[F],
    per_sample_treat: &[F],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi<F>, StatsError> {
    if per_sample_base.len() != per_sample_treat.len() {
        return Err(StatsError::LengthMismatch {
            left: per_sample_base.len(),
            right: per_sample_treat.len(),
        });
    }
    if per_sample_base.is_empty() {
        return Err(StatsError::Empty);
    }
    let deltas: Vec<F> = per_sample_treat
        .iter()
        .zip(per_sample_base)
        .map(|(t, b)| *t - *b)
        .collect();
    let n = deltas.len();
    let point_delta = mean(&deltas);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resampled = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = F::zero();
        for _ in 0..n {
            let idx = rng.random_range(0..n);
            sum = sum + deltas[idx];
        }
        resampled.push(sum / F::from_usize(n).unwrap());
    }
    resampled.sort_by(|a, b| a.partial_cmp(b).expect("finite deltas"));

    let alpha = 1.0 - level;
    Ok(BootstrapCi {
        point_delta,
        lo: percentile(&resampled, alpha / 2.0),
        hi: percentile(&resampled, 1.0 - alpha / 2.0),
        resamples,
        level,
        seed,
    })
}

/// Linear-interpolation percentile of a sorted slice (position q*(n-1)).
pub fn percentile<F: Real>(sorted: &[F], q: f64) -> F {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = F::from_f64(pos - i as f64).unwrap();
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// Spearman rank correlation with its large-sample normal-approximation
/// p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spearman<F = Score> {
    pub rho: F,
    /// Two-sided p-value from z = rho * sqrt(n - 1).
    pub p_value: F,
    pub n: usize,
}

/// Average ranks (ties share the mean of their positions), 1-based.
pub fn average_ranks<F: Real>(values: &[F]) -> Vec<F> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![F::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) tie; average of 1-based ranks
        let avg = F::from_usize(i + j + 2).unwrap() / F::from_usize(2).unwrap();
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<F: Real>(x: &[F], y: &[F]) -> Result<F, StatsError> {
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = F::zero();
    let mut sxx = F::zero();
    let mut syy = F::zero();
    for (a, b) in x.iter().zip(y) {
        let dx = *a - mx;
        let dy = *b - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(StatsError::ConstantInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation: Pearson correlation of average ranks, with a
/// two-sided p-value from the z = rho * sqrt(n - 1) normal approximation.
pub fn spearman<F: Real>(x: &[F], y: &[F]) -> Result<Spearman<F>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(StatsError::InsufficientData {
            needed: 3,
            got: x.len(),
        });
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry)?;
    let n = x.len();
    let z = rho.to_f64().unwrap().abs() * ((n - 1) as f64).sqrt();
    let p = libm::erfc(z / std::f64::consts::SQRT_2);
    Ok(Spearman {
        rho,
        p_value: F::from_f64(p).unwrap(),
        n,
    })
}

/// Weighted Cohen's kappa over paired categorical labels.
///
/// `weight` maps a label pair to its agreement weight; kappa is
/// (p_o - p_e) / (1 - p_e) with p_o the mean observed weight and p_e the
/// expected weight under independent marginals. Perfect observed agreement
/// returns 1 outright.
pub fn weighted_kappa<T, F, W>(labels_a: &[T], labels_b: &[T], weight: W) -> Result<F, StatsError>
where
    T: Copy + PartialEq,
    F: Real,
    W: Fn(T, T) -> F,
{
    if labels_a.len() != labels_b.len() {
        return Err(StatsError::LengthMismatch {
            left: labels_a.len(),
            right: labels_b.len(),
        });
    }
    if labels_a.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = F::from_usize(labels_a.len()).unwrap();
    let p_o: F = labels_a
        .iter()
        .zip(labels_b)
        .map(|(a, b)| weight(*a, *b))
        .sum::<F>()
        / n;
    if p_o == F::one() {
        return Ok(F::one());
    }

    let mut categories: Vec<T> = Vec::new();
    for l in labels_a.iter().chain(labels_b) {
        if !categories.contains(l) {
            categories.push(*l);
        }
    }
    let marginal = |labels: &[T], c: T| -> F {
        let count = labels.iter().filter(|l| **l == c).count();
        F::from_usize(count).unwrap() / n
    };
    let mut p_e = F::zero();
    for &c in &categories {
        for &d in &categories {
            p_e = p_e + marginal(labels_a, c) * marginal(labels_b, d) * weight(c, d);
        }
    }
    if p_e == F::one() {
        return Err(StatsError::DegenerateMarginals);
    }
    Ok((p_o - p_e) / (F::one() - p_e))
}

/// Fraction of exactly matching label pairs.
pub fn agreement_accuracy<T: PartialEq>(
    labels_a: &[T],
    labels_b: &[T],
) -> Result<Score, StatsError> {
    if labels_a.len() != labels_b.len() {
        return Err(StatsError::LengthMismatch {
            left: labels_a.len(),
            right: labels_b.len(),
        });
    }
    if labels_a.is_empty() {
        return Err(StatsError::Empty);
    }
    let hits = labels_a
        .iter()
        .zip(labels_b)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as Score / labels_a.len() as Score)
}

/// Pairwise agreement between two label lists: exact-match accuracy plus
/// the weighted kappa for the A/B/Tie scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub accuracy: Score,
    pub weighted_kappa: Score,
    pub n_items: usize,
}

/// Agreement summary for A/B/Tie verdict lists using the standard weight
/// scheme (exact 1.0, partial-via-Tie 0.5, A-vs-B 0.0).
pub fn verdict_agreement(a: &[Winner], b: &[Winner]) -> Result<AgreementResult, StatsError> {
    Ok(AgreementResult {
        accuracy: agreement_accuracy(a, b)?,
        weighted_kappa: weighted_kappa(a, b, Winner::agreement_weight)?,
        n_items: a.len(),
    })
}

/// Delta and competition rank of one subgroup's improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement<F = Score> {
    /// Raw post - pre difference.
    pub delta: F,
    /// Competition rank (ties share a rank; the next rank is skipped),
    /// rank 1 = largest improvement.
    pub rank: usize,
}

/// Rank subgroups by improvement from `pre` to `post`. For lower-is-better
/// metrics the sign is adjusted so that a larger decrease ranks first,
/// while `delta` always reports the raw post - pre difference.
pub fn improvement_ranks<F: Real>(
    pre: &BTreeMap<String, F>,
    post: &BTreeMap<String, F>,
    higher_is_better: bool,
) -> Result<BTreeMap<String, Improvement<F>>, StatsError> {
    for k in pre.keys() {
        if !post.contains_key(k) {
            return Err(StatsError::KeyMismatch(k.clone()));
        }
    }
    for k in post.keys() {
        if !pre.contains_key(k) {
            return Err(StatsError::KeyMismatch(k.clone()));
        }
    }
    if pre.is_empty() {
        return Err(StatsError::Empty);
    }
    let adjusted: BTreeMap<&String, F> = pre
        .iter()
        .map(|(k, &p)| {
            let d = post[k] - p;
            (k, if higher_is_better { d } else { -d })
        })
        .collect();
    let mut out = BTreeMap::new();
    for (k, &a) in &adjusted {
        let rank = 1 + adjusted.values().filter(|&&other| other > a).count();
        out.insert(
            (*k).clone(),
            Improvement {
                delta: post[*k] - pre[*k],
                rank,
            },
        );
    }
    Ok(out)
}

/// One imported human-annotation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub item_id: String,
    pub annotator_id: String,
    pub criterion: String,
    pub value: AnnotationValue,
}

/// Either an A/B/Tie label or a Likert rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnnotationValue {
    Label(Winner),
    Likert(Score),
}

/// Import human annotations from delimited text with columns
/// item_id, annotator_id, criterion, value. The value cell is parsed as an
/// A/B/Tie label first, then as a numeric Likert rating.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRow>, StatsError> {
    let file = File::open(path).map_err(|source| StatsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| StatsError::MalformedAnnotation {
            row,
            reason: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| -> Result<String, StatsError> {
            record
                .get(idx)
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .ok_or_else(|| StatsError::MalformedAnnotation {
                    row,
                    reason: format!("missing {name}"),
                })
        };
        let raw_value = field(3, "value")?;
        let value = match Winner::parse(&raw_value) {
            Some(w) => AnnotationValue::Label(w),
            None => AnnotationValue::Likert(raw_value.parse::<Score>().map_err(|_| {
                StatsError::MalformedAnnotation {
                    row,
                    reason: format!("value `{raw_value}` is neither A/B/Tie nor numeric"),
                }
            })?),
        };
        rows.push(AnnotationRow {
            item_id: field(0, "item_id")?,
            annotator_id: field(1, "annotator_id")?,
            criterion: field(2, "criterion")?,
            value,
        });
    }
    Ok(rows)
}

/// Arithmetic mean Likert rating per criterion.
pub fn likert_summary(rows: &[AnnotationRow]) -> BTreeMap<String, Score> {
    let mut sums: BTreeMap<String, (Score, usize)> = BTreeMap::new();
    for row in rows {
        if let AnnotationValue::Likert(v) = row.value {
            let entry = sums.entry(row.criterion.clone()).or_insert((0.0, 0));
            entry.0 += v;
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(k, (sum, n))| (k, sum / n as Score))
        .collect()
}
