//! `compare`: paired comparison of two scored numeric runs — per-subgroup
//! deltas with improvement ranks, paired bootstrap confidence intervals,
//! and before/after disparity tables.

use std::collections::BTreeMap;
use std::fs::File;

use anyhow::{bail, Context, Result};
use vmap_core::dataset::SampleRecord;
use vmap_core::numeric::{
    aggregate, score_records, EvalRecord, GroupBy, ParseOptions, SubgroupMetrics,
};
use vmap_core::stats::{improvement_ranks, paired_bootstrap_ci, BootstrapCi, Improvement};
use vmap_core::survey::load_codebook;
use vmap_core::Score;

use crate::commands::eval::disparity_reports;
use crate::commands::{load_checked_run_log, load_manifest, parse_split, samples_for, split_name};
use crate::config::Ctx;
use crate::tables::{fmt_opt_score, fmt_score, render_table};

pub fn run(ctx: &Ctx, run_a: &str, run_b: &str, split: &str) -> Result<()> {
    let split = parse_split(split)?;
    let manifest = load_manifest(ctx)?;
    let samples = samples_for(&manifest, split);
    if samples.is_empty() {
        bail!("split `{}` has no samples", split_name(split));
    }
    let codebook = load_codebook(&ctx.resolve(&ctx.config.survey.codebook))?;
    let options = ParseOptions {
        strict: ctx.config.eval.strict_parsing,
    };

    let score_run = |label: &str| -> Result<Vec<EvalRecord>> {
        let results = load_checked_run_log(ctx, &ctx.numeric_run_log(label))?;
        let keys: std::collections::BTreeSet<&str> =
            results.iter().map(|r| r.request_id.as_str()).collect();
        for s in &samples {
            if !keys.contains(s.sample_key().as_str()) {
                bail!(
                    "run `{label}` is missing sample {}; the two runs must cover identical sample sets",
                    s.sample_key()
                );
            }
        }
        Ok(score_records(&samples, &results, &codebook, options)?)
    };
    let records_a = score_run(run_a)?;
    let records_b = score_run(run_b)?;

    // paired per-sample accuracy vectors (0/1), in manifest order
    let acc = |records: &[EvalRecord]| -> Vec<Score> {
        records
            .iter()
            .map(|r| if r.correct { 1.0 } else { 0.0 })
            .collect()
    };
    let acc_ci = paired_bootstrap_ci(
        &acc(&records_a),
        &acc(&records_b),
        ctx.config.eval.bootstrap_resamples,
        ctx.config.eval.bootstrap_level,
        ctx.config.eval.seed,
    )?;
    // NMAE pairs restricted to samples parsable in both runs
    let nmae_pairs: (Vec<Score>, Vec<Score>) = records_a
        .iter()
        .zip(&records_b)
        .filter_map(|(a, b)| Some((a.abs_err_norm?, b.abs_err_norm?)))
        .unzip();
    let nmae_ci = if nmae_pairs.0.is_empty() {
        None
    } else {
        Some(paired_bootstrap_ci(
            &nmae_pairs.0,
            &nmae_pairs.1,
            ctx.config.eval.bootstrap_resamples,
            ctx.config.eval.bootstrap_level,
            ctx.config.eval.seed,
        )?)
    };

    let overall_a = &aggregate(&records_a, GroupBy::Overall)?[0];
    let overall_b = &aggregate(&records_b, GroupBy::Overall)?[0];
    let sub_a = aggregate(&records_a, GroupBy::Subgroup)?;
    let sub_b = aggregate(&records_b, GroupBy::Subgroup)?;

    // per-stratum improvement ranks over subgroup metrics
    let by_stratum = |metrics: &[SubgroupMetrics]| -> BTreeMap<String, Vec<SubgroupMetrics>> {
        let mut grouped: BTreeMap<String, Vec<SubgroupMetrics>> = BTreeMap::new();
        for m in metrics {
            grouped
                .entry(m.stratum.clone())
                .or_default()
                .push(m.clone());
        }
        grouped
    };
    let strata_a = by_stratum(&sub_a);
    let strata_b = by_stratum(&sub_b);

    #[derive(Debug)]
    struct SubgroupRow {
        subgroup: String,
        population_n: usize,
        acc_pre: Score,
        acc_post: Score,
        acc_rank: Option<usize>,
        nmae_pre: Option<Score>,
        nmae_post: Option<Score>,
        nmae_rank: Option<usize>,
    }

    let population_of: BTreeMap<(String, String), usize> = samples
        .iter()
        .map(|s: &SampleRecord| {
            (
                (s.subgroup.stratum.name.clone(), s.subgroup.key()),
                s.subgroup.population_n,
            )
        })
        .collect();

    let mut stratum_tables: BTreeMap<String, Vec<SubgroupRow>> = BTreeMap::new();
    for (stratum, metrics_a) in &strata_a {
        let Some(metrics_b) = strata_b.get(stratum) else {
            continue;
        };
        let acc_pre: BTreeMap<String, Score> = metrics_a
            .iter()
            .map(|m| (m.subgroup.clone(), m.accuracy))
            .collect();
        let acc_post: BTreeMap<String, Score> = metrics_b
            .iter()
            .map(|m| (m.subgroup.clone(), m.accuracy))
            .collect();
        let acc_ranks: BTreeMap<String, Improvement> =
            improvement_ranks(&acc_pre, &acc_post, true).context("accuracy rank computation")?;

        let nmae_pre: BTreeMap<String, Score> = metrics_a
            .iter()
            .filter_map(|m| Some((m.subgroup.clone(), m.nmae?)))
            .collect();
        let nmae_post: BTreeMap<String, Score> = metrics_b
            .iter()
            .filter_map(|m| Some((m.subgroup.clone(), m.nmae?)))
            .collect();
        // rank NMAE only over subgroups with the metric defined on both sides
        let common: Vec<String> = nmae_pre
            .keys()
            .filter(|k| nmae_post.contains_key(*k))
            .cloned()
            .collect();
        let nmae_pre_common: BTreeMap<String, Score> =
            common.iter().map(|k| (k.clone(), nmae_pre[k])).collect();
        let nmae_post_common: BTreeMap<String, Score> =
            common.iter().map(|k| (k.clone(), nmae_post[k])).collect();
        let nmae_ranks = if common.is_empty() {
            BTreeMap::new()
        } else {
            improvement_ranks(&nmae_pre_common, &nmae_post_common, false)
                .context("nmae rank computation")?
        };

        let mut rows: Vec<SubgroupRow> = metrics_a
            .iter()
            .map(|m| SubgroupRow {
                subgroup: m.subgroup.clone(),
                population_n: population_of
                    .get(&(stratum.clone(), m.subgroup.clone()))
                    .copied()
                    .unwrap_or(0),
                acc_pre: m.accuracy,
                acc_post: acc_post[&m.subgroup],
                acc_rank: acc_ranks.get(&m.subgroup).map(|r| r.rank),
                nmae_pre: nmae_pre.get(&m.subgroup).copied(),
                nmae_post: nmae_post.get(&m.subgroup).copied(),
                nmae_rank: nmae_ranks.get(&m.subgroup).map(|r: &Improvement| r.rank),
            })
            .collect();
        // sorted by pre accuracy, most disadvantaged first
        rows.sort_by(|a, b| {
            a.acc_pre
                .partial_cmp(&b.acc_pre)
                .expect("finite")
                .then_with(|| a.subgroup.cmp(&b.subgroup))
        });
        stratum_tables.insert(stratum.clone(), rows);
    }

    let disparity_a = disparity_reports(&sub_a)?;
    let disparity_b = disparity_reports(&sub_b)?;

    let stem = format!("{run_a}_vs_{run_b}_{}", split_name(split));

    // machine-readable per-subgroup deltas
    {
        let mut w = csv::WriterBuilder::new().from_writer(File::create(
            ctx.out_dir.join(format!("compare_{stem}.csv")),
        )?);
        w.write_record([
            "stratum",
            "subgroup",
            "population_n",
            "accuracy_pre",
            "accuracy_post",
            "accuracy_delta",
            "accuracy_rank",
            "nmae_pre",
            "nmae_post",
            "nmae_delta",
            "nmae_rank",
        ])?;
        for (stratum, rows) in &stratum_tables {
            for r in rows {
                let nmae_delta = match (r.nmae_pre, r.nmae_post) {
                    (Some(pre), Some(post)) => Some(post - pre),
                    _ => None,
                };
                w.write_record([
                    stratum.as_str(),
                    r.subgroup.as_str(),
                    &r.population_n.to_string(),
                    &format!("{:.6}", r.acc_pre),
                    &format!("{:.6}", r.acc_post),
                    &format!("{:.6}", r.acc_post - r.acc_pre),
                    &r.acc_rank.map(|v| v.to_string()).unwrap_or_default(),
                    &r.nmae_pre.map(|v| format!("{v:.6}")).unwrap_or_default(),
                    &r.nmae_post.map(|v| format!("{v:.6}")).unwrap_or_default(),
                    &nmae_delta.map(|v| format!("{v:.6}")).unwrap_or_default(),
                    &r.nmae_rank.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
    }

    let ci_json = serde_json::json!({
        "accuracy": ci_value(&acc_ci),
        "nmae": nmae_ci.as_ref().map(ci_value),
    });
    std::fs::write(
        ctx.out_dir.join(format!("compare_{stem}_ci.json")),
        serde_json::to_string_pretty(&ci_json)?,
    )?;

    // human-readable report
    let mut text = format!(
        "Comparison: {run_a} -> {run_b} ({} split)\n\n",
        split_name(split)
    );
    let fmt_ci = |ci: &BootstrapCi| {
        format!(
            "{:+.3} [{:+.3}, {:+.3}] ({} resamples, {:.0}% level, seed {})",
            ci.point_delta,
            ci.lo,
            ci.hi,
            ci.resamples,
            ci.level * 100.0,
            ci.seed
        )
    };
    text.push_str(&format!(
        "accuracy: {} -> {} | paired bootstrap delta {}\n",
        fmt_score(overall_a.accuracy),
        fmt_score(overall_b.accuracy),
        fmt_ci(&acc_ci)
    ));
    match (&nmae_ci, overall_a.nmae, overall_b.nmae) {
        (Some(ci), Some(a), Some(b)) => {
            text.push_str(&format!(
                "nmae:     {} -> {} | paired bootstrap delta {} (over {} jointly parsable samples)\n",
                fmt_score(a),
                fmt_score(b),
                fmt_ci(ci),
                nmae_pairs.0.len()
            ));
        }
        _ => text.push_str("nmae:     undefined for at least one run (all refusals)\n"),
    }

    text.push_str("\nSubgroup disparity (model level): run A -> run B\n");
    let mut disparity_rows = Vec::new();
    for (a, b) in disparity_a.iter().zip(&disparity_b) {
        if let (Some(a), Some(b)) = (a, b) {
            disparity_rows.push(vec![
                a.metric_name.clone(),
                format!(
                    "{} -> {}",
                    fmt_score(a.model_normalized_range),
                    fmt_score(b.model_normalized_range)
                ),
                format!("{} -> {}", fmt_score(a.model_cv), fmt_score(b.model_cv)),
            ]);
        }
    }
    if disparity_rows.is_empty() {
        text.push_str("  (undefined)\n");
    } else {
        text.push_str(&render_table(
            &["Metric", "Norm. Range", "CV"],
            &disparity_rows,
        ));
    }

    for (stratum, rows) in &stratum_tables {
        text.push_str(&format!("\nStratum: {stratum} (sorted by pre accuracy)\n"));
        let table_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let rank = |v: Option<usize>| v.map(|r| format!("^{r}")).unwrap_or_default();
                vec![
                    format!("{} ({})", r.subgroup, r.population_n),
                    fmt_score(r.acc_pre),
                    format!(
                        "{} ({:+.3}){}",
                        fmt_score(r.acc_post),
                        r.acc_post - r.acc_pre,
                        rank(r.acc_rank)
                    ),
                    fmt_opt_score(r.nmae_pre),
                    match (r.nmae_pre, r.nmae_post) {
                        (Some(pre), Some(post)) => format!(
                            "{} ({:+.3}){}",
                            fmt_score(post),
                            post - pre,
                            rank(r.nmae_rank)
                        ),
                        _ => "-".to_string(),
                    },
                ]
            })
            .collect();
        text.push_str(&render_table(
            &[
                "Subgroup (N)",
                "Acc Pre",
                "Acc Post (Delta)^Rank",
                "NMAE Pre",
                "NMAE Post (Delta)^Rank",
            ],
            &table_rows,
        ));
    }
    std::fs::write(ctx.out_dir.join(format!("compare_{stem}.txt")), &text)?;
    println!("{text}");
    Ok(())
}

fn ci_value(ci: &BootstrapCi) -> serde_json::Value {
    serde_json::json!({
        "point_delta": ci.point_delta,
        "lo": ci.lo,
        "hi": ci.hi,
        "resamples": ci.resamples,
        "level": ci.level,
        "seed": ci.seed,
    })
}
