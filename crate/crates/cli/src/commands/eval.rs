//! `eval-numeric` and `eval-open`: batch inference over a manifest split
//! (or replay of a stored run log), scoring, aggregation and disparity
//! reports.

use std::collections::BTreeMap;
use std::fs::File;

use anyhow::{bail, Context, Result};
use vmap_core::dataset::{PromptMode, SampleRecord, Split};
use vmap_core::gateway::{CompletionRequest, CompletionResult, RunLogHeader};
use vmap_core::numeric::{
    aggregate, score_records, write_metrics_csv, write_records_csv, EvalRecord, GroupBy,
    ParseOptions, SubgroupMetrics,
};
use vmap_core::stats::{stratum_disparity, DisparityReport, StatsError};
use vmap_core::survey::load_codebook;
use vmap_core::Score;

use crate::commands::{
    build_gateway, load_checked_run_log, load_manifest, parse_split, samples_for, split_name,
    write_run_log,
};
use crate::config::{Ctx, MockSpec};
use crate::tables::{fmt_opt_score, fmt_score, render_table};

/// Gold-scripted mock responses for the numerical task.
fn gold_numeric(samples: &[SampleRecord]) -> BTreeMap<String, String> {
    samples
        .iter()
        .map(|s| (s.sample_key(), format!("Answer: {}", s.gold_modal_code)))
        .collect()
}

/// Gold-scripted mock responses for the open-ended task.
fn gold_open(samples: &[SampleRecord]) -> BTreeMap<String, String> {
    samples
        .iter()
        .map(|s| {
            (
                s.sample_key(),
                format!(
                    "Speaking as someone who is {}, I would lean towards option {}: {}.",
                    s.persona_text, s.gold_modal_code, s.gold_stance_label
                ),
            )
        })
        .collect()
}

fn requests_for(
    samples: &[SampleRecord],
    ctx: &Ctx,
    model: &str,
    mode: PromptMode,
    open_prompts: Option<&BTreeMap<String, (String, String)>>,
) -> Vec<CompletionRequest> {
    samples
        .iter()
        .map(|s| {
            let (system, user) = match mode {
                PromptMode::Numerical => (
                    s.prompts.system_prompt.clone(),
                    s.prompts.user_prompt.clone(),
                ),
                PromptMode::OpenEnded => {
                    let (system, user) =
                        &open_prompts.expect("open prompts rendered")[&s.sample_key()];
                    (system.clone(), user.clone())
                }
            };
            CompletionRequest {
                request_id: s.sample_key(),
                system,
                user,
                temperature: ctx.config.eval.temperature,
                max_tokens: ctx.config.eval.max_tokens,
                model_name: model.to_string(),
            }
        })
        .collect()
}

pub fn eval_numeric(
    ctx: &Ctx,
    run_label: &str,
    split: &str,
    provider_name: &str,
    replay: bool,
) -> Result<()> {
    let split = parse_split(split)?;
    let manifest = load_manifest(ctx)?;
    let samples = samples_for(&manifest, split);
    if samples.is_empty() {
        bail!("split `{}` has no samples", split_name(split));
    }

    let log_path = ctx.numeric_run_log(run_label);
    let results: Vec<CompletionResult> = if replay {
        load_checked_run_log(ctx, &log_path)?
    } else {
        let provider_cfg = ctx.provider(provider_name)?;
        let gold = match provider_cfg.mock {
            Some(MockSpec::Gold) => Some(gold_numeric(&samples)),
            _ => None,
        };
        let (gateway, model) = build_gateway(ctx, provider_name, gold)?;
        let requests = requests_for(&samples, ctx, &model, PromptMode::Numerical, None);
        let results = gateway.run_batch(&requests, ctx.config.eval.max_in_flight);
        write_run_log(
            &log_path,
            &RunLogHeader {
                run_label: run_label.to_string(),
                model_name: model,
                config_hash: ctx.config_hash.clone(),
            },
            &results,
        )?;
        results
    };

    let codebook = load_codebook(&ctx.resolve(&ctx.config.survey.codebook))?;
    let options = ParseOptions {
        strict: ctx.config.eval.strict_parsing,
    };
    let records = score_records(&samples, &results, &codebook, options)?;
    write_reports(ctx, run_label, split, &records)?;
    Ok(())
}

/// Score reports shared by eval-numeric and compare.
pub fn write_reports(
    ctx: &Ctx,
    run_label: &str,
    split: Split,
    records: &[EvalRecord],
) -> Result<()> {
    let split = split_name(split);
    let stem = format!("{run_label}_{split}");

    write_records_csv(
        records,
        File::create(ctx.out_dir.join(format!("records_{stem}.csv")))?,
    )?;
    let by_subgroup = aggregate(records, GroupBy::Subgroup)?;
    let by_stratum = aggregate(records, GroupBy::Stratum)?;
    let overall = aggregate(records, GroupBy::Overall)?;
    write_metrics_csv(
        &by_subgroup,
        File::create(ctx.out_dir.join(format!("metrics_{stem}_by_subgroup.csv")))?,
    )?;
    write_metrics_csv(
        &by_stratum,
        File::create(ctx.out_dir.join(format!("metrics_{stem}_by_stratum.csv")))?,
    )?;
    write_metrics_csv(
        &overall,
        File::create(ctx.out_dir.join(format!("metrics_{stem}_overall.csv")))?,
    )?;

    let disparity = disparity_reports(&by_subgroup)?;
    {
        let mut w = csv::WriterBuilder::new().from_writer(File::create(
            ctx.out_dir.join(format!("disparity_{stem}.csv")),
        )?);
        w.write_record(["metric", "stratum", "n_subgroups", "normalized_range", "cv"])?;
        for report in disparity.iter().flatten() {
            for s in &report.per_stratum {
                w.write_record([
                    report.metric_name.as_str(),
                    s.stratum.as_str(),
                    &s.n_subgroups.to_string(),
                    &format!("{:.6}", s.normalized_range),
                    &format!("{:.6}", s.cv),
                ])?;
            }
            w.write_record([
                report.metric_name.as_str(),
                "model",
                "",
                &format!("{:.6}", report.model_normalized_range),
                &format!("{:.6}", report.model_cv),
            ])?;
        }
        w.flush()?;
    }

    let mut text = format!("Run {run_label} on the {split} split\n\n");
    let o = &overall[0];
    text.push_str(&format!(
        "overall: accuracy {} | NMAE {} | refusal rate {} | n = {}\n\n",
        fmt_score(o.accuracy),
        fmt_opt_score(o.nmae),
        fmt_score(o.refusal_rate),
        o.n_samples
    ));
    let rows: Vec<Vec<String>> = by_stratum
        .iter()
        .map(|m| {
            vec![
                m.stratum.clone(),
                m.n_samples.to_string(),
                fmt_score(m.accuracy),
                fmt_opt_score(m.nmae),
                fmt_score(m.refusal_rate),
            ]
        })
        .collect();
    text.push_str(&render_table(
        &["Stratum", "n", "Accuracy", "NMAE", "Refusal"],
        &rows,
    ));
    let disparity_rows: Vec<Vec<String>> = disparity
        .iter()
        .flatten()
        .map(|r| {
            vec![
                r.metric_name.clone(),
                fmt_score(r.model_normalized_range),
                fmt_score(r.model_cv),
            ]
        })
        .collect();
    if !disparity_rows.is_empty() {
        text.push_str("\nSubgroup disparity (model level, averaged over strata)\n");
        text.push_str(&render_table(
            &["Metric", "Norm. Range", "CV"],
            &disparity_rows,
        ));
    }
    std::fs::write(ctx.out_dir.join(format!("metrics_{stem}.txt")), &text)?;
    println!("{text}");
    Ok(())
}

/// Accuracy and NMAE disparity over per-subgroup metrics. Strata need two
/// or more subgroups; a metric undefined for a whole stratum (all-refusal
/// NMAE) simply drops that stratum.
pub fn disparity_reports(by_subgroup: &[SubgroupMetrics]) -> Result<[Option<DisparityReport>; 2]> {
    let mut accuracy: BTreeMap<String, Vec<Score>> = BTreeMap::new();
    let mut nmae: BTreeMap<String, Vec<Score>> = BTreeMap::new();
    for m in by_subgroup {
        accuracy
            .entry(m.stratum.clone())
            .or_default()
            .push(m.accuracy);
        if let Some(v) = m.nmae {
            nmae.entry(m.stratum.clone()).or_default().push(v);
        }
    }
    accuracy.retain(|_, v| v.len() >= 2);
    nmae.retain(|_, v| v.len() >= 2);

    let compute =
        |groups: &BTreeMap<String, Vec<Score>>, name: &str| -> Result<Option<DisparityReport>> {
            if groups.is_empty() {
                return Ok(None);
            }
            match stratum_disparity(groups, name) {
                Ok(report) => Ok(Some(report)),
                Err(StatsError::NonPositiveValue) => Ok(None),
                Err(e) => Err(e).context("disparity computation failed"),
            }
        };
    Ok([compute(&accuracy, "accuracy")?, compute(&nmae, "nmae")?])
}

pub fn eval_open(ctx: &Ctx, run_label: &str, split: &str, provider_name: &str) -> Result<()> {
    let split = parse_split(split)?;
    let manifest = load_manifest(ctx)?;
    let samples = samples_for(&manifest, split);
    if samples.is_empty() {
        bail!("split `{}` has no samples", split_name(split));
    }

    let codebook = load_codebook(&ctx.resolve(&ctx.config.survey.codebook))?;
    let by_id: BTreeMap<&str, &vmap_core::survey::QuestionSpec> = codebook
        .iter()
        .map(|q| (q.question_id.as_str(), q))
        .collect();
    let renderer = ctx.renderer()?;
    let mut open_prompts: BTreeMap<String, (String, String)> = BTreeMap::new();
    for s in &samples {
        let question = by_id
            .get(s.question_id.as_str())
            .with_context(|| format!("question {} missing from codebook", s.question_id))?;
        let prompts = renderer.render_prompts(question, &s.subgroup, PromptMode::OpenEnded)?;
        open_prompts.insert(s.sample_key(), (prompts.system_prompt, prompts.user_prompt));
    }

    let provider_cfg = ctx.provider(provider_name)?;
    let gold = match provider_cfg.mock {
        Some(MockSpec::Gold) => Some(gold_open(&samples)),
        _ => None,
    };
    let (gateway, model) = build_gateway(ctx, provider_name, gold)?;
    let requests = requests_for(
        &samples,
        ctx,
        &model,
        PromptMode::OpenEnded,
        Some(&open_prompts),
    );
    let results = gateway.run_batch(&requests, ctx.config.eval.max_in_flight);

    let log_path = ctx.open_run_log(run_label);
    write_run_log(
        &log_path,
        &RunLogHeader {
            run_label: run_label.to_string(),
            model_name: model,
            config_hash: ctx.config_hash.clone(),
        },
        &results,
    )?;
    let ok = results
        .iter()
        .filter(|r| r.status == vmap_core::gateway::RequestStatus::Ok)
        .count();
    println!(
        "eval-open `{run_label}`: {} responses ({} ok) -> {}",
        results.len(),
        ok,
        log_path.display()
    );
    Ok(())
}
