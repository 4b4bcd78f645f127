//! `judge`: double-pass swapped-order pairwise judging of two open-ended
//! response logs, with win-rate reports per criterion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;

use anyhow::{bail, Context, Result};
use vmap_core::gateway::{CompletionRequest, RequestStatus};
use vmap_core::judge::{
    aggregate_win_rates, build_judge_prompt_with, case_win_rates, parse_verdict, prompt_hash,
    JudgeCase, JudgeLogEntry, WinRateResult, WrAggregate,
};
use vmap_core::survey::load_codebook;

use crate::commands::{
    build_gateway, load_checked_run_log, load_manifest, parse_split, samples_for, split_name,
};
use crate::config::Ctx;
use crate::tables::{fmt_score, render_table};

pub fn run(
    ctx: &Ctx,
    evaluatee_run: &str,
    baseline_run: &str,
    split: &str,
    provider_name: &str,
) -> Result<()> {
    let split = parse_split(split)?;
    let manifest = load_manifest(ctx)?;
    let samples = samples_for(&manifest, split);
    if samples.is_empty() {
        bail!("split `{}` has no samples", split_name(split));
    }
    let stratum_of: BTreeMap<String, String> = samples
        .iter()
        .map(|s| (s.sample_key(), s.subgroup.stratum.name.clone()))
        .collect();

    let stem = format!("{evaluatee_run}_vs_{baseline_run}_{}", split_name(split));

    // self-comparison reports 0.5 by definition, no judging needed
    if evaluatee_run == baseline_run {
        let mut strata: Vec<String> = stratum_of.values().cloned().collect();
        strata.sort();
        strata.dedup();
        let mut rows = vec![vec![
            "overall".to_string(),
            samples.len().to_string(),
            "0.500".to_string(),
            "0.500".to_string(),
            "0.500".to_string(),
        ]];
        for s in &strata {
            let n = stratum_of.values().filter(|v| *v == s).count();
            rows.push(vec![
                s.clone(),
                n.to_string(),
                "0.500".to_string(),
                "0.500".to_string(),
                "0.500".to_string(),
            ]);
        }
        let mut text = format!(
            "Win rates: {evaluatee_run} vs {baseline_run} ({} split)\nself-comparison: all win rates are 0.500 by definition\n\n",
            split_name(split)
        );
        text.push_str(&render_table(
            &["Group", "n", "Persona WR", "Value WR", "Overall WR"],
            &rows,
        ));
        std::fs::write(ctx.out_dir.join(format!("wr_{stem}.txt")), &text)?;
        write_wr_csv(ctx, &stem, &rows)?;
        println!("{text}");
        return Ok(());
    }

    let evaluatee_results = load_checked_run_log(ctx, &ctx.open_run_log(evaluatee_run))?;
    let baseline_results = load_checked_run_log(ctx, &ctx.open_run_log(baseline_run))?;
    let to_map = |results: Vec<vmap_core::gateway::CompletionResult>| {
        results
            .into_iter()
            .map(|r| (r.request_id.clone(), r))
            .collect::<BTreeMap<_, _>>()
    };
    let evaluatee_by_id = to_map(evaluatee_results);
    let baseline_by_id = to_map(baseline_results);

    // the two logs must cover exactly this split's case set
    for (label, map) in [
        (evaluatee_run, &evaluatee_by_id),
        (baseline_run, &baseline_by_id),
    ] {
        let log_keys: Vec<&String> = map.keys().collect();
        let sample_keys: Vec<String> = samples.iter().map(|s| s.sample_key()).collect();
        if log_keys.len() != sample_keys.len() || !sample_keys.iter().all(|k| map.contains_key(k)) {
            bail!(
                "run log `{label}` does not cover the same case set as the {} split",
                split_name(split)
            );
        }
    }

    let codebook = load_codebook(&ctx.resolve(&ctx.config.survey.codebook))?;
    let by_id: BTreeMap<&str, &vmap_core::survey::QuestionSpec> = codebook
        .iter()
        .map(|q| (q.question_id.as_str(), q))
        .collect();
    let template = ctx.judge_template()?;

    let mut cases = Vec::new();
    let mut skipped_empty = 0usize;
    for sample in &samples {
        let key = sample.sample_key();
        let response_of = |map: &BTreeMap<String, vmap_core::gateway::CompletionResult>| {
            let r = &map[&key];
            if r.status == RequestStatus::Ok {
                r.raw_text.clone()
            } else {
                String::new()
            }
        };
        let response_evaluatee = response_of(&evaluatee_by_id);
        let response_baseline = response_of(&baseline_by_id);
        if response_evaluatee.trim().is_empty() || response_baseline.trim().is_empty() {
            skipped_empty += 1;
            continue;
        }
        let question = by_id
            .get(sample.question_id.as_str())
            .with_context(|| format!("question {} missing from codebook", sample.question_id))?;
        cases.push(JudgeCase {
            case_id: key,
            persona_text: sample.persona_text.clone(),
            question: (*question).clone(),
            gold_stance_label: sample.gold_stance_label.clone(),
            response_evaluatee,
            response_baseline,
        });
    }
    if cases.is_empty() {
        bail!("no judgeable cases (all responses empty or failed)");
    }

    let (gateway, model) = build_gateway(ctx, provider_name, None)?;
    let mut requests = Vec::with_capacity(cases.len() * 2);
    for case in &cases {
        for (pass, a_is_evaluatee) in [(1u8, true), (2u8, false)] {
            requests.push(CompletionRequest {
                request_id: format!("{}#pass{}", case.case_id, pass),
                system: String::new(),
                user: build_judge_prompt_with(&template, case, a_is_evaluatee)?,
                temperature: ctx.config.eval.temperature,
                max_tokens: ctx.config.eval.max_tokens,
                model_name: model.clone(),
            });
        }
    }
    let results = gateway.run_batch(&requests, ctx.config.eval.max_in_flight);
    let results_by_id: BTreeMap<&str, &vmap_core::gateway::CompletionResult> =
        results.iter().map(|r| (r.request_id.as_str(), r)).collect();

    let log_path = ctx.judge_log(evaluatee_run, baseline_run);
    let mut log =
        File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?;

    let mut win_rates: Vec<WinRateResult> = Vec::new();
    let mut excluded = 0usize;
    for (case, request_pair) in cases.iter().zip(requests.chunks(2)) {
        let mut verdicts = [None, None];
        for (i, request) in request_pair.iter().enumerate() {
            let result = results_by_id[request.request_id.as_str()];
            let parsed = if result.status == RequestStatus::Ok {
                parse_verdict(&result.raw_text).ok()
            } else {
                None
            };
            let entry = JudgeLogEntry {
                case_id: case.case_id.clone(),
                pass: (i + 1) as u8,
                prompt_hash: prompt_hash(&request.user),
                raw_verdict: result.raw_text.clone(),
                parsed: parsed.clone(),
            };
            writeln!(log, "{}", serde_json::to_string(&entry)?)?;
            verdicts[i] = parsed;
        }
        match case_win_rates(&case.case_id, verdicts[0].as_ref(), verdicts[1].as_ref()) {
            Ok(result) => win_rates.push(result),
            Err(_) => excluded += 1,
        }
    }

    // aggregate overall and per stratum
    let overall = aggregate_win_rates(&win_rates).context("no scored cases")?;
    let mut by_stratum: BTreeMap<String, Vec<WinRateResult>> = BTreeMap::new();
    for result in &win_rates {
        if let Some(stratum) = stratum_of.get(&result.case_id) {
            by_stratum
                .entry(stratum.clone())
                .or_default()
                .push(result.clone());
        }
    }

    let wr_row = |group: &str, agg: &WrAggregate| -> Vec<String> {
        vec![
            group.to_string(),
            agg.n_cases.to_string(),
            fmt_score(agg.persona),
            fmt_score(agg.value),
            fmt_score(agg.overall),
        ]
    };
    let mut rows = vec![wr_row("overall", &overall)];
    for (stratum, results) in &by_stratum {
        if let Some(agg) = aggregate_win_rates(results) {
            rows.push(wr_row(stratum, &agg));
        }
    }

    let mut text = format!(
        "Win rates: {evaluatee_run} vs {baseline_run} ({} split)\n",
        split_name(split)
    );
    text.push_str(&format!(
        "cases judged: {} | single-pass: {} | excluded (both passes invalid): {} | skipped (empty response): {}\n\n",
        overall.n_cases, overall.n_single_pass, excluded, skipped_empty
    ));
    text.push_str(&render_table(
        &["Group", "n", "Persona WR", "Value WR", "Overall WR"],
        &rows,
    ));
    // custom criteria elicited by an overridden judge template, if any
    if !overall.extra.is_empty() {
        let extra_rows: Vec<Vec<String>> = overall
            .extra
            .iter()
            .map(|(name, wr)| vec![name.clone(), fmt_score(*wr)])
            .collect();
        text.push_str("\nCustom criteria (overall)\n");
        text.push_str(&render_table(&["Criterion", "WR"], &extra_rows));
        let mut w = csv::WriterBuilder::new().from_writer(File::create(
            ctx.out_dir.join(format!("wr_extra_{stem}.csv")),
        )?);
        w.write_record(["criterion", "wr"])?;
        for (name, wr) in &overall.extra {
            w.write_record([name.as_str(), &format!("{wr:.6}")])?;
        }
        w.flush()?;
    }
    std::fs::write(ctx.out_dir.join(format!("wr_{stem}.txt")), &text)?;
    write_wr_csv(ctx, &stem, &rows)?;
    println!("{text}");
    println!("judge log: {}", log_path.display());
    Ok(())
}

fn write_wr_csv(ctx: &Ctx, stem: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .from_writer(File::create(ctx.out_dir.join(format!("wr_{stem}.csv")))?);
    w.write_record(["group", "n", "persona_wr", "value_wr", "overall_wr"])?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
