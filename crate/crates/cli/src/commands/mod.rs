//! Subcommand implementations and the plumbing they share.

pub mod compare;
pub mod dataset;
pub mod eval;
pub mod fixture;
pub mod judge;
pub mod landscape;
pub mod report;

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use vmap_core::dataset::{DatasetManifest, SampleRecord, Split};
use vmap_core::gateway::{
    load_run_log, CompletionResult, Gateway, HttpProviderConfig, MockProvider,
    OpenAiCompatProvider, RetryPolicy, RunLogHeader, RunLogWriter,
};
use vmap_core::stratify::{enumerate_strata, opinion_matrix, OpinionMatrix, Stratum};
use vmap_core::survey::{apply_filters, load_codebook, load_responses, LoadOptions, SurveyTable};

use crate::config::{Ctx, MockSpec, ProviderKind};

/// Load the survey, apply the configured filters, and emit the filter log.
pub fn load_filtered_survey(ctx: &Ctx) -> Result<SurveyTable> {
    let codebook_path = ctx.resolve(&ctx.config.survey.codebook);
    let responses_path = ctx.resolve(&ctx.config.survey.responses);
    let codebook = load_codebook(&codebook_path)?;
    let options = LoadOptions {
        delimiter: ctx
            .config
            .survey
            .delimiter
            .as_deref()
            .and_then(|d| d.bytes().next())
            .unwrap_or(b','),
        raw_age_column: ctx.config.survey.raw_age_column.clone(),
    };
    let table = load_responses(&responses_path, &codebook, &options)?;
    let table = apply_filters(table, &ctx.config.survey.exclusions, true);
    let log_path = ctx.out_dir.join("filter_log.json");
    std::fs::write(
        &log_path,
        serde_json::to_string_pretty(&table.provenance.filter_log)?,
    )
    .with_context(|| format!("cannot write {}", log_path.display()))?;
    Ok(table)
}

/// Enumerate the configured axes into strata and build the opinion matrix.
pub fn build_matrix(ctx: &Ctx, table: &SurveyTable) -> Result<(Vec<Stratum>, OpinionMatrix)> {
    let axis_refs: Vec<&str> = ctx.config.strata.axes.iter().map(String::as_str).collect();
    let strata = enumerate_strata(&axis_refs)?;
    let matrix = opinion_matrix(table, &strata, ctx.config.survey.min_n)?;
    Ok((strata, matrix))
}

pub fn load_manifest(ctx: &Ctx) -> Result<DatasetManifest> {
    let path = ctx.manifest_path();
    if !path.exists() {
        bail!(
            "no manifest at {}; run `vmap build-dataset` first",
            path.display()
        );
    }
    Ok(vmap_core::dataset::import_manifest(&path)?)
}

pub fn parse_split(split: &str) -> Result<Split> {
    match split {
        "ood" | "eval_ood" => Ok(Split::EvalOod),
        "train" => Ok(Split::Train),
        other => bail!("unknown split `{other}`; expected `ood` or `train`"),
    }
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::EvalOod => "ood",
    }
}

pub fn samples_for(manifest: &DatasetManifest, split: Split) -> Vec<SampleRecord> {
    manifest.records_for(split).cloned().collect()
}

/// Build the gateway for a named provider. `gold` supplies per-request
/// responses when the provider is a gold-scripted mock.
pub fn build_gateway(
    ctx: &Ctx,
    provider_name: &str,
    gold: Option<BTreeMap<String, String>>,
) -> Result<(Gateway, String)> {
    let cfg = ctx.provider(provider_name)?;
    let retry = RetryPolicy {
        max_retries: cfg.max_retries,
        ..RetryPolicy::default()
    };
    let gateway = match cfg.kind {
        ProviderKind::Mock => {
            let mock = match &cfg.mock {
                Some(MockSpec::Gold) => {
                    let map = gold.with_context(|| {
                        format!("provider `{provider_name}` is gold-scripted but this command has no gold targets")
                    })?;
                    MockProvider::scripted(map)
                }
                Some(MockSpec::Fixed { text }) => {
                    MockProvider::scripted(BTreeMap::new()).with_default(text)
                }
                Some(MockSpec::Refuse) => MockProvider::scripted(BTreeMap::new())
                    .with_default("I cannot answer that request."),
                Some(MockSpec::Map { path }) => {
                    let resolved = ctx.resolve(path);
                    let text = std::fs::read_to_string(&resolved)
                        .with_context(|| format!("cannot read mock map {}", resolved.display()))?;
                    let map: BTreeMap<String, String> = serde_json::from_str(&text)
                        .with_context(|| format!("mock map {} is not a JSON object", resolved.display()))?;
                    MockProvider::scripted(map)
                }
                None => bail!("provider `{provider_name}` is mock-kind but has no [providers.{provider_name}.mock] table"),
            };
            Gateway::new(Box::new(mock)).with_retry(retry)
        }
        ProviderKind::Openai => {
            let provider = OpenAiCompatProvider::new(&HttpProviderConfig {
                base_url: cfg
                    .base_url
                    .clone()
                    .with_context(|| format!("provider `{provider_name}` has no base_url"))?,
                api_key_env: cfg.api_key_env.clone(),
                timeout_secs: cfg.timeout_secs,
            })?;
            Gateway::new(Box::new(provider))
                .with_retry(retry)
                .with_requests_per_minute(cfg.requests_per_minute)
        }
    };
    Ok((gateway, cfg.model.clone()))
}

/// Write a run log (header + results) at `path`.
pub fn write_run_log(
    path: &Path,
    header: &RunLogHeader,
    results: &[CompletionResult],
) -> Result<()> {
    let mut writer = RunLogWriter::create(path, header)?;
    for result in results {
        writer.append(result)?;
    }
    Ok(())
}

/// Load a run log and check it was produced under this config.
pub fn load_checked_run_log(ctx: &Ctx, path: &Path) -> Result<Vec<CompletionResult>> {
    if !path.exists() {
        bail!("no run log at {}", path.display());
    }
    let (header, results) = load_run_log(path)?;
    if header.config_hash != ctx.config_hash {
        bail!(
            "run log {} was produced under a different config (hash {} != {})",
            path.display(),
            header.config_hash,
            ctx.config_hash
        );
    }
    Ok(results)
}
