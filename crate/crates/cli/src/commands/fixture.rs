//! `gen-fixture`: write a self-contained synthetic survey plus a ready-made
//! config wired to deterministic mock providers, so the whole pipeline can
//! be exercised offline.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use vmap_core::synthetic::{default_exclusions, write_synthetic_files};

use crate::config::{
    EvalConfig, MockSpec, OutputConfig, ProviderConfig, ProviderKind, RunConfig, StrataConfig,
    SurveyConfig,
};

fn mock_provider(model: &str, mock: MockSpec) -> ProviderConfig {
    ProviderConfig {
        kind: ProviderKind::Mock,
        model: model.to_string(),
        base_url: None,
        api_key_env: None,
        timeout_secs: 120,
        requests_per_minute: None,
        max_retries: 3,
        mock: Some(mock),
    }
}

pub fn run(out: &Path, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let (codebook_path, responses_path) = write_synthetic_files(out, seed)?;

    let config = RunConfig {
        survey: SurveyConfig {
            codebook: "codebook.json".into(),
            responses: "responses.csv".into(),
            delimiter: None,
            raw_age_column: None,
            exclusions: default_exclusions(),
            min_n: 30,
        },
        strata: StrataConfig::default(),
        eval: EvalConfig {
            seed,
            ..EvalConfig::default()
        },
        output: OutputConfig { dir: "out".into() },
        providers: BTreeMap::from([
            (
                "evaluatee".to_string(),
                mock_provider("mock-evaluatee", MockSpec::Gold),
            ),
            (
                "baseline".to_string(),
                mock_provider("mock-baseline", MockSpec::Gold),
            ),
            (
                "judge".to_string(),
                mock_provider(
                    "mock-judge",
                    MockSpec::Fixed {
                        text: r#"Persona Analysis: comparable. Value Analysis: comparable.
Final Judgement:
{"persona_winner": "Tie", "value_winner": "Tie", "overall_winner": "Tie"}"#
                            .to_string(),
                    },
                ),
            ),
        ]),
        persona: Default::default(),
        templates: Default::default(),
    };
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, toml::to_string_pretty(&config)?)
        .with_context(|| format!("cannot write {}", config_path.display()))?;

    println!("wrote {}", codebook_path.display());
    println!("wrote {}", responses_path.display());
    println!("wrote {}", config_path.display());
    Ok(())
}
