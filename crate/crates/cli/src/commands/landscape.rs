//! `landscape`: per-question/stratum conflict scores, category ranking,
//! high/low-conflict exemplars and the label-stability summary.

use std::collections::BTreeMap;
use std::fs::File;

use anyhow::{Context, Result};
use vmap_core::landscape::{
    category_report, divergence_scores, diversity_scores, label_stability, overall_summary,
    DenominatorMode, DiversityScore,
};
use vmap_core::stratify::write_opinion_matrix_csv;
use vmap_core::Score;

use crate::commands::{build_matrix, load_filtered_survey};
use crate::config::Ctx;
use crate::tables::{fmt_score, render_table};

pub fn run(ctx: &Ctx) -> Result<()> {
    let table = load_filtered_survey(ctx)?;
    let (_strata, matrix) = build_matrix(ctx, &table)?;
    let codebook = table.questions.clone();

    let matrix_path = ctx.out_dir.join("opinion_matrix.csv");
    write_opinion_matrix_csv(&matrix, File::create(&matrix_path)?)?;

    let mds_min = diversity_scores(&matrix, &codebook, DenominatorMode::MinSC)?;
    let mds_distinct = diversity_scores(&matrix, &codebook, DenominatorMode::DistinctModes)?;
    let wasserstein = divergence_scores(&matrix, &codebook)?;

    // (min-s-c score, distinct-modes score, wasserstein, n valid subgroups)
    type LandscapeCell = (Option<Score>, Option<Score>, Option<Score>, usize);
    // joined per-(question, stratum) table with both denominators
    let mut joined: BTreeMap<(String, String), LandscapeCell> = BTreeMap::new();
    for s in &mds_min {
        let entry = joined
            .entry((s.question_id.clone(), s.stratum.clone()))
            .or_insert((None, None, None, 0));
        entry.0 = Some(s.score);
        entry.3 = s.n_valid_subgroups;
    }
    for s in &mds_distinct {
        joined
            .entry((s.question_id.clone(), s.stratum.clone()))
            .or_insert((None, None, None, 0))
            .1 = Some(s.score);
    }
    for s in &wasserstein {
        joined
            .entry((s.question_id.clone(), s.stratum.clone()))
            .or_insert((None, None, None, 0))
            .2 = Some(s.score);
    }
    let landscape_path = ctx.out_dir.join("landscape.csv");
    {
        let mut w = csv::WriterBuilder::new().from_writer(File::create(&landscape_path)?);
        w.write_record([
            "question_id",
            "stratum",
            "mds_min_s_c",
            "mds_distinct_modes",
            "wasserstein",
            "n_valid_subgroups",
        ])?;
        for ((question_id, stratum), (min_sc, distinct, wass, n_valid)) in &joined {
            w.write_record([
                question_id.as_str(),
                stratum.as_str(),
                &min_sc.map(|v| format!("{v:.6}")).unwrap_or_default(),
                &distinct.map(|v| format!("{v:.6}")).unwrap_or_default(),
                &wass.map(|v| format!("{v:.6}")).unwrap_or_default(),
                &n_valid.to_string(),
            ])?;
        }
        w.flush()?;
    }

    // category summary in the ranked-table shape
    let categories = category_report(&mds_min, &codebook)?;
    let overall = overall_summary(&mds_min).context("no diversity scores")?;
    let category_path = ctx.out_dir.join("category_summary.csv");
    {
        let mut w = csv::WriterBuilder::new().from_writer(File::create(&category_path)?);
        w.write_record([
            "category",
            "total_questions",
            "unanimous_questions",
            "avg_diversity",
        ])?;
        for row in categories.iter().chain(std::iter::once(&overall)) {
            w.write_record([
                row.category.as_str(),
                &row.total_questions.to_string(),
                &row.unanimous_questions.to_string(),
                &format!("{:.6}", row.avg_diversity),
            ])?;
        }
        w.flush()?;
    }

    let stability = label_stability(&matrix)?;
    std::fs::write(
        ctx.out_dir.join("label_stability.json"),
        serde_json::to_string_pretty(&stability)?,
    )?;

    let exemplars = exemplar_text(&matrix, &codebook, &mds_min);
    std::fs::write(ctx.out_dir.join("exemplars.txt"), &exemplars)?;

    let mut summary = String::new();
    summary.push_str("Value landscape: categories ranked by average modal diversity\n\n");
    let rows: Vec<Vec<String>> = categories
        .iter()
        .chain(std::iter::once(&overall))
        .map(|r| {
            vec![
                r.category.clone(),
                r.total_questions.to_string(),
                r.unanimous_questions.to_string(),
                fmt_score(r.avg_diversity),
            ]
        })
        .collect();
    summary.push_str(&render_table(
        &["Value Category", "Total Qns.", "Unan. Qns.", "Avg. Div."],
        &rows,
    ));
    summary.push_str(&format!(
        "\nLabel stability: Spearman rho = {:.4}, p = {:.4} (two-sided normal approximation), n = {} valid (question, subgroup) cells\n",
        stability.rho, stability.p_value, stability.n_pairs
    ));
    std::fs::write(ctx.out_dir.join("landscape_summary.txt"), &summary)?;

    println!(
        "landscape: {} questions x {} strata scored",
        overall.total_questions,
        matrix.stratum_names().len()
    );
    println!("{summary}");
    Ok(())
}

/// High- and no-conflict question exemplars with their modal answers.
fn exemplar_text(
    matrix: &vmap_core::stratify::OpinionMatrix,
    codebook: &[vmap_core::survey::QuestionSpec],
    scores: &[DiversityScore],
) -> String {
    let by_id: BTreeMap<&str, &vmap_core::survey::QuestionSpec> = codebook
        .iter()
        .map(|q| (q.question_id.as_str(), q))
        .collect();
    let mut sums: BTreeMap<String, (Score, usize)> = BTreeMap::new();
    for s in scores {
        let entry = sums.entry(s.question_id.clone()).or_insert((0.0, 0));
        entry.0 += s.score;
        entry.1 += 1;
    }
    let mut means: Vec<(String, Score)> = sums
        .into_iter()
        .map(|(q, (sum, n))| (q, sum / n as Score))
        .collect();
    means.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));

    let mut out = String::new();
    out.push_str("High-conflict questions (highest mean modal diversity)\n\n");
    for (question_id, mean) in means.iter().take(3) {
        let Some(question) = by_id.get(question_id.as_str()) else {
            continue;
        };
        // show the stratum where this question scores highest
        let best = scores
            .iter()
            .filter(|s| &s.question_id == question_id)
            .max_by(|a, b| a.score.partial_cmp(&b.score).expect("finite"));
        let Some(best) = best else { continue };
        out.push_str(&format!(
            "{} (avg score {:.3}): {}\n",
            question_id, mean, question.text
        ));
        out.push_str(&format!("  modal answers in stratum {}:\n", best.stratum));
        let mut by_mode: BTreeMap<i64, Vec<String>> = BTreeMap::new();
        for op in matrix.valid_for(question_id, &best.stratum) {
            if let Some(code) = op.modal_code {
                by_mode.entry(code).or_default().push(op.subgroup.key());
            }
        }
        for (code, subgroups) in by_mode {
            out.push_str(&format!(
                "    \"{}\" ({}): {}\n",
                code,
                question.label_for(code),
                subgroups.join(", ")
            ));
        }
        out.push('\n');
    }

    out.push_str("No-conflict questions (zero modal diversity)\n\n");
    let mut unanimous = 0;
    for (question_id, mean) in means.iter().rev() {
        if *mean != 0.0 || unanimous >= 3 {
            continue;
        }
        let Some(question) = by_id.get(question_id.as_str()) else {
            continue;
        };
        let mode = matrix
            .entries
            .values()
            .find(|op| &op.question_id == question_id && op.valid)
            .and_then(|op| op.modal_code);
        if let Some(code) = mode {
            out.push_str(&format!(
                "{}: {} -> unanimous \"{}\" ({})\n",
                question_id,
                question.text,
                code,
                question.label_for(code)
            ));
            unanimous += 1;
        }
    }
    out
}
