//! `report`: human-annotation agreement summary — inter-annotator and
//! annotator-vs-judge accuracy and weighted kappa per criterion, plus mean
//! Likert ratings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{Context, Result};
use vmap_core::judge::{JudgeLogEntry, Winner};
use vmap_core::stats::{likert_summary, load_annotations, verdict_agreement, AnnotationValue};
use vmap_core::Score;

use crate::config::Ctx;
use crate::tables::{fmt_opt_score, render_table};

/// The AI judge's pass-1 label per (case, criterion), read from a judge log.
fn judge_labels(path: &Path) -> Result<BTreeMap<(String, String), Winner>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut labels = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: JudgeLogEntry = serde_json::from_str(&line)
            .with_context(|| format!("malformed judge log line in {}", path.display()))?;
        if entry.pass != 1 {
            continue;
        }
        if let Some(verdict) = entry.parsed {
            labels.insert(
                (entry.case_id.clone(), "persona".to_string()),
                verdict.persona_winner,
            );
            labels.insert(
                (entry.case_id.clone(), "value".to_string()),
                verdict.value_winner,
            );
            labels.insert(
                (entry.case_id, "overall".to_string()),
                verdict.overall_winner,
            );
        }
    }
    Ok(labels)
}

pub fn run(ctx: &Ctx, annotations: &Path, judge_log: Option<&Path>) -> Result<()> {
    let rows = load_annotations(annotations)?;
    let likert = likert_summary(&rows);
    let judge = judge_log.map(judge_labels).transpose()?;

    // (criterion, annotator) -> item -> label
    let mut labels: BTreeMap<String, BTreeMap<String, BTreeMap<String, Winner>>> = BTreeMap::new();
    for row in &rows {
        if let AnnotationValue::Label(w) = row.value {
            labels
                .entry(row.criterion.clone())
                .or_default()
                .entry(row.annotator_id.clone())
                .or_default()
                .insert(row.item_id.clone(), w);
        }
    }

    struct Agreement {
        accuracy: Score,
        kappa: Option<Score>,
        n_pairs: usize,
    }
    // mean pairwise agreement over a list of (list_a, list_b) pairs
    let mean_agreement = |pairs: Vec<(Vec<Winner>, Vec<Winner>)>| -> Option<Agreement> {
        let mut accs = Vec::new();
        let mut kappas = Vec::new();
        for (a, b) in &pairs {
            if a.is_empty() {
                continue;
            }
            match verdict_agreement(a, b) {
                Ok(result) => {
                    accs.push(result.accuracy);
                    kappas.push(result.weighted_kappa);
                }
                // keep the accuracy even when kappa is degenerate
                Err(_) => {
                    if let Ok(acc) = vmap_core::stats::agreement_accuracy(a, b) {
                        accs.push(acc);
                    }
                }
            }
        }
        if accs.is_empty() {
            return None;
        }
        Some(Agreement {
            accuracy: accs.iter().sum::<Score>() / accs.len() as Score,
            kappa: if kappas.is_empty() {
                None
            } else {
                Some(kappas.iter().sum::<Score>() / kappas.len() as Score)
            },
            n_pairs: accs.len(),
        })
    };

    let mut table_rows = Vec::new();
    let mut csv_rows: Vec<Vec<String>> = Vec::new();
    for (criterion, by_annotator) in &labels {
        let annotators: Vec<&String> = by_annotator.keys().collect();

        // human-human pairs over common items
        let mut hh_pairs = Vec::new();
        for i in 0..annotators.len() {
            for j in (i + 1)..annotators.len() {
                let a = &by_annotator[annotators[i]];
                let b = &by_annotator[annotators[j]];
                let common: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
                if common.is_empty() {
                    continue;
                }
                hh_pairs.push((
                    common.iter().map(|k| a[*k]).collect::<Vec<_>>(),
                    common.iter().map(|k| b[*k]).collect::<Vec<_>>(),
                ));
            }
        }
        let hh = mean_agreement(hh_pairs);

        // human-AI pairs against the judge's pass-1 labels
        let hai = judge.as_ref().and_then(|judge| {
            let mut pairs = Vec::new();
            for annotator in &annotators {
                let a = &by_annotator[*annotator];
                let mut human = Vec::new();
                let mut ai = Vec::new();
                for (item, label) in a {
                    if let Some(j) = judge.get(&(item.clone(), criterion.clone())) {
                        human.push(*label);
                        ai.push(*j);
                    }
                }
                if !human.is_empty() {
                    pairs.push((human, ai));
                }
            }
            mean_agreement(pairs)
        });

        let fmt_acc = |a: &Option<Agreement>| fmt_opt_score(a.as_ref().map(|x| x.accuracy));
        let fmt_kappa = |a: &Option<Agreement>| fmt_opt_score(a.as_ref().and_then(|x| x.kappa));
        table_rows.push(vec![
            criterion.clone(),
            fmt_acc(&hai),
            fmt_acc(&hh),
            fmt_kappa(&hai),
            fmt_kappa(&hh),
            fmt_opt_score(likert.get(criterion).copied()),
        ]);
        csv_rows.push(vec![
            criterion.clone(),
            fmt_acc(&hai),
            fmt_acc(&hh),
            fmt_kappa(&hai),
            fmt_kappa(&hh),
            fmt_opt_score(likert.get(criterion).copied()),
            hai.as_ref()
                .map(|a| a.n_pairs.to_string())
                .unwrap_or_default(),
            hh.as_ref()
                .map(|a| a.n_pairs.to_string())
                .unwrap_or_default(),
        ]);
    }

    // Likert-only criteria still get a row
    for (criterion, rating) in &likert {
        if !labels.contains_key(criterion) {
            let row = vec![
                criterion.clone(),
                "-".to_string(),
                "-".to_string(),
                "-".to_string(),
                "-".to_string(),
                fmt_opt_score(Some(*rating)),
            ];
            table_rows.push(row.clone());
            let mut csv_row = row;
            csv_row.extend([String::new(), String::new()]);
            csv_rows.push(csv_row);
        }
    }

    let mut text = String::from("Human validation of the judge protocol\n\n");
    text.push_str(&render_table(
        &[
            "Criterion",
            "Acc H-AI",
            "Acc H-H",
            "w-Kappa H-AI",
            "w-Kappa H-H",
            "Likert",
        ],
        &table_rows,
    ));
    {
        let mut w =
            csv::WriterBuilder::new().from_writer(File::create(ctx.out_dir.join("agreement.csv"))?);
        w.write_record([
            "criterion",
            "accuracy_h_ai",
            "accuracy_h_h",
            "w_kappa_h_ai",
            "w_kappa_h_h",
            "likert_mean",
            "n_h_ai_pairs",
            "n_h_h_pairs",
        ])?;
        for row in &csv_rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    std::fs::write(ctx.out_dir.join("agreement.txt"), &text)?;
    println!("{text}");
    Ok(())
}
