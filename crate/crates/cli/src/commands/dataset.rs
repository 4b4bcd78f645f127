//! `build-dataset`: assemble the train / OOD manifest and write the
//! training and evaluation exports plus the per-stratum count summary.

use std::fs::File;

use anyhow::{ensure, Context, Result};
use vmap_core::dataset::{
    build_splits, compositional_coverage_gaps, export_manifest, export_training_records,
    import_manifest, Split,
};

use crate::commands::{build_matrix, load_filtered_survey};
use crate::config::Ctx;
use crate::tables::render_table;

pub fn run(ctx: &Ctx) -> Result<()> {
    let table = load_filtered_survey(ctx)?;
    let (_strata, matrix) = build_matrix(ctx, &table)?;
    let renderer = ctx.renderer()?;

    let manifest = build_splits(
        &matrix,
        &table.questions,
        &renderer,
        &ctx.config.strata.train,
        &ctx.config.strata.ood,
        &ctx.config.survey.exclusions,
    )?;

    let manifest_path = ctx.manifest_path();
    export_manifest(&manifest, &manifest_path, None)?;
    export_training_records(&manifest, &ctx.out_dir.join("train.jsonl"))?;
    export_manifest(
        &manifest,
        &ctx.out_dir.join("eval_ood.jsonl"),
        Some(Split::EvalOod),
    )?;
    export_manifest(
        &manifest,
        &ctx.out_dir.join("eval_train.jsonl"),
        Some(Split::Train),
    )?;

    // self-check: the manifest must round-trip losslessly
    let reimported = import_manifest(&manifest_path)?;
    ensure!(
        reimported == manifest,
        "manifest round-trip mismatch at {}",
        manifest_path.display()
    );

    let gaps = compositional_coverage_gaps(&manifest);

    // count summary in the dataset-composition shape
    let counts_path = ctx.out_dir.join("dataset_counts.csv");
    {
        let mut w = csv::WriterBuilder::new().from_writer(File::create(&counts_path)?);
        w.write_record(["split", "stratum", "subgroups", "samples"])?;
        for (split, names) in [
            ("train", &ctx.config.strata.train),
            ("eval_ood", &ctx.config.strata.ood),
        ] {
            for name in names {
                let count = manifest.counts.get(name).cloned().unwrap_or_default();
                w.write_record([
                    split,
                    name.as_str(),
                    &count.subgroups.to_string(),
                    &count.samples.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    let mut text = String::new();
    text.push_str("Dataset composition\n\n");
    let mut rows = Vec::new();
    let mut grand = (0usize, 0usize);
    for (title, names) in [
        ("Train Set Strata", &ctx.config.strata.train),
        ("Evaluation (OOD) Set Strata", &ctx.config.strata.ood),
    ] {
        let mut totals = (0usize, 0usize);
        rows.push(vec![format!("[{title}]"), String::new(), String::new()]);
        for name in names {
            let count = manifest.counts.get(name).cloned().unwrap_or_default();
            totals.0 += count.subgroups;
            totals.1 += count.samples;
            rows.push(vec![
                format!("  {name}"),
                count.subgroups.to_string(),
                count.samples.to_string(),
            ]);
        }
        rows.push(vec![
            "  Total".to_string(),
            totals.0.to_string(),
            totals.1.to_string(),
        ]);
        grand.0 += totals.0;
        grand.1 += totals.1;
    }
    rows.push(vec![
        "Grand Total".to_string(),
        grand.0.to_string(),
        grand.1.to_string(),
    ]);
    text.push_str(&render_table(&["Stratum", "Subgroups", "Samples"], &rows));
    if gaps.is_empty() {
        text.push_str("\nCompositional coverage: every OOD axis value is seen in training.\n");
    } else {
        text.push_str("\nWARNING: OOD axis values unseen in training:\n");
        for (axis, value) in &gaps {
            text.push_str(&format!("  {axis} = {value}\n"));
        }
    }
    std::fs::write(ctx.out_dir.join("dataset_counts.txt"), &text)
        .with_context(|| "cannot write dataset_counts.txt")?;
    println!("{text}");
    println!(
        "manifest: {} records -> {}",
        manifest.records.len(),
        manifest_path.display()
    );
    Ok(())
}
