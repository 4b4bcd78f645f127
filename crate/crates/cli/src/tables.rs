//! Plain-text table rendering for the human-readable report files.

/// Render a left-aligned text table with a dashed header rule.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
    }
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<width$}", c, width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = String::new();
    out.push_str(&line(
        &headers.iter().map(|h| h.to_string()).collect::<Vec<_>>(),
    ));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Fixed-precision score formatting shared by all reports.
pub fn fmt_score(v: f64) -> String {
    format!("{v:.3}")
}

pub fn fmt_opt_score(v: Option<f64>) -> String {
    v.map(fmt_score).unwrap_or_else(|| "-".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_aligned_and_deterministic() {
        let t1 = render_table(
            &["name", "value"],
            &[
                vec!["a".to_string(), "1.000".to_string()],
                vec!["longer".to_string(), "0.5".to_string()],
            ],
        );
        let t2 = render_table(
            &["name", "value"],
            &[
                vec!["a".to_string(), "1.000".to_string()],
                vec!["longer".to_string(), "0.5".to_string()],
            ],
        );
        assert_eq!(t1, t2);
        assert!(t1.starts_with("name    value"));
    }
}
