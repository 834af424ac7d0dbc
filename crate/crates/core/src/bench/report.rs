use std::collections::BTreeMap;

use crate::domain::{AggregateReport, MetricSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    Markdown,
    Csv,
}

fn two(v: f64) -> String {
    format!("{v:.2}")
}

fn means(m: &MetricSummary) -> (String, String) {
    if m.n == 0 {
        (String::new(), String::new())
    } else {
        (two(m.mean_pc), two(m.mean_sa))
    }
}

fn csv_text(rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 input")
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n", header.join(" | "));
    let align: Vec<&str> = header
        .iter()
        .enumerate()
        .map(|(i, _)| if i == 0 { "---" } else { "---:" })
        .collect();
    out.push_str(&format!("| {} |\n", align.join(" | ")));
    for row in rows {
        let cells: Vec<&str> = row
            .iter()
            .map(|c| if c.is_empty() { "-" } else { c.as_str() })
            .collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

/// One cohort per row: the overall summary of each round in the report, then
/// one row per category. Means print with two decimals; cohorts with no
/// sessions print no means.
pub fn render_report(report: &AggregateReport, style: ReportStyle) -> String {
    let round_label = match report.per_round.keys().collect::<Vec<_>>().as_slice() {
        [only] => only.to_string(),
        _ => "all".to_string(),
    };
    let mut rows = Vec::new();
    for (round, m) in &report.per_round {
        let (pc, sa) = means(m);
        rows.push(vec!["overall".into(), round.to_string(), m.n.to_string(), pc, sa]);
    }
    for (category, m) in &report.per_category {
        let (pc, sa) = means(m);
        rows.push(vec![
            category.to_string(),
            round_label.clone(),
            m.n.to_string(),
            pc,
            sa,
        ]);
    }
    match style {
        ReportStyle::Csv => {
            let mut all = vec![["cohort", "round", "n", "pc", "sa"].map(String::from).to_vec()];
            all.extend(rows);
            csv_text(&all)
        }
        ReportStyle::Markdown => {
            let header = ["Cohort", "Round", "n", "PC", "SA"].map(String::from);
            let mut out = markdown_table(&header, &rows);
            out.push_str(&format!(
                "\nScores binarized at {}.",
                two(report.binarize_threshold)
            ));
            if report.excluded > 0 {
                out.push_str(&format!(
                    " Excluded {} session(s) without round {round_label}.",
                    report.excluded
                ));
            }
            out.push('\n');
            out
        }
    }
}

/// Overall PC and SA across rounds: one column per round, one row per metric.
pub fn render_round_table(reports: &[AggregateReport], style: ReportStyle) -> String {
    let merged: BTreeMap<u32, MetricSummary> = reports
        .iter()
        .flat_map(|r| r.per_round.iter().map(|(k, v)| (*k, *v)))
        .collect();
    let mut pc_row = vec!["PC".to_string()];
    let mut sa_row = vec!["SA".to_string()];
    for m in merged.values() {
        let (pc, sa) = means(m);
        pc_row.push(pc);
        sa_row.push(sa);
    }
    let rows = [pc_row, sa_row];
    match style {
        ReportStyle::Csv => {
            let mut header = vec!["metric".to_string()];
            header.extend(merged.keys().map(|r| format!("round_{r}")));
            let mut all = vec![header];
            all.extend(rows);
            csv_text(&all)
        }
        ReportStyle::Markdown => {
            let mut header = vec!["Metric".to_string()];
            header.extend(merged.keys().map(|r| format!("Round {r}")));
            markdown_table(&header, &rows)
        }
    }
}
