use std::fmt::Write;

use super::{RankTable, Stats};

/// Aligned plain-text rendering of a rank table.
pub fn rank_text_table(table: &RankTable) -> String {
    let rows: Vec<[String; 4]> = table
        .entries
        .iter()
        .map(|e| [e.rank.to_string(), e.model_id.clone(), format!("{:.6}", e.mean), format!("{:.6}", e.std)])
        .collect();
    aligned(&["rank", "model", "mean", "std"], &rows, &[1])
}

/// CSV with one row per model, for plotting rank charts.
pub fn rank_csv(table: &RankTable) -> String {
    let mut out = String::from("model,rank,mean,std\n");
    for e in &table.entries {
        writeln!(out, "{},{},{:.16e},{:.16e}", csv_field(&e.model_id), e.rank, e.mean, e.std).unwrap();
    }
    out
}

/// Aligned table of named statistics (parameter counts or timings):
/// median, mean and std columns plus min/max.
pub fn stats_text_table(rows: &[(String, Stats)], unit: &str, decimals: usize) -> String {
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|(name, s)| {
            [
                name.clone(),
                format!("{:.*}", decimals, s.median),
                format!("{:.*}", decimals, s.mean),
                format!("{:.*}", decimals, s.std),
                format!("{:.*}", decimals, s.min),
                format!("{:.*}", decimals, s.max),
            ]
        })
        .collect();
    let header = [
        "model".to_string(),
        with_unit("median", unit),
        with_unit("mean", unit),
        with_unit("std", unit),
        with_unit("min", unit),
        with_unit("max", unit),
    ];
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    aligned(&header, &body, &[0])
}

/// Columns listed in `left` are left-aligned, the rest right-aligned.
fn aligned<const N: usize>(header: &[&str], rows: &[[String; N]], left: &[usize]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if left.contains(&i) { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn with_unit(name: &str, unit: &str) -> String {
    if unit.is_empty() {
        name.to_string()
    } else {
        format!("{name} ({unit})")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::RankEntry;

    fn table() -> RankTable {
        RankTable {
            entries: vec![
                RankEntry { model_id: "GG MoE".into(), rank: 1, mean: 0.9, std: 0.01 },
                RankEntry { model_id: "MLP".into(), rank: 2, mean: 0.8, std: 0.0 },
            ],
        }
    }

    #[test]
    fn text_table_is_aligned() {
        let text = rank_text_table(&table());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("rank  model"));
        assert_eq!(lines[1].find("0.900000"), lines[2].find("0.800000"));
    }

    #[test]
    fn csv_rows() {
        let csv = rank_csv(&table());
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("GG MoE,1,"));
    }
}
