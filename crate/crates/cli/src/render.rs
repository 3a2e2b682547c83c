//! Plain-text tables.

use vpd_core::relstore::Value;
use vpd_core::RowSet;

/// Left-aligned columns separated by two spaces; absent cells print `-`.
pub fn table(headers: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(headers);
    out.push('\n');
    out.push_str(&line(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
    ));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn cells(row: &[Value]) -> Vec<String> {
    row.iter().map(|v| v.to_string()).collect()
}

pub fn rowset(rows: &RowSet) -> String {
    let body: Vec<Vec<String>> = rows.rows.iter().map(|r| cells(r)).collect();
    table(&rows.schema, &body)
}

/// JSON cells: strings, or null when absent.
pub fn json_rows(rows: &RowSet) -> Vec<Vec<Option<String>>> {
    rows.rows
        .iter()
        .map(|r| r.iter().map(|v| v.as_str().map(str::to_string)).collect())
        .collect()
}
