//! Operator comparison tables in CSV and markdown.

use serde::Serialize;

use crate::attention::AttentionKind;
use crate::error::Result;

use super::bench::benchmark;
use super::cost::{CostReport, OpShape};

/// One line of the operator comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub operator: String,
    pub input: String,
    pub madd: u64,
    pub madd_saving_pct: String,
    pub memory_bytes: u64,
    pub memory_saving_pct: String,
    pub wall_ms: String,
    pub speedup: String,
}

impl From<&CostReport> for TableRow {
    fn from(r: &CostReport) -> Self {
        let s = r.savings;
        Self {
            operator: r.operator.label().to_string(),
            input: r.shape.to_string(),
            madd: r.madd,
            madd_saving_pct: s.map_or(String::new(), |s| format!("{:.2}", s.madd_pct)),
            memory_bytes: r.memory_bytes,
            memory_saving_pct: s.map_or(String::new(), |s| format!("{:.2}", s.memory_pct)),
            wall_ms: r.wall_ms.map_or(String::new(), |t| format!("{t:.3}")),
            speedup: s.and_then(|s| s.speedup).map_or(String::new(), |x| format!("{x:.1}")),
        }
    }
}

/// Timing options for [`compare_operators`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub repeats: usize,
    pub seed: u64,
}

/// All four operators at every `(h, w)`, savings relative to regular
/// attention at the same shape.
pub fn compare_operators(
    sizes: &[(usize, usize)],
    channels: usize,
    batch: usize,
    timing: Option<Timing>,
) -> Result<Vec<CostReport>> {
    let mut out = Vec::with_capacity(sizes.len() * AttentionKind::ALL.len());
    for &(h, w) in sizes {
        let shape = OpShape::new(batch, h, w, channels);
        let reports = AttentionKind::ALL
            .iter()
            .map(|&k| match timing {
                Some(t) => benchmark(k, shape, t.repeats, t.seed),
                None => Ok(CostReport::analytic(k, shape)),
            })
            .collect::<Result<Vec<_>>>()?;
        let base = reports[0].clone();
        out.extend(reports.into_iter().map(|r| r.with_savings_vs(&base)));
    }
    Ok(out)
}

pub fn to_csv(reports: &[CostReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(TableRow::from(r))?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_markdown(reports: &[CostReport]) -> String {
    let mut s = String::from(
        "| Input | Operator | MAdd | Cost Saving | Memory | Memory Saving | Time | Speedup |\n\
         |---|---|---:|---:|---:|---:|---:|---:|\n",
    );
    for r in reports {
        let row = TableRow::from(r);
        let pct = |v: &str| if v.is_empty() { "-".to_string() } else { format!("{v}%") };
        s.push_str(&format!(
            "| {} | {} | {:.2}m | {} | {:.1}MB | {} | {} | {} |\n",
            row.input,
            row.operator,
            row.madd as f64 / 1e6,
            pct(&row.madd_saving_pct),
            row.memory_bytes as f64 / 1e6,
            pct(&row.memory_saving_pct),
            if row.wall_ms.is_empty() { "-".into() } else { format!("{}ms", row.wall_ms) },
            if row.speedup.is_empty() { "-".into() } else { format!("{}x", row.speedup) },
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_row_per_cell() {
        let r = compare_operators(&[(14, 14), (28, 28)], 8, 8, None).unwrap();
        let csv = to_csv(&r).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(
            lines[0],
            "operator,input,madd,madd_saving_pct,memory_bytes,memory_saving_pct,wall_ms,speedup"
        );
        assert!(lines[1].starts_with("Attn,8x14^2x8,"));
        assert_eq!(to_markdown(&r).lines().count(), 10);
    }
}
