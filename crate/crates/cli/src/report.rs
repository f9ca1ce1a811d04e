//! Plain-table reports rendered as CSV or markdown.

use std::fmt::Write as _;

use clap::ValueEnum;
use kron_attn::profiler::{TargetCheck, ToleranceKind, MODEL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Markdown,
}

pub struct Section {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Section {
    pub fn new(title: impl Into<String>, header: &[&str]) -> Self {
        Self {
            title: title.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// A pass/fail line. `value`, `limit` and `detail` are free text so that
/// target checks and ad-hoc thresholds share one table.
pub struct Check {
    pub name: String,
    pub value: String,
    pub limit: String,
    pub detail: String,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value: format!("{value:.6e}"),
            limit: format!("< {limit}"),
            detail: String::new(),
            passed: value < limit,
        }
    }
}

impl From<&TargetCheck> for Check {
    fn from(c: &TargetCheck) -> Self {
        Self {
            name: c.id.clone(),
            value: format!("{:.4}", c.value),
            limit: match c.tolerance_kind {
                ToleranceKind::Relative => format!("{} ± {}%", c.target, (c.tolerance * 1e8).round() / 1e6),
                ToleranceKind::Points => format!("{} ± {} pp", c.target, c.tolerance),
            },
            detail: match (c.within_tolerance, c.within_rounding) {
                (true, _) => format!("deviation {:.4}", c.deviation),
                (false, true) => format!("deviation {:.4}; rounds to the printed figure", c.deviation),
                (false, false) => format!("deviation {:.4}", c.deviation),
            },
            passed: c.passed,
        }
    }
}

pub struct Report {
    pub command: &'static str,
    /// `None` for commands whose output does not depend on any randomness.
    pub seed: Option<u64>,
    pub params: Vec<(String, String)>,
    pub sections: Vec<Section>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(command: &'static str, seed: Option<u64>) -> Self {
        Self {
            command,
            seed,
            params: Vec::new(),
            sections: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.params.push((key.to_string(), value.to_string()));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("kron-attn {}", self.command),
            format!("seed: {}", self.seed.map_or("none (deterministic)".to_string(), |s| s.to_string())),
            format!("model: {MODEL_VERSION}"),
        ];
        lines.extend(self.params.iter().map(|(k, v)| format!("{k}: {v}")));
        lines
    }

    fn check_section(&self) -> Option<Section> {
        if self.checks.is_empty() {
            return None;
        }
        let mut s = Section::new("checks", &["check", "value", "limit", "detail", "status"]);
        for c in &self.checks {
            s.push(vec![
                c.name.clone(),
                c.value.clone(),
                c.limit.clone(),
                c.detail.clone(),
                if c.passed { "PASS" } else { "FAIL" }.to_string(),
            ]);
        }
        Some(s)
    }

    pub fn render(&self, format: Format) -> String {
        let checks = self.check_section();
        let sections = self.sections.iter().chain(checks.as_ref());
        let mut out = String::new();
        match format {
            Format::Csv => {
                for line in self.header_lines() {
                    let _ = writeln!(out, "# {line}");
                }
                for s in sections {
                    let _ = writeln!(out, "\n# {}", s.title);
                    let mut w = csv::Writer::from_writer(Vec::new());
                    w.write_record(&s.header).expect("write to memory");
                    for r in &s.rows {
                        w.write_record(r).expect("write to memory");
                    }
                    out.push_str(&String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8"));
                }
            }
            Format::Markdown => {
                let mut lines = self.header_lines().into_iter();
                let _ = writeln!(out, "# {}", lines.next().unwrap_or_default());
                out.push('\n');
                for line in lines {
                    let _ = writeln!(out, "- {line}");
                }
                for s in sections {
                    let _ = writeln!(out, "\n## {}\n", s.title);
                    let _ = writeln!(out, "| {} |", s.header.join(" | "));
                    let _ = writeln!(out, "|{}", "---|".repeat(s.header.len()));
                    for r in &s.rows {
                        let cells: Vec<String> = r.iter().map(|c| c.replace('|', "\\|")).collect();
                        let _ = writeln!(out, "| {} |", cells.join(" | "));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("demo", Some(3));
        r.param("shapes", "8x8");
        let mut s = Section::new("table", &["a", "b"]);
        s.push(vec!["1".into(), "x,y".into()]);
        r.sections.push(s);
        r.checks.push(Check::below("err", 0.5, 1.0));
        r
    }

    #[test]
    fn csv_has_commented_header_and_quoted_cells() {
        let text = sample().render(Format::Csv);
        assert!(text.starts_with("# kron-attn demo\n# seed: 3\n# model: "));
        assert!(text.contains("\n# table\na,b\n1,\"x,y\"\n"));
        assert!(text.contains("err,5.000000e-1,< 1,,PASS"));
    }

    #[test]
    fn markdown_tables() {
        let text = sample().render(Format::Markdown);
        assert!(text.contains("## table\n\n| a | b |\n|---|---|\n| 1 | x,y |\n"));
        assert!(sample().passed());
    }
}
