//! Reference figures with their tolerances, shipped as `data/targets.csv`.

use serde::Deserialize;

use crate::error::{Error, Result};

pub const TARGETS_CSV: &str = include_str!("../../data/targets.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceKind {
    /// Fraction of the target value.
    Relative,
    /// Absolute difference in percentage points.
    Points,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Target {
    pub id: String,
    pub metric: String,
    pub subject: String,
    pub size: usize,
    pub target: f64,
    pub tolerance: f64,
    pub tolerance_kind: ToleranceKind,
    /// Step of the printed figure.
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetCheck {
    pub id: String,
    pub value: f64,
    pub target: f64,
    /// `|value − target|`, relative to the target for relative tolerances.
    pub deviation: f64,
    pub tolerance: f64,
    pub tolerance_kind: ToleranceKind,
    /// Within the stated tolerance alone.
    pub within_tolerance: bool,
    /// Rounds to the printed figure; informational only.
    pub within_rounding: bool,
    pub passed: bool,
}

impl Target {
    pub fn check(&self, value: f64) -> TargetCheck {
        let diff = (value - self.target).abs();
        let deviation = match self.tolerance_kind {
            ToleranceKind::Relative => diff / self.target.abs(),
            ToleranceKind::Points => diff,
        };
        let within_tolerance = deviation <= self.tolerance;
        let within_rounding = diff <= self.resolution / 2.0;
        TargetCheck {
            id: self.id.clone(),
            value,
            target: self.target,
            deviation,
            tolerance: self.tolerance,
            tolerance_kind: self.tolerance_kind,
            within_tolerance,
            within_rounding,
            passed: within_tolerance,
        }
    }
}

pub fn parse_targets(text: &str) -> Result<Vec<Target>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// The bundled targets.
pub fn targets() -> Vec<Target> {
    parse_targets(TARGETS_CSV).expect("bundled targets parse")
}

pub fn target(id: &str) -> Option<Target> {
    targets().into_iter().find(|t| t.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_targets_load() {
        let all = targets();
        assert_eq!(all.len(), 40);
        let t = target("madd.kao_kv.28").unwrap();
        assert_eq!(t.target, 710_000.0);
        assert_eq!(t.tolerance_kind, ToleranceKind::Relative);
    }

    #[test]
    fn rounding_and_tolerance() {
        let t = target("madd.kao_qkv.14").unwrap();
        let c = t.check(14_336.0);
        assert!(!c.within_tolerance && c.within_rounding && !c.passed);
        assert!(!t.check(16_000.0).passed);
        let p = target("memory_saving.kao_kv.56").unwrap();
        assert!(p.check(96.3).passed);
        assert!(!p.check(90.0).passed);
    }
}
