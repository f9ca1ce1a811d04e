//! Stage tables describing a network, and their text format.
//!
//! One record per stage, pipe-delimited, with a header line:
//!
//! ```text
//! input | operator | r | c | n | s
//! 224²×3 | Conv2D 3×3 | - | 32 | 1 | 2
//! 7²×1280 | AvgPool + FC | - | k | 1 | -
//! ```
//!
//! Lines starting with `#` are comments. Input sizes accept `224²×3`,
//! `224^2x3` or `224x224x3`; `-` marks an unused field and `k` in the
//! channel column stands for the class count.

use std::fmt;

use crate::attention::AttentionKind;
use crate::error::{Error, Result};

use super::module::{ModuleKind, ModuleSpec};

pub const KANET_ARCH: &str = include_str!("../../data/kanet.arch");
pub const MOBILENET_V2_ARCH: &str = include_str!("../../data/mobilenet_v2.arch");
pub const TOY_KANET_ARCH: &str = include_str!("../../data/toy_kanet.arch");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Conv3x3,
    Conv1x1,
    Module(ModuleKind),
    AvgPoolFc,
}

impl Operator {
    pub fn parse(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| if c == '×' { 'x' } else { c.to_ascii_lowercase() })
            .collect();
        match norm.as_str() {
            "conv2d3x3" => Ok(Operator::Conv3x3),
            "conv2d1x1" => Ok(Operator::Conv1x1),
            "avgpool+fc" => Ok(Operator::AvgPoolFc),
            "basemodule" => Ok(Operator::Module(ModuleKind::Base)),
            "baseskipmodule" => Ok(Operator::Module(ModuleKind::BaseSkip)),
            "attnmodule" => Ok(Operator::Module(ModuleKind::Attn)),
            "attnskipmodule" => Ok(Operator::Module(ModuleKind::AttnSkip)),
            _ => Err(Error::Unsupported(format!("operator {s:?}"))),
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operator::Conv3x3 => f.write_str("Conv2D 3×3"),
            Operator::Conv1x1 => f.write_str("Conv2D 1×1"),
            Operator::Module(k) => write!(f, "{k}"),
            Operator::AvgPoolFc => f.write_str("AvgPool + FC"),
        }
    }
}

/// Output width of a stage: a fixed count or the task's class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Width {
    Fixed(usize),
    Classes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    /// `(h, w, c)` of the stage input.
    pub input: (usize, usize, usize),
    pub operator: Operator,
    pub r: Option<usize>,
    pub c: Width,
    pub n: usize,
    pub s: Option<usize>,
}

/// A stage table plus the choices left open by it.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub stages: Vec<StageSpec>,
    pub classes: usize,
    /// Operator used on the parallel path of attention modules.
    pub attention: AttentionKind,
}

/// One concrete layer group after expanding stage repeats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSpec {
    Conv3x3 { cin: usize, cout: usize, stride: usize },
    Conv1x1 { cin: usize, cout: usize },
    Module(ModuleSpec),
    Head { cin: usize, classes: usize },
}

fn parse_size(s: &str) -> Option<(usize, usize, usize)> {
    let norm = s.replace('²', "^2").replace('×', "x");
    let parts: Vec<&str> = norm.split('x').map(str::trim).collect();
    match parts.as_slice() {
        [hw, c] => {
            let side = hw.strip_suffix("^2")?.trim().parse().ok()?;
            Some((side, side, c.parse().ok()?))
        }
        [h, w, c] => Some((h.parse().ok()?, w.parse().ok()?, c.parse().ok()?)),
        _ => None,
    }
}

fn parse_opt(field: &str, line: usize, what: &str) -> Result<Option<usize>> {
    if field == "-" {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::Parse {
        line,
        detail: format!("{what}: expected a count or '-', got {field:?}"),
    })
}

fn invalid(stage: usize, detail: impl Into<String>) -> Error {
    Error::Validation {
        stage,
        detail: detail.into(),
    }
}

impl ArchSpec {
    /// Parses the stage table. Class count defaults to 1000 and the
    /// attention operator to KAO_KV.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'|')
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let expected = ["input", "operator", "r", "c", "n", "s"];
        if headers.iter().map(str::to_ascii_lowercase).ne(expected.iter().map(|s| s.to_string())) {
            return Err(Error::Parse {
                line: 1,
                detail: format!("header must be `{}`", expected.join(" | ")),
            });
        }
        let mut stages = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let perr = |detail: String| Error::Parse { line, detail };
            let input = parse_size(&rec[0]).ok_or_else(|| perr(format!("bad input size {:?}", &rec[0])))?;
            let operator = Operator::parse(&rec[1]).map_err(|e| perr(e.to_string()))?;
            let r = parse_opt(&rec[2], line, "r")?;
            let c = match &rec[3] {
                "k" => Width::Classes,
                f => Width::Fixed(f.parse().map_err(|_| perr(format!("bad channel count {f:?}")))?),
            };
            let n = parse_opt(&rec[4], line, "n")?.ok_or_else(|| perr("n is required".into()))?;
            let s = parse_opt(&rec[5], line, "s")?;
            stages.push(StageSpec {
                input,
                operator,
                r,
                c,
                n,
                s,
            });
        }
        Ok(Self {
            name: name.to_string(),
            stages,
            classes: 1000,
            attention: AttentionKind::KaoKv,
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("arch");
        Self::parse(name, &text)
    }

    pub fn kanet(attention: AttentionKind) -> Self {
        Self::parse("KANet", KANET_ARCH)
            .expect("bundled table parses")
            .with_attention(attention)
    }

    pub fn mobilenet_v2() -> Self {
        Self::parse("MobileNetV2", MOBILENET_V2_ARCH).expect("bundled table parses")
    }

    pub fn toy_kanet(attention: AttentionKind, classes: usize) -> Self {
        Self::parse("ToyKANet", TOY_KANET_ARCH)
            .expect("bundled table parses")
            .with_attention(attention)
            .with_classes(classes)
    }

    pub fn with_attention(mut self, attention: AttentionKind) -> Self {
        self.attention = attention;
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    /// Checks stage fields and spatial chaining. Errors name the 1-based
    /// offending stage (0 for an empty table).
    pub fn validate(&self) -> Result<()> {
        self.blocks().map(|_| ())
    }

    /// Expands repeats into concrete blocks: the first repeat of a stage
    /// uses its stride, the rest stride 1.
    pub fn blocks(&self) -> Result<Vec<BlockSpec>> {
        if self.stages.is_empty() {
            return Err(invalid(0, "architecture has no stages"));
        }
        if self.classes == 0 {
            return Err(invalid(0, "class count must be ≥ 1"));
        }
        let mut cur = self.stages[0].input;
        if cur.0 == 0 || cur.1 == 0 || cur.2 == 0 {
            return Err(invalid(1, "input size must be positive"));
        }
        let last = self.stages.len();
        let mut out = Vec::new();
        for (idx, st) in self.stages.iter().enumerate() {
            let stage = idx + 1;
            if st.input != cur {
                return Err(invalid(
                    stage,
                    format!(
                        "declared input {}x{}x{} but previous stage produces {}x{}x{}",
                        st.input.0, st.input.1, st.input.2, cur.0, cur.1, cur.2
                    ),
                ));
            }
            if st.n == 0 {
                return Err(invalid(stage, "repeat count n must be ≥ 1"));
            }
            let width = match (st.c, st.operator) {
                (Width::Classes, Operator::AvgPoolFc) => self.classes,
                (Width::Classes, op) => return Err(invalid(stage, format!("{op} cannot output k channels"))),
                (Width::Fixed(0), _) => return Err(invalid(stage, "output channels must be ≥ 1")),
                (Width::Fixed(c), _) => c,
            };
            let stride = st.s.unwrap_or(1);
            if stride != 1 && stride != 2 {
                return Err(invalid(stage, format!("stride {stride} not in {{1, 2}}")));
            }
            for rep in 0..st.n {
                let s = if rep == 0 { stride } else { 1 };
                let (h, w, c) = cur;
                match st.operator {
                    Operator::Conv3x3 => {
                        out.push(BlockSpec::Conv3x3 { cin: c, cout: width, stride: s });
                        cur = (h.div_ceil(s), w.div_ceil(s), width);
                    }
                    Operator::Conv1x1 => {
                        if s != 1 {
                            return Err(invalid(stage, "1x1 convolutions use stride 1"));
                        }
                        out.push(BlockSpec::Conv1x1 { cin: c, cout: width });
                        cur = (h, w, width);
                    }
                    Operator::Module(kind) => {
                        let r = st.r.ok_or_else(|| invalid(stage, "modules need an expansion factor r"))?;
                        let spec = ModuleSpec::new(kind, r, c, width, s, self.attention)
                            .map_err(|e| invalid(stage, e.to_string()))?;
                        out.push(BlockSpec::Module(spec));
                        cur = (h.div_ceil(s), w.div_ceil(s), width);
                    }
                    Operator::AvgPoolFc => {
                        if stage != last || st.n != 1 {
                            return Err(invalid(stage, "AvgPool + FC must be the single final stage"));
                        }
                        out.push(BlockSpec::Head { cin: c, classes: width });
                    }
                }
            }
        }
        if !matches!(out.last(), Some(BlockSpec::Head { .. })) {
            return Err(invalid(last, "network must end with AvgPool + FC"));
        }
        Ok(out)
    }

    /// Spatial size `(h, w)` at the input of every stage followed by the
    /// size entering the head.
    pub fn spatial_chain(&self) -> Result<Vec<usize>> {
        let mut sizes = vec![self.stages.first().map_or(0, |s| s.input.0)];
        for b in self.blocks()? {
            let prev = *sizes.last().unwrap();
            let next = match b {
                BlockSpec::Conv3x3 { stride, .. } => prev.div_ceil(stride),
                BlockSpec::Module(m) => m.out_size(prev),
                _ => prev,
            };
            sizes.push(next);
        }
        Ok(sizes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_counts() {
        let arch = ArchSpec::kanet(AttentionKind::KaoKv);
        assert_eq!(arch.stages.len(), 13);
        let blocks = arch.blocks().unwrap();
        let modules = blocks.iter().filter(|b| matches!(b, BlockSpec::Module(_))).count();
        assert_eq!(modules, 17);
        assert_eq!(blocks[0], BlockSpec::Conv3x3 { cin: 3, cout: 32, stride: 2 });
        assert_eq!(blocks.last(), Some(&BlockSpec::Head { cin: 1280, classes: 1000 }));
    }

    #[test]
    fn size_formats() {
        assert_eq!(parse_size("224²×3"), Some((224, 224, 3)));
        assert_eq!(parse_size("224^2x3"), Some((224, 224, 3)));
        assert_eq!(parse_size("16x8x4"), Some((16, 8, 4)));
        assert_eq!(parse_size("16"), None);
    }

    #[test]
    fn empty_arch_is_invalid() {
        let arch = ArchSpec::parse("empty", "input | operator | r | c | n | s\n").unwrap();
        assert!(matches!(arch.validate(), Err(Error::Validation { stage: 0, .. })));
    }

    #[test]
    fn broken_chain_names_stage() {
        let text = KANET_ARCH.replace("56²×24 | BaseSkipModule", "28²×24 | BaseSkipModule");
        let arch = ArchSpec::parse("broken", &text).unwrap();
        match arch.validate() {
            Err(Error::Validation { stage, detail }) => {
                assert_eq!(stage, 4, "{detail}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_operator_reports_line() {
        let text = "input | operator | r | c | n | s\n8²×3 | Conv5x5 | - | 4 | 1 | 1\n";
        assert!(matches!(ArchSpec::parse("x", text), Err(Error::Parse { line: 2, .. })));
    }
}
