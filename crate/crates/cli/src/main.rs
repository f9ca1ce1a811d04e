//! `kron-attn`: operator benchmarks, architecture audits, model checks and
//! a toy training run. Exit status is 0 when every check passes, 1 when a
//! tolerance check fails and 2 on usage errors.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kron_attn::attention::AttentionKind;
use kron_attn::checks::{grad_sweep, verify_theorem, TheoremConfig};
use kron_attn::nn::{toy_train, ArchSpec, ToyTrainConfig};
use kron_attn::profiler::{audit_network, compare_operators, targets, Target, Timing, MIN_REPEATS};

use report::{Check, Format, Report, Section};

#[derive(Parser)]
#[command(name = "kron-attn", version, about = "Kronecker attention operators: costs, audits and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare Attn, Attn+Pool, KAO_KV and KAO_QKV over a set of input sizes.
    BenchOps(BenchOps),
    /// Parameter and MAdd audit of a network description.
    AuditArch(AuditArch),
    /// Trace identity and Monte Carlo moments of the matrix-variate model.
    VerifyTheorem(VerifyTheorem),
    /// Central-difference checks of every hand-written backward pass.
    Gradcheck(Gradcheck),
    /// Train the reduced network on synthetic patterns and report the loss curve.
    Toytrain(Toytrain),
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TargetOverrides {
    /// Override a reference tolerance, e.g. `madd.kao_kv.14=0.2`.
    #[arg(long = "tolerance", value_name = "ID=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, f64)>,
}

#[derive(Args)]
struct BenchOps {
    /// Comma-separated sizes: `14` for 14x14 or `HxW`.
    #[arg(long, default_value = "14,28,56", value_parser = parse_shapes)]
    shapes: Shapes,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    channels: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    /// Timed repetitions per cell (median reported).
    #[arg(long, default_value_t = MIN_REPEATS, value_parser = parse_repeats)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Analytic columns only; skips the wall-clock measurements.
    #[arg(long)]
    no_timing: bool,
    #[command(flatten)]
    targets: TargetOverrides,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct AuditArch {
    /// Architecture file, or one of the bundled tables: kanet, mobilenet_v2, toy_kanet.
    #[arg(long, default_value = "kanet")]
    arch: String,
    #[arg(long, default_value = "kao_kv", value_parser = parse_kind)]
    attention: AttentionKind,
    /// Number of classes for a `k`-wide head.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    classes: u64,
    /// Omit the per-layer table.
    #[arg(long)]
    summary_only: bool,
    #[command(flatten)]
    targets: TargetOverrides,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct VerifyTheorem {
    /// Square sizes for the trace identity: comma-separated values or ranges like `2-16`.
    #[arg(long, default_value = "2-16", value_parser = parse_sizes)]
    sizes: Sizes,
    /// Random distributions per size.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    draws: u64,
    /// Monte Carlo sample count.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(2..))]
    samples: u64,
    /// `HxW` of the Monte Carlo distribution.
    #[arg(long, default_value = "3x4", value_parser = parse_shape)]
    shape: (usize, usize),
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    trace_tol: f64,
    /// Largest accepted |z| of a sample mean.
    #[arg(long, default_value_t = 3.0)]
    z_limit: f64,
    /// Largest accepted relative error of a sample variance.
    #[arg(long, default_value_t = 0.05)]
    var_tol: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Gradcheck {
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    threshold: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Toytrain {
    #[arg(long, default_value = "kao_kv", value_parser = parse_kind)]
    attention: AttentionKind,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(2..))]
    classes: u64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest accepted final/initial loss ratio.
    #[arg(long, default_value_t = 0.5)]
    max_ratio: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, PartialEq)]
struct Shapes(Vec<(usize, usize)>);

#[derive(Debug, Clone, PartialEq)]
struct Sizes(Vec<usize>);

fn parse_kind(s: &str) -> Result<AttentionKind, String> {
    s.parse().map_err(|e: kron_attn::Error| e.to_string())
}

fn parse_dim(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("`{s}` is not a positive integer")),
        Ok(n) => Ok(n),
    }
}

fn parse_repeats(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if n < MIN_REPEATS {
        return Err(format!("at least {MIN_REPEATS} repeats are required"));
    }
    Ok(n)
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse_dim(h)?, parse_dim(w)?)),
        None => parse_dim(s).map(|n| (n, n)),
    }
}

fn parse_shapes(s: &str) -> Result<Shapes, String> {
    s.split(',').map(parse_shape).collect::<Result<_, _>>().map(Shapes)
}

fn parse_sizes(s: &str) -> Result<Sizes, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (parse_dim(a)?, parse_dim(b)?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_dim(part)?),
        }
    }
    Ok(Sizes(out))
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (id, v) = s.split_once('=').ok_or_else(|| format!("expected ID=VALUE, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("tolerance `{v}` must be a non-negative number"));
    }
    Ok((id.trim().to_string(), v))
}

/// A usage error: reported on stderr, exit status 2.
struct Usage(String);

impl<E: std::fmt::Display> From<E> for Usage {
    fn from(e: E) -> Self {
        Usage(e.to_string())
    }
}

type CmdResult = Result<Report, Usage>;

/// The reference table with overrides applied; unknown ids are rejected.
fn reference_targets(overrides: &TargetOverrides) -> Result<Vec<Target>, Usage> {
    let mut all = targets();
    for (id, tol) in &overrides.overrides {
        let t = all
            .iter_mut()
            .find(|t| &t.id == id)
            .ok_or_else(|| Usage(format!("unknown target id `{id}`")))?;
        t.tolerance = *tol;
    }
    Ok(all)
}

fn bench_ops(a: &BenchOps) -> CmdResult {
    let timing = (!a.no_timing).then_some(Timing {
        repeats: a.repeats,
        seed: a.seed,
    });
    let (c, batch) = (a.channels as usize, a.batch as usize);
    let reports = compare_operators(&a.shapes.0, c, batch, timing)?;
    let refs = reference_targets(&a.targets)?;
    let find = |id: String| refs.iter().find(|t| t.id == id);

    let mut rep = Report::new("bench-ops", Some(a.seed));
    let shapes: Vec<String> = a.shapes.0.iter().map(|(h, w)| format!("{h}x{w}")).collect();
    rep.param("shapes", shapes.join(","));
    rep.param("channels", c);
    rep.param("batch", batch);
    rep.param("timing", timing.map_or("off".to_string(), |t| format!("median of {} runs", t.repeats)));
    let mut table = Section::new(
        "operators",
        &["operator", "input", "madd", "madd_saving_pct", "memory_bytes", "memory_saving_pct", "wall_ms", "speedup"],
    );
    for r in &reports {
        let row = kron_attn::profiler::TableRow::from(r);
        table.push(vec![
            row.operator,
            row.input,
            row.madd.to_string(),
            row.madd_saving_pct,
            row.memory_bytes.to_string(),
            row.memory_saving_pct,
            row.wall_ms,
            row.speedup,
        ]);
        // reference figures exist for square inputs at c = 8 only
        if c != 8 || r.shape.h != r.shape.w {
            continue;
        }
        let (k, size) = (r.operator.as_str(), r.shape.h);
        if let Some(t) = find(format!("madd.{k}.{size}")) {
            rep.checks.push(Check::from(&t.check(r.madd as f64)));
        }
        if let Some(s) = r.savings.filter(|_| r.operator != AttentionKind::Regular) {
            if let Some(t) = find(format!("madd_saving.{k}.{size}")) {
                rep.checks.push(Check::from(&t.check(s.madd_pct)));
            }
            if let Some(t) = find(format!("memory_saving.{k}.{size}")) {
                rep.checks.push(Check::from(&t.check(s.memory_pct)));
            }
        }
    }
    rep.sections.push(table);
    Ok(rep)
}

fn load_arch(arch: &str) -> Result<(ArchSpec, String), Usage> {
    let path = Path::new(arch);
    if path.exists() {
        let spec = ArchSpec::from_path(path)?;
        let key = spec.name.to_ascii_lowercase();
        return Ok((spec, key));
    }
    let spec = match arch {
        "kanet" => ArchSpec::kanet(AttentionKind::KaoKv),
        "mobilenet_v2" => ArchSpec::mobilenet_v2(),
        "toy_kanet" => ArchSpec::toy_kanet(AttentionKind::KaoKv, 4),
        _ => return Err(Usage(format!("`{arch}` is neither a file nor a bundled architecture"))),
    };
    Ok((spec, arch.to_string()))
}

fn audit_arch(a: &AuditArch) -> CmdResult {
    let (spec, key) = load_arch(&a.arch)?;
    let spec = spec.with_attention(a.attention).with_classes(a.classes as usize);
    let audit = audit_network(&spec)?;
    let refs = reference_targets(&a.targets)?;

    let mut rep = Report::new("audit-arch", None);
    rep.param("arch", &a.arch);
    rep.param("attention", a.attention.as_str());
    rep.param("classes", a.classes);
    if !a.summary_only {
        let mut layers = Section::new("layers", &["layer", "kind", "params", "madd"]);
        for l in &audit.layers {
            layers.push(vec![l.name.clone(), l.kind.clone(), l.params.to_string(), l.madd.to_string()]);
        }
        rep.sections.push(layers);
    }
    let mut totals = Section::new("totals", &["network", "attention", "params", "params_with_coeff_norm", "madd"]);
    totals.push(vec![
        audit.name.clone(),
        audit.attention.as_str().to_string(),
        audit.params.to_string(),
        audit.params_with_coeff_norm().to_string(),
        audit.madd.to_string(),
    ]);
    rep.sections.push(totals);

    // Reference figures are keyed by table name and, where the table has
    // attention modules, by attention kind. They assume 1000 classes.
    if a.classes == 1000 {
        let subjects = [format!("{key}:{}", a.attention.as_str()), key];
        for t in refs.iter().filter(|t| subjects.contains(&t.subject)) {
            let value = match t.metric.as_str() {
                "params" => audit.params,
                "madd" => audit.madd,
                _ => continue,
            };
            rep.checks.push(Check::from(&t.check(value as f64)));
        }
    }
    Ok(rep)
}

fn verify(a: &VerifyTheorem) -> CmdResult {
    let cfg = TheoremConfig {
        sizes: a.sizes.0.clone(),
        draws: a.draws as usize,
        samples: a.samples as usize,
        mc_shape: a.shape,
        seed: a.seed,
    };
    let r = verify_theorem(&cfg)?;
    let mut rep = Report::new("verify-theorem", Some(a.seed));
    rep.param("draws per size", a.draws);
    rep.param("samples", a.samples);
    rep.param("distribution", format!("{}x{}", a.shape.0, a.shape.1));
    let mut trace = Section::new("trace identity (largest discrepancy per size)", &["size", "lhs", "rhs", "abs_diff"]);
    for t in &r.trace {
        trace.push(vec![t.size.to_string(), format!("{:.12}", t.lhs), format!("{:.12}", t.rhs), format!("{:.3e}", t.max_abs_diff)]);
    }
    let mut moments = Section::new(
        "moments",
        &["quantity", "index", "model_mean", "sample_mean", "z", "model_var", "sample_var", "var_rel_err"],
    );
    for m in &r.moments {
        moments.push(vec![
            m.quantity.to_string(),
            m.index.to_string(),
            format!("{:.6}", m.model_mean),
            format!("{:.6}", m.sample_mean),
            format!("{:.3}", m.z),
            format!("{:.6}", m.model_var),
            format!("{:.6}", m.sample_var),
            format!("{:.4}", m.var_rel_err),
        ]);
    }
    rep.sections.push(trace);
    rep.sections.push(moments);
    rep.checks.push(Check::below("max |lhs - rhs|", r.max_trace_diff(), a.trace_tol));
    rep.checks.push(Check::below("max |z| of means", r.worst_z(), a.z_limit));
    rep.checks.push(Check::below("max variance relative error", r.worst_var_rel_err(), a.var_tol));
    Ok(rep)
}

fn gradcheck(a: &Gradcheck) -> CmdResult {
    let seeds: Vec<u64> = (0..a.seeds).map(|i| a.seed.wrapping_add(i)).collect();
    let summary = grad_sweep(&seeds, a.epsilon, a.threshold)?;
    let mut rep = Report::new("gradcheck", Some(a.seed));
    rep.param("seeds", a.seeds);
    rep.param("epsilon", a.epsilon);
    let mut table = Section::new("ops", &["op", "checks", "max_rel_error"]);
    for s in &summary {
        table.push(vec![s.name.clone(), s.checks.to_string(), format!("{:.3e}", s.max_rel_error)]);
        rep.checks.push(Check::below(&s.name, s.max_rel_error, a.threshold));
    }
    rep.sections.push(table);
    Ok(rep)
}

fn toytrain(a: &Toytrain) -> CmdResult {
    let cfg = ToyTrainConfig {
        attention: a.attention,
        classes: a.classes as usize,
        samples: a.samples as usize,
        steps: a.steps as usize,
        lr: a.lr,
        momentum: a.momentum,
        seed: a.seed,
    };
    let r = toy_train(&cfg)?;
    let mut rep = Report::new("toytrain", Some(a.seed));
    rep.param("attention", a.attention.as_str());
    rep.param("samples", a.samples);
    rep.param("classes", a.classes);
    rep.param("optimizer", format!("sgd lr {} momentum {}", a.lr, a.momentum));
    let mut curve = Section::new("loss", &["step", "loss"]);
    for (step, loss) in r.losses.iter().enumerate() {
        curve.push(vec![step.to_string(), format!("{loss:.8}")]);
    }
    rep.sections.push(curve);
    let ratio = r.final_loss() / r.initial_loss();
    let mut check = Check::below("final / initial loss", ratio, a.max_ratio);
    check.detail = format!("initial {:.6}, final {:.6}", r.initial_loss(), r.final_loss());
    rep.checks.push(check);
    Ok(rep)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, output) = match &cli.command {
        Command::BenchOps(a) => (bench_ops(a), &a.output),
        Command::AuditArch(a) => (audit_arch(a), &a.output),
        Command::VerifyTheorem(a) => (verify(a), &a.output),
        Command::Gradcheck(a) => (gradcheck(a), &a.output),
        Command::Toytrain(a) => (toytrain(a), &a.output),
    };
    let rep = match result {
        Ok(rep) => rep,
        Err(Usage(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let text = rep.render(output.format);
    match &output.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    let failed: Vec<&Check> = rep.checks.iter().filter(|c| !c.passed).collect();
    eprintln!("{}: {}/{} checks passed", rep.command, rep.checks.len() - failed.len(), rep.checks.len());
    for c in &failed {
        eprintln!("  FAIL {} = {} (limit {}) {}", c.name, c.value, c.limit, c.detail);
    }
    if rep.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
