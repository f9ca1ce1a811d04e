//! Wall-clock timing of attention operators.

use std::hint::black_box;
use std::sync::Mutex;
use std::time::Instant;

use crate::attention::{apply, AttentionKind, AttnConfig};
use crate::error::{precondition, Result};
use crate::rng::{seeded, uniform_matrix, uniform_tensor};

use super::cost::{CostReport, OpShape};

pub const WARMUPS: usize = 3;
pub const MIN_REPEATS: usize = 10;

/// Serializes timing runs within a process.
static BENCH_LOCK: Mutex<()> = Mutex::new(());

/// Median of `repeats` timings of `f` in milliseconds, after `warmups`
/// untimed calls.
pub fn median_ms<T>(repeats: usize, warmups: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    if repeats == 0 {
        return precondition("median_ms", "repeats must be positive");
    }
    let _guard = BENCH_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    for _ in 0..warmups {
        black_box(f()?);
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        black_box(f()?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}

/// Times one operator over a seeded batch on the calling thread. One timed
/// run evaluates every sample of the batch.
pub fn benchmark(kind: AttentionKind, shape: OpShape, repeats: usize, seed: u64) -> Result<CostReport> {
    if repeats < MIN_REPEATS {
        return precondition("benchmark", format!("repeats {repeats} below {MIN_REPEATS}"));
    }
    let mut rng = seeded(seed);
    let inputs: Vec<_> = (0..shape.batch)
        .map(|_| uniform_tensor(&mut rng, shape.h, shape.w, shape.c, -1.0, 1.0))
        .collect();
    let cfg = AttnConfig::with_value_transform(uniform_matrix(&mut rng, shape.c, shape.c, -1.0, 1.0));
    let wall = median_ms(repeats, WARMUPS, || {
        inputs.iter().map(|t| apply(kind, t, &cfg)).collect::<Result<Vec<_>>>()
    })?;
    Ok(CostReport {
        wall_ms: Some(wall),
        ..CostReport::analytic(kind, shape)
    })
}
