//! Inference-latency measurement: unmeasured warm-up forwards followed by
//! timed forwards on a fixed random input, monotonic clock, milliseconds.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Real, Tensor};

/// Latency summary; field set is the report schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub warmup_iters: usize,
    pub measure_iters: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub batch: usize,
    /// `[C, F, T]`.
    pub input_shape: [usize; 3],
    /// 32 or 64.
    pub precision: u32,
}

/// Runs `warmup` unmeasured and `iters` measured invocations of `f`,
/// returning per-iteration times in milliseconds.
pub fn bench_loop(warmup: usize, iters: usize, mut f: impl FnMut()) -> Result<Vec<f64>> {
    if iters < 1 {
        return Err(Error::Validation("bench needs at least one iteration".into()));
    }
    for _ in 0..warmup {
        f();
    }
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        f();
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(times)
}

fn summarize(times: &[f64]) -> (f64, f64, f64, f64) {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    let min = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), min, max)
}

/// Benchmarks eval-mode forwards of the model on one fixed random input.
pub fn bench_inference<T: Real>(
    model: &Model<T>,
    warmup: usize,
    iters: usize,
    batch: usize,
    seed: u64,
) -> Result<BenchReport> {
    if batch < 1 {
        return Err(Error::Validation("batch must be >= 1".into()));
    }
    let cfg = &model.cfg;
    let shape = [batch, cfg.in_channels, cfg.in_freq, cfg.seq_len];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::from_f64(rng.gen_range(0.0..1.0)).unwrap())
        .collect();
    let input = Tensor::from_vec(&shape, data)?;
    let times = bench_loop(warmup, iters, || {
        model.logits(&input).expect("benchmark forward failed");
    })?;
    let (mean_ms, std_ms, min_ms, max_ms) = summarize(&times);
    Ok(BenchReport {
        warmup_iters: warmup,
        measure_iters: iters,
        mean_ms,
        std_ms,
        min_ms,
        max_ms,
        batch,
        input_shape: [cfg.in_channels, cfg.in_freq, cfg.seq_len],
        precision: T::BITS,
    })
}
