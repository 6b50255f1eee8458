//! Wall-clock measurement of repeated forward passes: warmup iterations run
//! first and are discarded, then per-iteration times are collected from a
//! monotonic clock and summarized as mean / median / 95th percentile / fps.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Barrier;
use std::time::Instant;

use crate::error::{HitError, Result};

#[derive(Debug, Clone, Copy)]
pub struct LatencyReport {
    pub iters: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Throughput implied by the mean: `1000 / mean_ms`.
    pub fps: f64,
}

/// Nearest-rank percentile of an ascending slice, `q` in (0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Time `iters` calls of `f` after `warmup` uncounted calls.
pub fn measure_latency(mut f: impl FnMut() -> Result<()>, iters: usize, warmup: usize) -> Result<LatencyReport> {
    if iters == 0 {
        return Err(HitError::Config("latency measurement needs iters >= 1".into()));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        f()?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = samples.iter().sum::<f64>() / iters as f64;
    samples.sort_by(|a, b| a.partial_cmp(b).expect("durations are finite"));
    Ok(LatencyReport {
        iters,
        mean_ms,
        p50_ms: percentile(&samples, 0.50),
        p95_ms: percentile(&samples, 0.95),
        fps: 1000.0 / mean_ms,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ThroughputReport {
    pub threads: usize,
    pub iters_per_thread: usize,
    pub elapsed_ms: f64,
    /// Aggregate completed iterations per second across all threads.
    pub fps: f64,
}

/// Run `threads` workers concurrently, each performing `warmup` discarded
/// calls and then `iters` timed calls of `f`. All workers pass a barrier
/// together after warmup so the timed window measures steady-state aggregate
/// throughput of a shared read-only workload.
pub fn measure_throughput<F>(
    f: F,
    iters: usize,
    warmup: usize,
    threads: usize,
) -> Result<ThroughputReport>
where
    F: Fn() -> Result<()> + Sync,
{
    if iters == 0 || threads == 0 {
        return Err(HitError::Config(
            "throughput measurement needs iters >= 1 and threads >= 1".into(),
        ));
    }
    let barrier = Barrier::new(threads);
    let failures = AtomicU64::new(0);
    let mut elapsed_ms = 0.0f64;
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(threads);
        for _ in 0..threads {
            handles.push(scope.spawn(|| {
                for _ in 0..warmup {
                    if f().is_err() {
                        failures.fetch_add(1, Ordering::Relaxed);
                        return 0.0;
                    }
                }
                barrier.wait();
                let t0 = Instant::now();
                for _ in 0..iters {
                    if f().is_err() {
                        failures.fetch_add(1, Ordering::Relaxed);
                        return 0.0;
                    }
                }
                t0.elapsed().as_secs_f64() * 1e3
            }));
        }
        for h in handles {
            let ms = h.join().expect("worker thread panicked");
            elapsed_ms = elapsed_ms.max(ms);
        }
    });
    if failures.load(Ordering::Relaxed) > 0 {
        return Err(HitError::Config("worker iteration failed".into()));
    }
    Ok(ThroughputReport {
        threads,
        iters_per_thread: iters,
        elapsed_ms,
        fps: (threads * iters) as f64 / (elapsed_ms / 1e3),
    })
}
