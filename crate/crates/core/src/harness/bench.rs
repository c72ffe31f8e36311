//! Scaling benchmark: wall time of offline training and online rollout as
//! the grid resolution, rolling horizon and horizon grow.
//!
//! Each point is timed once to warm up and then three more times; the median
//! is reported. Calls shorter than [`MIN_SAMPLE_MS`] are repeated inside one
//! sample and the per-call mean is recorded, which keeps millisecond-scale
//! online runs above timer and scheduler noise. Slopes come from least
//! squares on `ln time` against `ln size`.

use serde::{Deserialize, Serialize};

use crate::baa::BaaConfig;
use crate::clock::Stopwatch;
use crate::error::{Error, Result};
use crate::grid::build_uniform_grid;
use crate::offline::train;
use crate::problem::Problem;
use crate::rollout::{run_online, RolloutConfig};

use super::config::BenchSpec;

pub const TIMED_REPEATS: usize = 3;
/// Shortest wall time of one timed sample.
pub const MIN_SAMPLE_MS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub x: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: String,
    pub points: Vec<BenchPoint>,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub workers: usize,
    pub quantization_levels: usize,
    pub rolling_horizon: usize,
    pub horizon: usize,
    pub offline_vs_levels: Sweep,
    pub offline_vs_rolling_horizon: Sweep,
    pub online_vs_horizon: Sweep,
    /// Offline time of the truncated-horizon training at the configured scale.
    pub rollout_offline: BenchPoint,
    /// Offline time of full-horizon training at the configured scale.
    pub baseline_offline: BenchPoint,
}

/// A repeatable unit of work timed by the benchmark.
pub type Job<'a> = Box<dyn FnMut() -> Result<()> + 'a>;

/// Warms up every job once, then takes [`TIMED_REPEATS`] samples of each in
/// round-robin order; returns per-call sample times and their median per job.
///
/// Interleaving spreads slow phases of a shared machine across all sweep
/// points instead of letting them land on whichever point ran at the time.
pub fn interleaved_timing(jobs: &mut [Job<'_>]) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut calls = Vec::with_capacity(jobs.len());
    for job in jobs.iter_mut() {
        let warmup = Stopwatch::start();
        job()?;
        let once = warmup.elapsed_ms();
        calls.push(if once >= MIN_SAMPLE_MS {
            1
        } else {
            ((MIN_SAMPLE_MS / once.max(1e-3)).ceil() as usize).clamp(1, 100_000)
        });
    }
    let mut samples = vec![Vec::with_capacity(TIMED_REPEATS); jobs.len()];
    for _ in 0..TIMED_REPEATS {
        for (k, job) in jobs.iter_mut().enumerate() {
            let clock = Stopwatch::start();
            for _ in 0..calls[k] {
                job()?;
            }
            samples[k].push(clock.elapsed_ms() / calls[k] as f64);
        }
    }
    Ok(samples
        .into_iter()
        .map(|s| {
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            (s, sorted[TIMED_REPEATS / 2])
        })
        .collect())
}

/// [`interleaved_timing`] for a single job.
pub fn median_timing(f: impl FnMut() -> Result<()>) -> Result<(Vec<f64>, f64)> {
    let mut jobs: Vec<Job<'_>> = vec![Box::new(f)];
    Ok(interleaved_timing(&mut jobs)?.remove(0))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::BenchFit(format!(
            "a slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::BenchFit("sizes and timings must be positive".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::BenchFit("all sweep sizes are equal".into()));
    }
    Ok(sxy / sxx)
}

fn sweep<'a>(variable: &str, xs: &[usize], mut job: impl FnMut(usize) -> Result<Job<'a>>) -> Result<Sweep> {
    if xs.len() < 3 {
        return Err(Error::BenchFit(format!(
            "sweep over {variable} needs at least 3 values, got {}",
            xs.len()
        )));
    }
    let mut jobs = xs.iter().map(|&x| job(x)).collect::<Result<Vec<_>>>()?;
    let points: Vec<BenchPoint> = interleaved_timing(&mut jobs)?
        .into_iter()
        .zip(xs)
        .map(|((samples_ms, median_ms), &x)| BenchPoint {
            x,
            samples_ms,
            median_ms,
        })
        .collect();
    let fit: Vec<(f64, f64)> = points.iter().map(|p| (p.x as f64, p.median_ms)).collect();
    Ok(Sweep {
        variable: variable.into(),
        slope: loglog_slope(&fit)?,
        points,
    })
}

fn training_job<'a>(problem: &'a Problem, levels: usize, n_s: usize, solver: &'a BaaConfig, workers: usize) -> Result<Job<'a>> {
    let grid = build_uniform_grid(levels, problem.states(), problem.controls())?;
    Ok(Box::new(move || train(problem, &grid, n_s, solver, workers).map(drop)))
}

/// Runs all three sweeps plus the rollout-versus-baseline offline comparison.
///
/// `problem` fixes the horizon of the offline sweeps; the online sweep
/// re-instantiates it at each horizon in `spec.horizons`.
pub fn run_bench(
    problem: &Problem,
    levels: usize,
    rolling_horizon: usize,
    spec: &BenchSpec,
    cfg: &RolloutConfig,
) -> Result<BenchReport> {
    let solver = &cfg.solver;
    let workers = cfg.workers;
    let n = problem.horizon();
    if let Some(bad) = spec.rolling_horizons.iter().find(|&&ns| ns > n) {
        return Err(Error::Precondition(format!(
            "bench rolling horizon {bad} exceeds the horizon {n}"
        )));
    }
    if let Some(bad) = spec.horizons.iter().find(|&&h| h < rolling_horizon) {
        return Err(Error::Precondition(format!(
            "bench horizon {bad} is shorter than the rolling horizon {rolling_horizon}"
        )));
    }
    let offline_vs_levels = sweep("quantization_levels", &spec.levels, |lv| {
        training_job(problem, lv, rolling_horizon, solver, workers)
    })?;
    let offline_vs_rolling_horizon = sweep("rolling_horizon", &spec.rolling_horizons, |ns| {
        training_job(problem, levels, ns, solver, workers)
    })?;
    let online_vs_horizon = sweep("horizon", &spec.horizons, |h| {
        let p = problem.with_horizon(h)?;
        let grid = build_uniform_grid(levels, p.states(), p.controls())?;
        let artifact = train(&p, &grid, rolling_horizon, solver, workers)?.artifact;
        Ok(Box::new(move || run_online(&p, &artifact, cfg).map(drop)) as Job<'_>)
    })?;
    let mut pair = vec![
        training_job(problem, levels, rolling_horizon, solver, workers)?,
        training_job(problem, levels, n, solver, workers)?,
    ];
    let mut timed = interleaved_timing(&mut pair)?.into_iter();
    let mut point = |x: usize| {
        let (samples_ms, median_ms) = timed.next().expect("two jobs were timed");
        BenchPoint {
            x,
            samples_ms,
            median_ms,
        }
    };
    let rollout_offline = point(rolling_horizon);
    let baseline_offline = point(n);
    Ok(BenchReport {
        workers,
        quantization_levels: levels,
        rolling_horizon,
        horizon: n,
        offline_vs_levels,
        offline_vs_rolling_horizon,
        online_vs_horizon,
        rollout_offline,
        baseline_offline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|x: &f64| (*x, 3.0 * x.powi(2))).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_is_a_fit_error() {
        assert!(matches!(loglog_slope(&[(1.0, 1.0), (2.0, 2.0)]), Err(Error::BenchFit(_))));
        let r = sweep("n", &[1, 2], |_| Ok(Box::new(|| Ok(())) as Job<'_>));
        assert!(matches!(r, Err(Error::BenchFit(_))));
    }

    #[test]
    fn median_uses_three_timed_runs_after_warmup() {
        let mut calls = 0;
        let (samples, median) = median_timing(|| {
            calls += 1;
            std::thread::sleep(std::time::Duration::from_millis(60));
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 4);
        assert_eq!(samples.len(), 3);
        assert!(median >= 0.0);
    }
}
