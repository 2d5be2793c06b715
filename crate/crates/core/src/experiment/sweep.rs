//! Learning-rate sweep with repeats.
//!
//! Phase 1 trains every learning rate in the grid with `explore_repeats`
//! seeds and picks the rate with the highest mean test accuracy. Phase 2
//! trains `confirm_repeats` further seeds at the winner. The summary is the
//! mean and sample standard deviation over every run at the winner.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::network::{build_network, NetworkConfig};
use crate::experiment::train::{train, RunRecord, RunStatus, TrainOptions};
use crate::mnist::Dataset;

/// Inclusive log-spaced learning-rate grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl LrGrid {
    /// 19 points from 1e-4 to 1e-2.
    pub const DEFAULT: LrGrid = LrGrid {
        lo: 1e-4,
        hi: 1e-2,
        count: 19,
    };

    pub fn points(&self) -> Result<Vec<f64>> {
        log_grid(self.lo, self.hi, self.count)
    }
}

impl FromStr for LrGrid {
    type Err = Error;

    /// Parses `lo:hi:count`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("learning-rate grid must be lo:hi:count, got {s:?}"));
        let [lo, hi, count] = parts.as_slice() else {
            return Err(bad());
        };
        let grid = LrGrid {
            lo: lo.trim().parse().map_err(|_| bad())?,
            hi: hi.trim().parse().map_err(|_| bad())?,
            count: count.trim().parse().map_err(|_| bad())?,
        };
        grid.points()?;
        Ok(grid)
    }
}

/// `count` points spaced evenly in log10 between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
        return Err(Error::Config(format!(
            "invalid learning-rate grid {lo}:{hi}:{count}"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    let step = (b - a) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| match i {
            0 => lo,
            i if i == count - 1 => hi,
            i => 10f64.powf(a + step * i as f64),
        })
        .collect())
}

/// Mean and sample standard deviation (ddof = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Undefined for fewer than two values.
    pub std: Option<f64>,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Some(Summary { mean, std, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub lrs: Vec<f64>,
    pub explore_repeats: usize,
    pub confirm_repeats: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Run seeds are `base_seed, base_seed + 1, …`.
    pub base_seed: u64,
    pub workers: usize,
}

impl SweepPlan {
    /// 19-point grid, 5 + 10 repeats, 20 epochs, batch 128.
    pub fn standard() -> Self {
        SweepPlan {
            lrs: LrGrid::DEFAULT.points().expect("valid default grid"),
            explore_repeats: 5,
            confirm_repeats: 10,
            epochs: 20,
            batch_size: 128,
            base_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Every run, sorted by `(lr, seed)`.
    pub records: Vec<RunRecord>,
    /// Phase-1 mean accuracy per learning rate, grid order.
    pub lr_means: Vec<(f64, f64)>,
    pub winner: Option<f64>,
    pub summary: Option<Summary>,
    /// Set when every phase-1 run diverged; no winner is chosen.
    pub degenerate: bool,
}

/// Trains one `(config, lr, seed)` job. The seed drives both initialization
/// and shuffling.
pub fn run_one(
    config: &NetworkConfig,
    lr: f64,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<RunRecord> {
    let cfg = NetworkConfig {
        seed,
        ..config.clone()
    };
    let mut net = build_network(&cfg)?;
    train(&mut net, train_set, test_set, &TrainOptions::new(lr, epochs, batch_size, seed))
}

fn run_jobs(
    config: &NetworkConfig,
    jobs: &[(f64, u64)],
    plan: &SweepPlan,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut records: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(lr, seed)| run_one(config, lr, seed, plan.epochs, plan.batch_size, train_set, test_set))
            .collect::<Result<Vec<_>>>()
    })?;
    records.sort_by(|a, b| a.lr.total_cmp(&b.lr).then(a.seed.cmp(&b.seed)));
    Ok(records)
}

pub fn sweep(
    config: &NetworkConfig,
    plan: &SweepPlan,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<SweepResult> {
    if plan.lrs.is_empty() {
        return Err(Error::Config("learning-rate grid is empty".into()));
    }
    if plan.explore_repeats == 0 {
        return Err(Error::Config("need at least one exploration repeat".into()));
    }
    config.validate()?;

    let explore_seeds = plan.base_seed..plan.base_seed + plan.explore_repeats as u64;
    let jobs: Vec<(f64, u64)> = plan
        .lrs
        .iter()
        .flat_map(|&lr| explore_seeds.clone().map(move |s| (lr, s)))
        .collect();
    let mut records = run_jobs(config, &jobs, plan, train_set, test_set)?;

    let lr_means: Vec<(f64, f64)> = plan
        .lrs
        .iter()
        .map(|&lr| {
            let accs: Vec<f64> = records
                .iter()
                .filter(|r| r.lr.to_bits() == lr.to_bits())
                .map(|r| r.test_accuracy)
                .collect();
            (lr, summarize(&accs).map_or(f64::NAN, |s| s.mean))
        })
        .collect();

    let degenerate = records.iter().all(|r| r.status == RunStatus::Diverged);
    if degenerate {
        log::warn!("{}: every run in the grid diverged", config.label());
        return Ok(SweepResult {
            records,
            lr_means,
            winner: None,
            summary: None,
            degenerate,
        });
    }

    // First maximum in grid order wins ties.
    let mut best: Option<(f64, f64)> = None;
    for &(lr, m) in &lr_means {
        if !m.is_nan() && best.is_none_or(|(_, bm)| m > bm) {
            best = Some((lr, m));
        }
    }
    let winner = best.map(|(lr, _)| lr);

    if let Some(lr) = winner {
        if plan.confirm_repeats > 0 {
            let start = plan.base_seed + plan.explore_repeats as u64;
            let more: Vec<(f64, u64)> = (start..start + plan.confirm_repeats as u64)
                .map(|s| (lr, s))
                .collect();
            records.extend(run_jobs(config, &more, plan, train_set, test_set)?);
            records.sort_by(|a, b| a.lr.total_cmp(&b.lr).then(a.seed.cmp(&b.seed)));
        }
    }
    let summary = winner.and_then(|lr| {
        let accs: Vec<f64> = records
            .iter()
            .filter(|r| r.lr.to_bits() == lr.to_bits())
            .map(|r| r.test_accuracy)
            .collect();
        summarize(&accs)
    });
    Ok(SweepResult {
        records,
        lr_means,
        winner,
        summary,
        degenerate: false,
    })
}
