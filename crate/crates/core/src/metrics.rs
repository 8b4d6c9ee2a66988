//! Delay and throughput statistics over evaluation episodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queueing::{episode_average_delay, Env, RemainingPolicy};

/// Nearest-rank percentile: the `ceil(q/100 * n)`-th smallest value.
pub fn percentile_delay(delays: &[f64], q: f64) -> Result<f64> {
    if delays.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Domain(format!("percentile {q} outside [0, 100]")));
    }
    let mut sorted = delays.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Sample mean and (n-1) standard deviation; std is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// What one finished episode contributes to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Delivered-packet delays (ms) per pair.
    pub completed: Vec<Vec<f64>>,
    pub remaining: Vec<usize>,
    pub arrivals: Vec<usize>,
    /// Mean achieved rate per pair over the episode (bits/s).
    pub mean_rate_bps: Vec<f64>,
    pub episode_return: f64,
}

impl EpisodeResult {
    /// Snapshot a finished environment; `rate_sums` holds per-pair sums of per-slot rates.
    pub fn from_env(env: &Env, rate_sums: &[f64]) -> Self {
        let slots = env.rewards().len().max(1) as f64;
        let b = env.buffers();
        Self {
            completed: b.completed.clone(),
            remaining: b.backlog(),
            arrivals: b.total_arrivals.clone(),
            mean_rate_bps: rate_sums.iter().map(|r| r / slots).collect(),
            episode_return: env.rewards().iter().sum(),
        }
    }

    pub fn transmitted(&self) -> usize {
        self.completed.iter().map(Vec::len).sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.completed.iter().zip(&self.remaining).zip(&self.arrivals).all(|((c, r), a)| c.len() + r == *a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean over episodes of the pair-mean of per-pair mean delays (ms).
    pub average_delay_ms: f64,
    /// Mean over all delivered packets, pooled across pairs and episodes (ms).
    pub pooled_mean_delay_ms: f64,
    pub p5_delay_ms: f64,
    pub p95_delay_ms: f64,
    pub transmitted: usize,
    pub remaining: usize,
    pub arrivals: usize,
    pub per_pair_rate_bps: Vec<f64>,
    pub episode_returns: Vec<f64>,
    pub episodes: usize,
}

impl MetricsReport {
    pub fn from_episodes(episodes: &[EpisodeResult]) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut objective = Vec::with_capacity(episodes.len());
        let mut pooled = Vec::new();
        for e in episodes {
            objective.push(episode_average_delay(&e.completed, &[], RemainingPolicy::Exclude)?);
            pooled.extend(e.completed.iter().flatten().copied());
        }
        let pairs = episodes[0].mean_rate_bps.len();
        let per_pair_rate_bps = (0..pairs)
            .map(|i| {
                episodes.iter().map(|e| e.mean_rate_bps.get(i).copied().unwrap_or(0.0)).sum::<f64>()
                    / episodes.len() as f64
            })
            .collect();
        Ok(Self {
            average_delay_ms: mean_std(&objective).0,
            pooled_mean_delay_ms: pooled.iter().sum::<f64>() / pooled.len() as f64,
            p5_delay_ms: percentile_delay(&pooled, 5.0)?,
            p95_delay_ms: percentile_delay(&pooled, 95.0)?,
            transmitted: episodes.iter().map(EpisodeResult::transmitted).sum(),
            remaining: episodes.iter().flat_map(|e| &e.remaining).sum(),
            arrivals: episodes.iter().flat_map(|e| &e.arrivals).sum(),
            per_pair_rate_bps,
            episode_returns: episodes.iter().map(|e| e.episode_return).collect(),
            episodes: episodes.len(),
        })
    }
}

/// Mean and std of a statistic across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

impl std::fmt::Display for Spread {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}
