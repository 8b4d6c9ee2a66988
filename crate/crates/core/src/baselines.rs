//! Classical power-control schemes run on the same environment as the agent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{Error, Result};
use crate::units::db_to_linear;

/// Largest pair count the exhaustive search accepts.
pub const EXHAUSTIVE_MAX_PAIRS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    MaxPower,
    RandomPower,
    Wmmse,
    Itlinq,
    ExhaustiveOracle,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::MaxPower,
        BaselineKind::RandomPower,
        BaselineKind::Wmmse,
        BaselineKind::Itlinq,
        BaselineKind::ExhaustiveOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::MaxPower => "max_power",
            BaselineKind::RandomPower => "random_power",
            BaselineKind::Wmmse => "wmmse",
            BaselineKind::Itlinq => "itlinq",
            BaselineKind::ExhaustiveOracle => "exhaustive_oracle",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    pub wmmse_max_iters: usize,
    pub wmmse_tol: f64,
    /// Also restart from every single-dominant-link point and keep the best.
    pub wmmse_restarts: bool,
    pub itlinq_margin_db: f64,
    pub itlinq_eta: f64,
    pub exhaustive_grid: usize,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            wmmse_max_iters: 100,
            wmmse_tol: 1e-6,
            wmmse_restarts: true,
            itlinq_margin_db: 25.0,
            itlinq_eta: 0.7,
            exhaustive_grid: 41,
        }
    }
}

pub fn max_power(pairs: usize, p_max: f64) -> Vec<f64> {
    vec![p_max; pairs]
}

pub fn random_power<R: Rng + ?Sized>(pairs: usize, p_max: f64, rng: &mut R) -> Vec<f64> {
    (0..pairs).map(|_| rng.random::<f64>() * p_max).collect()
}

/// Sum of per-link spectral efficiencies (bits/s/Hz).
pub fn sum_rate(chan: &ChannelState, powers: &[f64], noise: f64) -> f64 {
    chan.sinr(powers, noise).iter().map(|s| (1.0 + s).log2()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseResult {
    pub powers: Vec<f64>,
    pub iterations: usize,
    /// False when `tol` was not met within the iteration budget.
    pub converged: bool,
    /// Sum rate at the start and after every iteration.
    pub sum_rates: Vec<f64>,
}

impl WmmseResult {
    /// True when no iteration lowered the sum rate by more than `slack` (relative).
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.sum_rates.windows(2).all(|w| w[1] >= w[0] - slack * w[0].abs().max(1.0))
    }
}

/// Unit-weight WMMSE started from full power.
pub fn wmmse(chan: &ChannelState, p_max: f64, noise: f64, max_iters: usize, tol: f64) -> WmmseResult {
    wmmse_from(chan, &vec![p_max; chan.pairs()], p_max, noise, max_iters, tol)
}

/// Unit-weight WMMSE from the given starting powers. A link started at zero
/// power stays off.
pub fn wmmse_from(
    chan: &ChannelState,
    init: &[f64],
    p_max: f64,
    noise: f64,
    max_iters: usize,
    tol: f64,
) -> WmmseResult {
    let m = chan.pairs();
    // Amplitude gain from Tx i to Rx j.
    let h = chan.gain_sq.mapv(f64::sqrt);
    let g = &chan.gain_sq;
    let v_max = p_max.sqrt();
    let mut v: Vec<f64> = init.iter().map(|p| p.clamp(0.0, p_max).sqrt()).collect();
    let mut u = vec![0.0; m];
    let mut w = vec![0.0; m];
    let powers = |v: &[f64]| v.iter().map(|x| (x * x).min(p_max)).collect::<Vec<_>>();
    let mut sum_rates = vec![sum_rate(chan, &powers(&v), noise)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        for i in 0..m {
            let rx: f64 = noise + (0..m).map(|j| g[[j, i]] * v[j] * v[j]).sum::<f64>();
            u[i] = h[[i, i]] * v[i] / rx;
            w[i] = 1.0 / (1.0 - u[i] * h[[i, i]] * v[i]);
        }
        let mut change = 0.0f64;
        for i in 0..m {
            let denom: f64 = (0..m).map(|j| w[j] * u[j] * u[j] * g[[i, j]]).sum();
            let next = if denom > 0.0 { (w[i] * u[i] * h[[i, i]] / denom).clamp(0.0, v_max) } else { v_max };
            change = change.max((next - v[i]).abs());
            v[i] = next;
        }
        sum_rates.push(sum_rate(chan, &powers(&v), noise));
        if change < tol {
            converged = true;
            break;
        }
    }
    WmmseResult { powers: powers(&v), iterations, converged, sum_rates }
}

/// Share of full power given to the non-dominant links of a restart.
pub const RESTART_FLOOR: f64 = 1e-3;

/// Best (by sum rate) of WMMSE runs from full power and from the `M`
/// starts where one link is at full power and the others at a small floor.
pub fn wmmse_restarts(chan: &ChannelState, p_max: f64, noise: f64, max_iters: usize, tol: f64) -> WmmseResult {
    let mut best: Option<(f64, WmmseResult)> = None;
    for r in wmmse_restart_runs(chan, p_max, noise, max_iters, tol) {
        let rate = sum_rate(chan, &r.powers, noise);
        if best.as_ref().is_none_or(|(b, _)| rate > *b) {
            best = Some((rate, r));
        }
    }
    best.expect("at least the full-power run").1
}

/// Every run behind [`wmmse_restarts`], full power first.
pub fn wmmse_restart_runs(chan: &ChannelState, p_max: f64, noise: f64, max_iters: usize, tol: f64) -> Vec<WmmseResult> {
    let m = chan.pairs();
    let mut runs = vec![wmmse(chan, p_max, noise, max_iters, tol)];
    for i in 0..m {
        let mut init = vec![p_max * RESTART_FLOOR; m];
        init[i] = p_max;
        runs.push(wmmse_from(chan, &init, p_max, noise, max_iters, tol));
    }
    runs
}

/// Binary scheduling: links in descending SNR order are switched on when
/// their SNR clears `margin * (max INR to or from active links)^eta`.
pub fn itlinq(chan: &ChannelState, p_max: f64, noise: f64, margin_db: f64, eta: f64) -> Vec<f64> {
    let m = chan.pairs();
    let g = &chan.gain_sq;
    let margin = db_to_linear(margin_db);
    let snr: Vec<f64> = (0..m).map(|i| p_max * g[[i, i]] / noise).collect();
    let mut order: Vec<usize> = (0..m).collect();
    // Stable sort keeps the original index order on ties.
    order.sort_by(|&a, &b| snr[b].total_cmp(&snr[a]));
    let mut active: Vec<usize> = Vec::with_capacity(m);
    for &i in &order {
        let worst_inr =
            active.iter().map(|&j| (p_max * g[[j, i]] / noise).max(p_max * g[[i, j]] / noise)).fold(0.0f64, f64::max);
        if snr[i] >= margin * worst_inr.powf(eta) {
            active.push(i);
        }
    }
    let mut p = vec![0.0; m];
    for i in active {
        p[i] = p_max;
    }
    p
}

/// Grid search over `{0, P/(n-1), ..., P}^M` maximizing the sum rate.
pub fn exhaustive_oracle(chan: &ChannelState, p_max: f64, noise: f64, grid: usize) -> Result<Vec<f64>> {
    let m = chan.pairs();
    if m > EXHAUSTIVE_MAX_PAIRS {
        return Err(Error::BudgetExceeded(m));
    }
    let n = grid.max(2);
    let level = |k: usize| p_max * k as f64 / (n - 1) as f64;
    let mut best = (f64::NEG_INFINITY, vec![0.0; m]);
    let mut idx = vec![0usize; m];
    loop {
        let p: Vec<f64> = idx.iter().map(|&k| level(k)).collect();
        let r = sum_rate(chan, &p, noise);
        if r > best.0 {
            best = (r, p);
        }
        // Odometer increment.
        let mut d = 0;
        while d < m {
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == m {
            break;
        }
    }
    Ok(best.1)
}

/// A baseline bound to its parameters, producing powers slot by slot.
#[derive(Debug, Clone)]
pub struct BaselinePolicy<R> {
    pub kind: BaselineKind,
    pub params: BaselineParams,
    pub rng: R,
}

impl<R: Rng> BaselinePolicy<R> {
    pub fn new(kind: BaselineKind, params: BaselineParams, rng: R) -> Self {
        Self { kind, params, rng }
    }

    pub fn powers(&mut self, chan: &ChannelState, p_max: f64, noise: f64) -> Result<Vec<f64>> {
        let m = chan.pairs();
        let p = &self.params;
        Ok(match self.kind {
            BaselineKind::MaxPower => max_power(m, p_max),
            BaselineKind::RandomPower => random_power(m, p_max, &mut self.rng),
            BaselineKind::Wmmse if p.wmmse_restarts => {
                wmmse_restarts(chan, p_max, noise, p.wmmse_max_iters, p.wmmse_tol).powers
            }
            BaselineKind::Wmmse => wmmse(chan, p_max, noise, p.wmmse_max_iters, p.wmmse_tol).powers,
            BaselineKind::Itlinq => itlinq(chan, p_max, noise, p.itlinq_margin_db, p.itlinq_eta),
            BaselineKind::ExhaustiveOracle => exhaustive_oracle(chan, p_max, noise, p.exhaustive_grid)?,
        })
    }
}
