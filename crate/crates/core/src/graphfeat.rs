//! Maps the raw state (channel, delays, backlog, served counts) to GNN inputs:
//! a 4-column node-feature matrix and a normalized edge-weight matrix.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{domain, Error, Result};
use crate::queueing::Observation;

/// Node feature columns.
pub const NODE_FEATURES: usize = 4;
pub const COL_PF: usize = 0;
pub const COL_DELAY: usize = 1;
pub const COL_BACKLOG: usize = 2;
pub const COL_SERVED: usize = 3;

/// GNN input for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    /// M x 4: PF ratio, normalized head-of-line delay, normalized backlog,
    /// normalized served count.
    pub nodes: Array2<f64>,
    /// M x M, entry (i, j) weights the interference link Tx i -> Rx j.
    pub edges: Array2<f64>,
}

impl GraphSample {
    pub fn new(nodes: Array2<f64>, edges: Array2<f64>) -> Result<Self> {
        let m = nodes.nrows();
        if edges.dim() != (m, m) {
            return Err(Error::ShapeMismatch(format!("edge matrix {:?} does not match {m} nodes", edges.dim())));
        }
        Ok(Self { nodes, edges })
    }

    pub fn pairs(&self) -> usize {
        self.nodes.nrows()
    }

    /// Relabel nodes: new node k is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.pairs();
        Self {
            nodes: Array2::from_shape_fn(self.nodes.dim(), |(k, f)| self.nodes[[perm[k], f]]),
            edges: Array2::from_shape_fn((m, m), |(a, b)| self.edges[[perm[a], perm[b]]]),
        }
    }
}

/// Exponential moving average of achieved spectral efficiency (bits/s/Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTracker {
    pub avg_rate: Vec<f64>,
    pub epsilon: f64,
}

impl RateTracker {
    pub fn new(initial: Vec<f64>, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(domain(format!("averaging weight {epsilon} outside [0, 1]")));
        }
        Ok(Self { avg_rate: initial, epsilon })
    }

    pub fn update(&mut self, achieved: &[f64]) {
        for (avg, &g) in self.avg_rate.iter_mut().zip(achieved) {
            *avg = (1.0 - self.epsilon) * *avg + self.epsilon * g;
        }
    }
}

/// Full-power spectral efficiency estimate per link (no bandwidth factor).
pub fn estimated_rate(chan: &ChannelState, p_max: f64, noise: f64) -> Vec<f64> {
    let full = vec![p_max; chan.pairs()];
    chan.sinr(&full, noise).into_iter().map(|s| (1.0 + s).log2()).collect()
}

/// Proportional-fairness ratio: full-power estimate over the moving-average rate.
pub fn pf_ratio(chan: &ChannelState, tracker: &RateTracker, p_max: f64, noise: f64) -> Result<Vec<f64>> {
    if tracker.avg_rate.len() != chan.pairs() {
        return Err(Error::LengthMismatch { expected: chan.pairs(), got: tracker.avg_rate.len() });
    }
    if let Some(i) = tracker.avg_rate.iter().position(|&g| g <= 0.0) {
        return Err(domain(format!("average rate of pair {i} is zero")));
    }
    Ok(estimated_rate(chan, p_max, noise).into_iter().zip(&tracker.avg_rate).map(|(est, avg)| est / avg).collect())
}

/// `v / |v|_2`, mapping the zero vector to itself.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| x / norm).collect()
}

/// Log-SNR edge weights normalized by the Frobenius norm over all M^2 entries.
pub fn edge_features(chan: &ChannelState, p_max: f64, noise: f64) -> Result<Array2<f64>> {
    if chan.gain_sq.iter().any(|&g| g <= 0.0) {
        return Err(domain("edge features need strictly positive gains"));
    }
    let logs = chan.gain_sq.mapv(|g| (p_max / noise * g).ln());
    let norm = logs.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(logs);
    }
    Ok(logs / norm)
}

/// Stateful featurizer for one episode; owns the PF rate tracker.
#[derive(Debug, Clone)]
pub struct Featurizer {
    p_max: f64,
    noise: f64,
    bandwidth: f64,
    epsilon: f64,
    tracker: Option<RateTracker>,
}

impl Featurizer {
    pub fn new(p_max: f64, noise: f64, bandwidth: f64, epsilon: f64) -> Self {
        Self { p_max, noise, bandwidth, epsilon, tracker: None }
    }

    pub fn tracker(&self) -> Option<&RateTracker> {
        self.tracker.as_ref()
    }

    pub fn featurize(&mut self, obs: &Observation) -> Result<GraphSample> {
        let chan = &obs.channel;
        if self.tracker.is_none() {
            // Start the average at the full-power estimate so the PF ratio starts at 1.
            self.tracker = Some(RateTracker::new(estimated_rate(chan, self.p_max, self.noise), self.epsilon)?);
        }
        let tracker = self.tracker.as_ref().expect("initialized above");
        let m = chan.pairs();
        let omega = pf_ratio(chan, tracker, self.p_max, self.noise)?;
        let delay = l2_normalize(&obs.hol_delay_s);
        let backlog = l2_normalize(&obs.backlog.iter().map(|&b| b as f64).collect::<Vec<_>>());
        let served = l2_normalize(&obs.served_last.iter().map(|&s| s as f64).collect::<Vec<_>>());
        let mut nodes = Array2::zeros((m, NODE_FEATURES));
        nodes.column_mut(COL_PF).assign(&Array1::from(omega));
        nodes.column_mut(COL_DELAY).assign(&Array1::from(delay));
        nodes.column_mut(COL_BACKLOG).assign(&Array1::from(backlog));
        nodes.column_mut(COL_SERVED).assign(&Array1::from(served));
        GraphSample::new(nodes, edge_features(chan, self.p_max, self.noise)?)
    }

    /// Fold the achieved rates (bits/s) of the slot into the moving average.
    pub fn record_rates(&mut self, rates_bps: &[f64]) {
        if let Some(t) = self.tracker.as_mut() {
            let eff: Vec<f64> = rates_bps.iter().map(|r| r / self.bandwidth).collect();
            t.update(&eff);
        }
    }
}
