//! Slotted buffer dynamics: Poisson arrivals, FIFO service limited by link
//! capacity, per-packet delay accounting and the backlog reward.
//!
//! Slot ordering follows the training loop: packets of slot `n` arrive first,
//! the agent observes the buffers, powers are applied, packets are served and
//! the reward `-sum(backlog)` is sampled after service.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::channel::{link_capacity, ChannelSource, ChannelState};
use crate::error::{domain, Error, Result};
use crate::rng::SimRng;

/// Traffic and radio parameters of one episode, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub slot_seconds: f64,
    pub total_slots: usize,
    /// Packets per second.
    pub arrival_rate: f64,
    pub packet_bits: f64,
    pub bandwidth_hz: f64,
    pub noise_w: f64,
    pub p_max_w: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            slot_seconds: 1e-3,
            total_slots: 300,
            arrival_rate: 3000.0,
            packet_bits: 4000.0,
            bandwidth_hz: 10e6,
            noise_w: crate::units::dbm_to_watts(-104.0),
            p_max_w: crate::units::dbm_to_watts(10.0),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("slot_seconds", self.slot_seconds),
            ("packet_bits", self.packet_bits),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_w", self.noise_w),
            ("p_max_w", self.p_max_w),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::Config(format!("arrival_rate must be non-negative, got {}", self.arrival_rate)));
        }
        if self.total_slots == 0 {
            return Err(Error::Config("total_slots must be positive".into()));
        }
        Ok(())
    }

    /// Mean arrivals per slot.
    pub fn arrivals_per_slot(&self) -> f64 {
        self.arrival_rate * self.slot_seconds
    }
}

/// Poisson arrival counts for `pairs` buffers in one slot.
pub fn sample_arrivals<R: Rng + ?Sized>(mean_per_slot: f64, pairs: usize, rng: &mut R) -> Vec<usize> {
    if mean_per_slot <= 0.0 {
        return vec![0; pairs];
    }
    let dist = Poisson::new(mean_per_slot).expect("positive finite Poisson mean");
    (0..pairs).map(|_| dist.sample(rng) as usize).collect()
}

/// Poisson probability mass at `k`.
pub fn poisson_pmf(mean: f64, k: u64) -> f64 {
    let log_fact: f64 = (1..=k).map(|x| (x as f64).ln()).sum();
    (k as f64 * mean.ln() - mean - log_fact).exp()
}

/// Whole packets a link of capacity `capacity_bps` can push in one slot.
pub fn servable_packets(capacity_bps: f64, slot_seconds: f64, packet_bits: f64) -> usize {
    debug_assert!(capacity_bps >= 0.0);
    (slot_seconds * capacity_bps / packet_bits).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub arrival_slot: usize,
    pub departure_slot: Option<usize>,
    /// Airtime at departure, seconds.
    pub transmit_seconds: f64,
}

/// Per-packet log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub pair: usize,
    pub arrival_slot: usize,
    pub departure_slot: Option<usize>,
    pub delay_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferState {
    pub queues: Vec<VecDeque<Packet>>,
    /// Packets served per pair in the last completed slot.
    pub served_last: Vec<usize>,
    /// Packets that arrived per pair in the current slot.
    pub arrivals_last: Vec<usize>,
    /// Delays (ms) of delivered packets, per pair, in departure order.
    pub completed: Vec<Vec<f64>>,
    pub total_arrivals: Vec<usize>,
}

impl BufferState {
    pub fn empty(pairs: usize) -> Self {
        Self {
            queues: vec![VecDeque::new(); pairs],
            served_last: vec![0; pairs],
            arrivals_last: vec![0; pairs],
            completed: vec![Vec::new(); pairs],
            total_arrivals: vec![0; pairs],
        }
    }

    pub fn pairs(&self) -> usize {
        self.queues.len()
    }

    pub fn backlog(&self) -> Vec<usize> {
        self.queues.iter().map(VecDeque::len).collect()
    }

    pub fn total_backlog(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    /// Age in slots of the oldest queued packet at `slot` (0 when empty).
    pub fn head_of_line_age(&self, slot: usize) -> Vec<usize> {
        self.queues.iter().map(|q| q.front().map_or(0, |p| slot - p.arrival_slot)).collect()
    }

    pub fn is_conserved(&self) -> bool {
        (0..self.pairs()).all(|i| self.total_arrivals[i] == self.completed[i].len() + self.queues[i].len())
    }
}

/// What the agent sees at the start of a slot (after that slot's arrivals).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub slot: usize,
    pub channel: ChannelState,
    /// Head-of-line waiting time per pair, seconds.
    pub hol_delay_s: Vec<f64>,
    pub backlog: Vec<usize>,
    /// Packets served per pair in the previous slot.
    pub served_last: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub slot: usize,
    pub reward: f64,
    pub served: Vec<usize>,
    /// Achieved capacity per pair, bits/s.
    pub rates_bps: Vec<f64>,
    /// (pair, delay ms) for each packet delivered this slot.
    pub departures: Vec<(usize, f64)>,
    pub backlog: Vec<usize>,
    pub done: bool,
}

/// The power-control MDP for one episode.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    channel: ChannelSource,
    arrivals_rng: SimRng,
    buffers: BufferState,
    slot: usize,
    current: ChannelState,
    log: Vec<PacketRecord>,
    rewards: Vec<f64>,
    done: bool,
}

impl Env {
    /// Build an environment and admit the arrivals of slot 0.
    pub fn new(config: EnvConfig, channel: ChannelSource, arrivals_rng: SimRng) -> Result<Self> {
        config.validate()?;
        let pairs = channel.pairs();
        let current = channel.state_at(0)?;
        let mut env = Self {
            config,
            channel,
            arrivals_rng,
            buffers: BufferState::empty(pairs),
            slot: 0,
            current,
            log: Vec::new(),
            rewards: Vec::new(),
            done: false,
        };
        env.admit_arrivals();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn pairs(&self) -> usize {
        self.buffers.pairs()
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn buffers(&self) -> &BufferState {
        &self.buffers
    }

    pub fn channel(&self) -> &ChannelState {
        &self.current
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    fn admit_arrivals(&mut self) {
        let counts = sample_arrivals(self.config.arrivals_per_slot(), self.pairs(), &mut self.arrivals_rng);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                self.buffers.queues[i].push_back(Packet {
                    arrival_slot: self.slot,
                    departure_slot: None,
                    transmit_seconds: 0.0,
                });
            }
            self.buffers.total_arrivals[i] += c;
        }
        self.buffers.arrivals_last = counts;
    }

    pub fn observe(&self) -> Observation {
        Observation {
            slot: self.slot,
            channel: self.current.clone(),
            hol_delay_s: self
                .buffers
                .head_of_line_age(self.slot)
                .into_iter()
                .map(|a| a as f64 * self.config.slot_seconds)
                .collect(),
            backlog: self.buffers.backlog(),
            served_last: self.buffers.served_last.clone(),
        }
    }

    /// Serve the current slot with `powers` (watts), sample the reward, then
    /// advance to the next slot and admit its arrivals.
    pub fn step(&mut self, powers: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(domain("episode already finished"));
        }
        let cfg = self.config;
        let rates = link_capacity(&self.current, powers, cfg.p_max_w, cfg.bandwidth_hz, cfg.noise_w)?;
        let mut served = vec![0; self.pairs()];
        let mut departures = Vec::new();
        for (i, &rate) in rates.iter().enumerate() {
            let d = servable_packets(rate, cfg.slot_seconds, cfg.packet_bits);
            let xi = d.min(self.buffers.queues[i].len());
            served[i] = xi;
            if xi == 0 {
                continue;
            }
            let airtime = cfg.packet_bits / rate;
            for mut pkt in self.buffers.queues[i].drain(..xi) {
                pkt.departure_slot = Some(self.slot);
                pkt.transmit_seconds = airtime;
                let delay_ms = ((self.slot - pkt.arrival_slot) as f64 * cfg.slot_seconds + airtime) * 1e3;
                self.buffers.completed[i].push(delay_ms);
                self.log.push(PacketRecord {
                    pair: i,
                    arrival_slot: pkt.arrival_slot,
                    departure_slot: Some(self.slot),
                    delay_ms: Some(delay_ms),
                });
                departures.push((i, delay_ms));
            }
        }
        self.buffers.served_last = served.clone();
        let reward = -(self.buffers.total_backlog() as f64);
        self.rewards.push(reward);
        let slot = self.slot;
        let backlog = self.buffers.backlog();

        if self.slot + 1 >= cfg.total_slots {
            self.done = true;
        } else {
            self.slot += 1;
            self.current = self.channel.state_at(self.slot)?;
            self.admit_arrivals();
        }

        Ok(StepOutcome { slot, reward, served, rates_bps: rates, departures, backlog, done: self.done })
    }

    /// Every packet of the episode: delivered ones in departure order, then
    /// the still-queued ones per pair.
    pub fn packet_log(&self) -> Vec<PacketRecord> {
        let mut all = self.log.clone();
        for (i, q) in self.buffers.queues.iter().enumerate() {
            all.extend(q.iter().map(|p| PacketRecord {
                pair: i,
                arrival_slot: p.arrival_slot,
                departure_slot: None,
                delay_ms: None,
            }));
        }
        all
    }

    /// Waiting time (ms) of every still-queued packet, counted to the end of
    /// the episode, per pair.
    pub fn remaining_waits_ms(&self) -> Vec<Vec<f64>> {
        let end = self.config.total_slots;
        self.buffers
            .queues
            .iter()
            .map(|q| q.iter().map(|p| (end - p.arrival_slot) as f64 * self.config.slot_seconds * 1e3).collect())
            .collect()
    }
}

/// CSV with columns `pair,arrival_slot,departure_slot,delay_ms`; undelivered
/// packets leave the last two empty.
pub fn write_packet_csv<W: Write>(records: &[PacketRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["pair", "arrival_slot", "departure_slot", "delay_ms"])?;
    for r in records {
        out.write_record(&[
            r.pair.to_string(),
            r.arrival_slot.to_string(),
            r.departure_slot.map(|d| d.to_string()).unwrap_or_default(),
            r.delay_ms.map(|d| format!("{d}")).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_packet_csv<R: std::io::Read>(r: R) -> Result<Vec<PacketRecord>> {
    csv::Reader::from_reader(r).deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

/// How pairs / packets without a delivery enter the delay average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RemainingPolicy {
    /// Only delivered packets count; pairs with no delivery are left out.
    #[default]
    Exclude,
    /// Queued packets count with their waiting time up to the episode end.
    IncludeBacklog,
}

/// Pair-mean of per-pair mean packet delays (ms).
pub fn episode_average_delay(completed: &[Vec<f64>], remaining: &[Vec<f64>], policy: RemainingPolicy) -> Result<f64> {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (i, delays) in completed.iter().enumerate() {
        let extra: &[f64] = match policy {
            RemainingPolicy::Exclude => &[],
            RemainingPolicy::IncludeBacklog => remaining.get(i).map_or(&[], Vec::as_slice),
        };
        let n = delays.len() + extra.len();
        if n == 0 {
            continue;
        }
        sum += (delays.iter().sum::<f64>() + extra.iter().sum::<f64>()) / n as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::EmptyEpisode);
    }
    Ok(sum / counted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn poisson_pmf_at_zero() {
        assert_relative_eq!(poisson_pmf(3.0, 0), (-3.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(poisson_pmf(3.0, 0), 0.049787, epsilon = 1e-6);
        assert_relative_eq!(poisson_pmf(3.0, 2), 4.5 * (-3.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn zero_rate_never_arrives() {
        let mut r = rng::stream(0, 0, 0);
        for _ in 0..100 {
            assert_eq!(sample_arrivals(0.0, 4, &mut r), vec![0; 4]);
        }
    }

    #[test]
    fn arrival_sample_mean() {
        let mut r = rng::stream(1, 0, 0);
        let n = 1_000_000;
        let total: usize = (0..n / 10).flat_map(|_| sample_arrivals(3.0, 10, &mut r)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() < 0.01, "sample mean {mean}");
    }

    #[test]
    fn servable_floor() {
        assert_eq!(servable_packets(0.0, 1e-3, 4000.0), 0);
        assert_eq!(servable_packets(4e6, 1e-3, 4000.0), 1);
        assert_eq!(servable_packets(2.999 * 4000.0, 1.0, 4000.0), 2);
    }

    fn fixed_env(gain: f64, rate: f64, slots: usize) -> Env {
        let cfg =
            EnvConfig { total_slots: slots, arrival_rate: rate, noise_w: 1.0, p_max_w: 1.0, ..Default::default() };
        Env::new(cfg, ChannelSource::Fixed(array![[gain]]), rng::stream(3, 0, 0)).unwrap()
    }

    #[test]
    fn queue_update_arithmetic() {
        // 5 queued, capacity for 2 packets, 3 arrivals in the next slot.
        let mut env = fixed_env(1.0, 0.0, 10);
        for _ in 0..5 {
            env.buffers.queues[0].push_back(Packet { arrival_slot: 0, departure_slot: None, transmit_seconds: 0.0 });
        }
        env.buffers.total_arrivals[0] = 5;
        // Rate for exactly 2.5 packets per slot: B log2(1+snr) * T = 2.5 L.
        let snr = 2f64.powf(2.5 * 4000.0 / (1e-3 * 10e6)) - 1.0;
        let out = env.step(&[snr]).unwrap();
        assert_eq!(out.served, vec![2]);
        assert_eq!(out.backlog, vec![3]);
        for _ in 0..3 {
            env.buffers.queues[0].push_back(Packet { arrival_slot: 1, departure_slot: None, transmit_seconds: 0.0 });
        }
        assert_eq!(env.buffers.backlog(), vec![6]);
    }

    #[test]
    fn empty_system_has_zero_reward() {
        let mut env = fixed_env(1.0, 0.0, 5);
        while !env.is_done() {
            assert_eq!(env.step(&[1.0]).unwrap().reward, 0.0);
        }
    }

    #[test]
    fn same_slot_service_delay() {
        // gamma = 8 Mb/s over 10 MHz: SNR = 2^0.8 - 1.
        let mut env = fixed_env(1.0, 0.0, 3);
        env.buffers.queues[0].push_back(Packet { arrival_slot: 0, departure_slot: None, transmit_seconds: 0.0 });
        env.buffers.total_arrivals[0] = 1;
        let snr = 2f64.powf(0.8) - 1.0;
        let out = env.step(&[snr]).unwrap();
        assert_eq!(out.served, vec![1]);
        assert_relative_eq!(out.departures[0].1, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn average_delay_structure() {
        let d = episode_average_delay(&[vec![1.0, 3.0]], &[vec![]], RemainingPolicy::Exclude).unwrap();
        assert_relative_eq!(d, 2.0);
        // Pair-mean of means, not the pooled mean (which would be 10/3).
        let d =
            episode_average_delay(&[vec![2.0], vec![3.0, 5.0]], &[vec![], vec![]], RemainingPolicy::Exclude).unwrap();
        assert_relative_eq!(d, 3.0);
        assert!(matches!(
            episode_average_delay(&[vec![], vec![]], &[vec![1.0], vec![]], RemainingPolicy::Exclude),
            Err(Error::EmptyEpisode)
        ));
        let d =
            episode_average_delay(&[vec![], vec![]], &[vec![4.0], vec![]], RemainingPolicy::IncludeBacklog).unwrap();
        assert_relative_eq!(d, 4.0);
    }

    #[test]
    fn fifo_and_conservation() {
        let cfg = EnvConfig { total_slots: 200, ..Default::default() };
        let src = ChannelSource::Fixed(array![[2e-11, 1e-12], [3e-12, 1e-11]]);
        let mut env = Env::new(cfg, src, rng::stream(8, 0, 0)).unwrap();
        while !env.is_done() {
            env.step(&[cfg.p_max_w, cfg.p_max_w]).unwrap();
        }
        assert!(env.buffers().is_conserved());
        let log = env.packet_log();
        for pair in 0..2 {
            let arr: Vec<usize> =
                log.iter().filter(|r| r.pair == pair && r.departure_slot.is_some()).map(|r| r.arrival_slot).collect();
            assert!(arr.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn packet_csv_round_trip() {
        let recs = vec![
            PacketRecord { pair: 0, arrival_slot: 1, departure_slot: Some(3), delay_ms: Some(2.25) },
            PacketRecord { pair: 1, arrival_slot: 4, departure_slot: None, delay_ms: None },
        ];
        let mut buf = Vec::new();
        write_packet_csv(&recs, &mut buf).unwrap();
        assert_eq!(read_packet_csv(buf.as_slice()).unwrap(), recs);
    }
}
