//! Small-scale fading, per-slot channel matrices and Shannon link capacities.
//!
//! Fast fading is a sum-of-sinusoids Rayleigh process (Zheng-Xiao form): for
//! every Tx-Rx link the in-phase and quadrature parts are each a bank of
//! `oscillators` cosines with Doppler-scaled frequencies and random phases,
//! normalized to unit mean power.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub const DEFAULT_OSCILLATORS: usize = 16;

/// One Tx-Rx link's oscillator bank.
#[derive(Debug, Clone, PartialEq)]
struct LinkOscillators {
    /// cos(alpha_n) and sin(alpha_n) per oscillator.
    cos_alpha: Vec<f64>,
    sin_alpha: Vec<f64>,
    phase_i: Vec<f64>,
    phase_q: Vec<f64>,
}

impl LinkOscillators {
    fn draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let theta = rng.random::<f64>() * TAU - PI;
        let mut cos_alpha = Vec::with_capacity(n);
        let mut sin_alpha = Vec::with_capacity(n);
        for k in 1..=n {
            let alpha = (TAU * k as f64 - PI + theta) / (4.0 * n as f64);
            cos_alpha.push(alpha.cos());
            sin_alpha.push(alpha.sin());
        }
        let phase_i = (0..n).map(|_| rng.random::<f64>() * TAU - PI).collect();
        let phase_q = (0..n).map(|_| rng.random::<f64>() * TAU - PI).collect();
        Self { cos_alpha, sin_alpha, phase_i, phase_q }
    }

    /// Complex fading coefficient at time `t` seconds, as (re, im).
    fn coefficient(&self, omega_d: f64, t: f64) -> (f64, f64) {
        let n = self.cos_alpha.len() as f64;
        let mut re = 0.0;
        let mut im = 0.0;
        for k in 0..self.cos_alpha.len() {
            re += (omega_d * t * self.cos_alpha[k] + self.phase_i[k]).cos();
            im += (omega_d * t * self.sin_alpha[k] + self.phase_q[k]).cos();
        }
        let scale = 1.0 / n.sqrt();
        (re * scale, im * scale)
    }
}

/// Per-link Rayleigh fading for an M-pair network over one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingProcess {
    pairs: usize,
    doppler_hz: f64,
    slot_seconds: f64,
    links: Vec<LinkOscillators>,
    next_slot: usize,
}

impl FadingProcess {
    pub fn new<R: Rng + ?Sized>(
        pairs: usize,
        doppler_hz: f64,
        slot_seconds: f64,
        oscillators: usize,
        rng: &mut R,
    ) -> Self {
        let links = (0..pairs * pairs).map(|_| LinkOscillators::draw(oscillators, rng)).collect();
        Self { pairs, doppler_hz, slot_seconds, links, next_slot: 0 }
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn doppler_hz(&self) -> f64 {
        self.doppler_hz
    }

    /// Next slot index [`advance`](Self::advance) will produce.
    pub fn next_slot(&self) -> usize {
        self.next_slot
    }

    /// |fading|^2 for every link at the given slot; entry (i, j) is Tx i to Rx j.
    pub fn power_at(&self, slot: usize) -> Array2<f64> {
        let omega_d = TAU * self.doppler_hz;
        let t = slot as f64 * self.slot_seconds;
        Array2::from_shape_fn((self.pairs, self.pairs), |(i, j)| {
            let (re, im) = self.links[i * self.pairs + j].coefficient(omega_d, t);
            re * re + im * im
        })
    }

    /// Fading magnitudes |h| for the current slot, then move to the next one.
    pub fn advance(&mut self) -> Array2<f64> {
        let p = self.power_at(self.next_slot);
        self.next_slot += 1;
        p.mapv(f64::sqrt)
    }
}

/// Composite channel for one slot. `gain_sq[[i, j]]` = |h_ij|^2 from Tx i to Rx j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub gain_sq: Array2<f64>,
    pub slot: usize,
}

impl ChannelState {
    pub fn new(gain_sq: Array2<f64>, slot: usize) -> Result<Self> {
        if gain_sq.nrows() != gain_sq.ncols() {
            return Err(Error::ShapeMismatch("channel matrix must be square".into()));
        }
        if gain_sq.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(domain("channel gains must be finite and non-negative"));
        }
        Ok(Self { gain_sq, slot })
    }

    pub fn pairs(&self) -> usize {
        self.gain_sq.nrows()
    }

    /// Interference-plus-noise seen by Rx i.
    pub fn interference_plus_noise(&self, powers: &[f64], noise: f64, i: usize) -> f64 {
        noise + (0..powers.len()).filter(|&j| j != i).map(|j| self.gain_sq[[j, i]] * powers[j]).sum::<f64>()
    }

    pub fn sinr(&self, powers: &[f64], noise: f64) -> Vec<f64> {
        (0..self.pairs())
            .map(|i| self.gain_sq[[i, i]] * powers[i] / self.interference_plus_noise(powers, noise, i))
            .collect()
    }

    /// Permute pair labels: new pair k is old pair `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.pairs();
        Self { gain_sq: Array2::from_shape_fn((m, m), |(i, j)| self.gain_sq[[perm[i], perm[j]]]), slot: self.slot }
    }
}

/// Check that every power lies in `[0, p_max]`.
pub fn validate_powers(powers: &[f64], p_max: f64) -> Result<()> {
    for (i, &p) in powers.iter().enumerate() {
        if !p.is_finite() || p < 0.0 || p > p_max {
            return Err(domain(format!("power {p} of pair {i} outside [0, {p_max}]")));
        }
    }
    Ok(())
}

/// Shannon capacity per link in bits/s.
pub fn link_capacity(chan: &ChannelState, powers: &[f64], p_max: f64, bandwidth: f64, noise: f64) -> Result<Vec<f64>> {
    if powers.len() != chan.pairs() {
        return Err(Error::LengthMismatch { expected: chan.pairs(), got: powers.len() });
    }
    if noise <= 0.0 {
        return Err(domain("noise power must be positive"));
    }
    validate_powers(powers, p_max)?;
    Ok(chan.sinr(powers, noise).into_iter().map(|s| bandwidth * s.log2_1p()).collect())
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// Where an environment takes its per-slot channel from.
#[derive(Debug, Clone)]
pub enum ChannelSource {
    /// Static large-scale gains times an evolving fading process.
    Faded { large_scale: Array2<f64>, fading: FadingProcess },
    /// The same matrix every slot.
    Fixed(Array2<f64>),
    /// Recorded per-slot matrices, replayed in order.
    Replay(ChannelTrace),
}

impl ChannelSource {
    pub fn pairs(&self) -> usize {
        match self {
            ChannelSource::Faded { large_scale, .. } => large_scale.nrows(),
            ChannelSource::Fixed(g) => g.nrows(),
            ChannelSource::Replay(t) => t.pairs,
        }
    }

    pub fn state_at(&self, slot: usize) -> Result<ChannelState> {
        match self {
            ChannelSource::Faded { large_scale, fading } => {
                ChannelState::new(large_scale * &fading.power_at(slot), slot)
            }
            ChannelSource::Fixed(g) => ChannelState::new(g.clone(), slot),
            ChannelSource::Replay(t) => {
                t.states.get(slot).cloned().ok_or_else(|| domain(format!("channel trace has no slot {slot}")))
            }
        }
    }
}

/// Recorded channel matrices for deterministic replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub pairs: usize,
    pub states: Vec<ChannelState>,
}

impl ChannelTrace {
    pub fn record(source: &ChannelSource, slots: usize) -> Result<Self> {
        let states = (0..slots).map(|n| source.state_at(n)).collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs: source.pairs(), states })
    }

    /// CSV with columns `slot,tx,rx,gain_sq`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["slot", "tx", "rx", "gain_sq"])?;
        for st in &self.states {
            for ((i, j), g) in st.gain_sq.indexed_iter() {
                out.write_record(&[st.slot.to_string(), i.to_string(), j.to_string(), format!("{g:e}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            slot: usize,
            tx: usize,
            rx: usize,
            gain_sq: f64,
        }
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(r).deserialize() {
            let row: Row = rec?;
            rows.push(row);
        }
        let pairs = rows.iter().map(|r| r.tx.max(r.rx) + 1).max().unwrap_or(0);
        let slots = rows.iter().map(|r| r.slot + 1).max().unwrap_or(0);
        let mut mats = vec![Array2::<f64>::zeros((pairs, pairs)); slots];
        let mut seen = vec![0usize; slots];
        for r in rows {
            mats[r.slot][[r.tx, r.rx]] = r.gain_sq;
            seen[r.slot] += 1;
        }
        if seen.iter().any(|&c| c != pairs * pairs) {
            return Err(domain("channel trace CSV is missing entries"));
        }
        let states = mats.into_iter().enumerate().map(|(n, g)| ChannelState::new(g, n)).collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs, states })
    }
}
