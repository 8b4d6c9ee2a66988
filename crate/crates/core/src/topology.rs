//! Random D2D layouts and static large-scale fading.
//!
//! Transmitters are dropped uniformly in a square with a minimum Tx-Tx spacing
//! (rejection sampling), each receiver uniformly in an annulus around its
//! transmitter. Large-scale gain combines a dual-slope path loss with
//! log-normal shadowing drawn once per link.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::units::{db_to_linear, linear_to_db, SPEED_OF_LIGHT};

/// Maximum number of Tx position draws before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1_000_000;

/// Dual-slope path loss with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossConfig {
    /// Loss at the 1 m reference distance, dB.
    pub pl0_db: f64,
    /// Exponent below the breakpoint.
    pub alpha1: f64,
    /// Exponent beyond the breakpoint.
    pub alpha2: f64,
    pub breakpoint_m: f64,
    pub shadowing_std_db: f64,
}

impl PathLossConfig {
    /// Free-space loss at 1 m for the given carrier: 20 log10(4 pi f / c).
    pub fn free_space_pl0_db(carrier_hz: f64) -> f64 {
        20.0 * (4.0 * std::f64::consts::PI * carrier_hz / SPEED_OF_LIGHT).log10()
    }

    pub fn for_carrier(carrier_hz: f64) -> Self {
        Self { pl0_db: Self::free_space_pl0_db(carrier_hz), ..Self::default() }
    }

    /// Path loss in dB at `distance` meters, without shadowing.
    pub fn path_loss_db(&self, distance: f64) -> f64 {
        assert!(distance > 0.0, "path loss needs a positive distance, got {distance}");
        if distance <= self.breakpoint_m {
            self.pl0_db + 10.0 * self.alpha1 * distance.log10()
        } else {
            self.pl0_db
                + 10.0 * self.alpha1 * self.breakpoint_m.log10()
                + 10.0 * self.alpha2 * (distance / self.breakpoint_m).log10()
        }
    }
}

impl Default for PathLossConfig {
    fn default() -> Self {
        Self {
            pl0_db: Self::free_space_pl0_db(2.4e9),
            alpha1: 2.0,
            alpha2: 4.0,
            breakpoint_m: 100.0,
            shadowing_std_db: 7.0,
        }
    }
}

/// Linear power gain for a link of length `distance` with a shadowing draw in dB.
pub fn large_scale_gain(distance: f64, shadowing_db: f64, params: &PathLossConfig) -> f64 {
    10f64.powf(-(params.path_loss_db(distance) + shadowing_db) / 10.0)
}

/// Deployment geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayoutParams {
    pub pairs: usize,
    pub area_side: f64,
    pub min_tx_dist: f64,
    pub r_inner: f64,
    pub r_outer: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self { pairs: 6, area_side: 500.0, min_tx_dist: 75.0, r_inner: 10.0, r_outer: 50.0 }
    }
}

pub type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub area_side: f64,
    pub tx: Vec<Point>,
    pub rx: Vec<Point>,
    /// `gain[[i, j]]` is the linear large-scale power gain from Tx i to Rx j.
    pub gain: Array2<f64>,
}

impl NetworkTopology {
    pub fn pairs(&self) -> usize {
        self.tx.len()
    }

    /// Distance from Tx i to Rx j.
    pub fn tx_rx_distance(&self, i: usize, j: usize) -> f64 {
        dist(self.tx[i], self.rx[j])
    }

    pub fn tx_tx_distance(&self, i: usize, j: usize) -> f64 {
        dist(self.tx[i], self.tx[j])
    }

    pub fn to_record(&self) -> TopologyRecord {
        TopologyRecord {
            area_side_m: self.area_side,
            pairs: self.tx.iter().zip(&self.rx).map(|(&tx, &rx)| PairRecord { tx, rx }).collect(),
            gain_db: self.gain.rows().into_iter().map(|r| r.iter().map(|&g| linear_to_db(g)).collect()).collect(),
        }
    }

    pub fn from_record(rec: &TopologyRecord) -> Result<Self> {
        let m = rec.pairs.len();
        if rec.gain_db.len() != m || rec.gain_db.iter().any(|r| r.len() != m) {
            return Err(Error::ShapeMismatch(format!("topology gain matrix must be {m}x{m}")));
        }
        let gain = Array2::from_shape_fn((m, m), |(i, j)| db_to_linear(rec.gain_db[i][j]));
        Ok(Self {
            area_side: rec.area_side_m,
            tx: rec.pairs.iter().map(|p| p.tx).collect(),
            rx: rec.pairs.iter().map(|p| p.rx).collect(),
            gain,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_record())?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let rec: TopologyRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_record(&rec)
    }
}

/// JSON form of a topology: positions in meters, gains in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyRecord {
    pub area_side_m: f64,
    pub pairs: Vec<PairRecord>,
    pub gain_db: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub tx: Point,
    pub rx: Point,
}

/// Draw a layout and its shadowed large-scale gains.
pub fn generate_topology<R: Rng + ?Sized>(
    layout: &LayoutParams,
    pathloss: &PathLossConfig,
    rng: &mut R,
) -> Result<NetworkTopology> {
    let m = layout.pairs;
    if m == 0 {
        return Err(Error::Domain("need at least one pair".into()));
    }
    // Equal radii give a fixed Tx-Rx distance.
    if !(layout.r_inner >= 0.0 && layout.r_inner <= layout.r_outer && layout.r_outer > 0.0) {
        return Err(Error::Domain(format!(
            "annulus radii must satisfy 0 <= r_inner <= r_outer, r_outer > 0, got {} / {}",
            layout.r_inner, layout.r_outer
        )));
    }
    if layout.area_side <= 0.0 {
        return Err(Error::Domain("area side must be positive".into()));
    }

    let mut tx: Vec<Point> = Vec::with_capacity(m);
    let mut attempts = 0;
    while tx.len() < m {
        if attempts >= MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::PlacementFailure {
                pairs: m,
                side: layout.area_side,
                min_dist: layout.min_tx_dist,
                attempts,
            });
        }
        attempts += 1;
        let cand = [rng.random::<f64>() * layout.area_side, rng.random::<f64>() * layout.area_side];
        if tx.iter().all(|&p| dist(p, cand) >= layout.min_tx_dist) {
            tx.push(cand);
        }
    }

    // Uniform over the annulus area.
    let (r2_in, r2_out) = (layout.r_inner.powi(2), layout.r_outer.powi(2));
    let rx: Vec<Point> = tx
        .iter()
        .map(|&t| {
            let r = (r2_in + rng.random::<f64>() * (r2_out - r2_in)).sqrt();
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            [t[0] + r * theta.cos(), t[1] + r * theta.sin()]
        })
        .collect();

    let shadow =
        Normal::new(0.0, pathloss.shadowing_std_db).map_err(|e| Error::Domain(format!("shadowing std: {e}")))?;
    let mut gain = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let d = dist(tx[i], rx[j]);
            gain[[i, j]] = large_scale_gain(d, shadow.sample(rng), pathloss);
        }
    }

    Ok(NetworkTopology { area_side: layout.area_side, tx, rx, gain })
}

/// Seeded convenience wrapper around [`generate_topology`].
pub fn generate_topology_seeded(
    layout: &LayoutParams,
    pathloss: &PathLossConfig,
    seed: u64,
) -> Result<NetworkTopology> {
    generate_topology(layout, pathloss, &mut rng::stream(seed, rng::tag::TOPOLOGY, 0))
}

/// Square side (m) that keeps the density of `base_pairs` pairs in a
/// `base_side` square when scaling to `pairs`.
pub fn side_for_density(pairs: usize, base_pairs: usize, base_side: f64) -> f64 {
    base_side * (pairs as f64 / base_pairs as f64).sqrt()
}
