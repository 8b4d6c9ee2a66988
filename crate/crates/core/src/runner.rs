//! Experiment orchestration: TOML configuration, scenario construction,
//! training and evaluation runs, and CSV/JSON export.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, BaselineParams, BaselinePolicy};
use crate::channel::{ChannelSource, FadingProcess};
use crate::checkpoint::PolicyCheckpoint;
use crate::error::{Error, Result};
use crate::graphfeat::Featurizer;
use crate::metrics::{EpisodeResult, MetricsReport, Spread};
use crate::policy::Actor;
use crate::ppo::{write_training_csv, EpisodeLog, TrainConfig, Trainer};
use crate::queueing::{write_packet_csv, Env, EnvConfig, PacketRecord};
use crate::rng::{self, SimRng};
use crate::topology::{generate_topology, LayoutParams, NetworkTopology, PathLossConfig};
use crate::units::{dbm_to_watts, doppler_hz};

/// Episode indices at or above this value are reserved for evaluation, so
/// evaluation never replays a training episode's fading or arrivals.
pub const EVAL_EPISODE_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub pairs: usize,
    pub area_side_m: f64,
    pub min_tx_distance_m: f64,
    pub rx_radius_min_m: f64,
    pub rx_radius_max_m: f64,
    pub carrier_ghz: f64,
    pub speed_mps: f64,
    pub fading_oscillators: usize,
    pub path_loss_exponent_near: f64,
    pub path_loss_exponent_far: f64,
    pub breakpoint_m: f64,
    pub shadowing_db: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            pairs: 6,
            area_side_m: 500.0,
            min_tx_distance_m: 75.0,
            rx_radius_min_m: 10.0,
            rx_radius_max_m: 50.0,
            carrier_ghz: 2.4,
            speed_mps: 1.0,
            fading_oscillators: crate::channel::DEFAULT_OSCILLATORS,
            path_loss_exponent_near: 2.0,
            path_loss_exponent_far: 4.0,
            breakpoint_m: 100.0,
            shadowing_db: 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub slot_ms: f64,
    pub slots: usize,
    pub arrival_rate_per_ms: f64,
    pub packet_bits: f64,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self { slot_ms: 1.0, slots: 300, arrival_rate_per_ms: 3.0, packet_bits: 4000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub bandwidth_mhz: f64,
    pub noise_dbm: f64,
    pub p_max_dbm: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self { bandwidth_mhz: 10.0, noise_dbm: -104.0, p_max_dbm: 10.0 }
    }
}

/// How a trained actor picks powers at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Clipped Gaussian samples, as during training.
    #[default]
    Sample,
    /// The clipped mean.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// One topology per seed.
    pub seeds: Vec<u64>,
    pub episodes_per_seed: usize,
    pub action: ActionMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3, 4, 5], episodes_per_seed: 1, action: ActionMode::Sample }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write `checkpoint_<episode>.json` every this many episodes (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("results"), checkpoint_every: 0 }
    }
}

/// Everything a run needs, in human units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of the training topology and of parameter initialization.
    pub seed: u64,
    pub network: NetworkSection,
    pub traffic: TrafficSection,
    pub radio: RadioSection,
    pub train: TrainConfig,
    pub baselines: BaselineParams,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let loc = e
                .span()
                .map(|s| {
                    let start = s.start.min(text.len());
                    let line = text[..start].matches('\n').count() + 1;
                    let src = text.lines().nth(line - 1).unwrap_or("").trim();
                    format!("line {line} (`{src}`): ")
                })
                .unwrap_or_default();
            Error::Config(format!("{loc}{}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        let positive = [
            ("network.area_side_m", n.area_side_m),
            ("network.carrier_ghz", n.carrier_ghz),
            ("network.breakpoint_m", n.breakpoint_m),
            ("network.rx_radius_max_m", n.rx_radius_max_m),
            ("traffic.slot_ms", self.traffic.slot_ms),
            ("traffic.packet_bits", self.traffic.packet_bits),
            ("radio.bandwidth_mhz", self.radio.bandwidth_mhz),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{field} must be positive, got {v}")));
            }
        }
        if n.pairs == 0 {
            return Err(Error::Config("network.pairs must be at least 1".into()));
        }
        if !(n.rx_radius_min_m >= 0.0 && n.rx_radius_min_m <= n.rx_radius_max_m) {
            return Err(Error::Config("network.rx_radius_min_m must lie in [0, rx_radius_max_m]".into()));
        }
        if n.speed_mps < 0.0 || n.shadowing_db < 0.0 || n.min_tx_distance_m < 0.0 {
            return Err(Error::Config("speed, shadowing and min distance must be non-negative".into()));
        }
        if self.traffic.arrival_rate_per_ms < 0.0 {
            return Err(Error::Config("traffic.arrival_rate_per_ms must be non-negative".into()));
        }
        if self.eval.episodes_per_seed == 0 {
            return Err(Error::Config("eval.episodes_per_seed must be at least 1".into()));
        }
        self.env_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            slot_seconds: self.traffic.slot_ms * 1e-3,
            total_slots: self.traffic.slots,
            arrival_rate: self.traffic.arrival_rate_per_ms * 1e3,
            packet_bits: self.traffic.packet_bits,
            bandwidth_hz: self.radio.bandwidth_mhz * 1e6,
            noise_w: dbm_to_watts(self.radio.noise_dbm),
            p_max_w: dbm_to_watts(self.radio.p_max_dbm),
        }
    }

    pub fn layout(&self) -> LayoutParams {
        let n = &self.network;
        LayoutParams {
            pairs: n.pairs,
            area_side: n.area_side_m,
            min_tx_dist: n.min_tx_distance_m,
            r_inner: n.rx_radius_min_m,
            r_outer: n.rx_radius_max_m,
        }
    }

    pub fn path_loss(&self) -> PathLossConfig {
        let n = &self.network;
        PathLossConfig {
            alpha1: n.path_loss_exponent_near,
            alpha2: n.path_loss_exponent_far,
            breakpoint_m: n.breakpoint_m,
            shadowing_std_db: n.shadowing_db,
            ..PathLossConfig::for_carrier(n.carrier_ghz * 1e9)
        }
    }

    /// Topology of `seed` under this configuration.
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        let topology =
            generate_topology(&self.layout(), &self.path_loss(), &mut rng::stream(seed, rng::tag::TOPOLOGY, 0))?;
        Ok(self.scenario_on(topology))
    }

    pub fn scenario_on(&self, topology: NetworkTopology) -> Scenario {
        Scenario {
            topology,
            env: self.env_config(),
            doppler_hz: doppler_hz(self.network.speed_mps, self.network.carrier_ghz * 1e9),
            oscillators: self.network.fading_oscillators,
        }
    }
}

/// A fixed layout plus everything needed to spawn episodes on it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: NetworkTopology,
    pub env: EnvConfig,
    pub doppler_hz: f64,
    pub oscillators: usize,
}

impl Scenario {
    /// Fresh episode; fading and arrivals depend only on `(seed, episode)`.
    pub fn episode(&self, seed: u64, episode: u64) -> Result<Env> {
        let m = self.topology.pairs();
        let fading = FadingProcess::new(
            m,
            self.doppler_hz,
            self.env.slot_seconds,
            self.oscillators,
            &mut rng::stream(seed, rng::tag::FADING, episode),
        );
        let source = ChannelSource::Faded { large_scale: self.topology.gain.clone(), fading };
        Env::new(self.env, source, rng::stream(seed, rng::tag::ARRIVALS, episode))
    }
}

/// Who picks the powers during an evaluation episode.
#[derive(Debug, Clone)]
pub enum Controller<'a> {
    Baseline(BaselinePolicy<SimRng>),
    /// A trained actor; samples actions when `sampler` is set, else plays the mean.
    Agent {
        actor: &'a Actor,
        rate_epsilon: f64,
        sampler: Option<SimRng>,
    },
}

impl<'a> Controller<'a> {
    pub fn baseline(kind: BaselineKind, params: BaselineParams, seed: u64) -> Self {
        Controller::Baseline(BaselinePolicy::new(kind, params, rng::stream(seed, rng::tag::BASELINE, 0)))
    }

    /// An actor evaluated under `config`'s action mode, sampling from a stream of `seed`.
    pub fn agent(actor: &'a Actor, config: &ExperimentConfig, seed: u64) -> Self {
        let sampler = (config.eval.action == ActionMode::Sample)
            .then(|| rng::stream(seed, rng::tag::ACTIONS, EVAL_EPISODE_OFFSET));
        Controller::Agent { actor, rate_epsilon: config.train.rate_epsilon, sampler }
    }

    pub fn label(&self) -> String {
        match self {
            Controller::Baseline(b) => b.kind.name().to_string(),
            Controller::Agent { .. } => "agent".to_string(),
        }
    }
}

/// One row of `powers.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub slot: usize,
    pub pair: usize,
    pub power_w: f64,
    pub rate_bps: f64,
    pub backlog: usize,
}

/// Play one full episode, optionally logging per-slot allocations.
pub fn run_episode(
    env: &mut Env,
    controller: &mut Controller<'_>,
    mut powers_log: Option<&mut Vec<PowerRow>>,
) -> Result<EpisodeResult> {
    let cfg = *env.config();
    let m = env.pairs();
    let mut featurizer = match controller {
        Controller::Agent { rate_epsilon, .. } => {
            Some(Featurizer::new(cfg.p_max_w, cfg.noise_w, cfg.bandwidth_hz, *rate_epsilon))
        }
        Controller::Baseline(_) => None,
    };
    let mut rate_sums = vec![0.0; m];
    while !env.is_done() {
        let powers = match controller {
            Controller::Baseline(b) => b.powers(env.channel(), cfg.p_max_w, cfg.noise_w)?,
            Controller::Agent { actor, sampler, .. } => {
                let f = featurizer.as_mut().expect("agent has a featurizer");
                let sample = f.featurize(&env.observe())?;
                match sampler {
                    Some(r) => actor.act(&sample, r)?.watts(actor.power_unit_w),
                    None => actor.act_deterministic(&sample)?,
                }
            }
        };
        let out = env.step(&powers)?;
        if let Some(f) = featurizer.as_mut() {
            f.record_rates(&out.rates_bps);
        }
        for (s, r) in rate_sums.iter_mut().zip(&out.rates_bps) {
            *s += r;
        }
        if let Some(log) = powers_log.as_deref_mut() {
            for (i, (&power_w, &rate_bps)) in powers.iter().zip(&out.rates_bps).enumerate() {
                log.push(PowerRow { slot: out.slot, pair: i, power_w, rate_bps, backlog: out.backlog[i] });
            }
        }
    }
    let result = EpisodeResult::from_env(env, &rate_sums);
    debug_assert!(result.is_conserved());
    Ok(result)
}

/// Per-seed reports plus the spread of their headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub pairs: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<MetricsReport>,
    pub average_delay_ms: Spread,
    pub p5_delay_ms: Spread,
    pub p95_delay_ms: Spread,
    pub transmitted: Spread,
    pub remaining: Spread,
}

impl RunSummary {
    pub fn new(method: String, pairs: usize, seeds: Vec<u64>, per_seed: Vec<MetricsReport>) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| Spread::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        Self {
            method,
            pairs,
            seeds,
            average_delay_ms: col(|r| r.average_delay_ms),
            p5_delay_ms: col(|r| r.p5_delay_ms),
            p95_delay_ms: col(|r| r.p95_delay_ms),
            transmitted: col(|r| r.transmitted as f64),
            remaining: col(|r| r.remaining as f64),
            per_seed,
        }
    }
}

/// Packet and power traces of the first evaluated episode.
#[derive(Debug, Clone, Default)]
pub struct Traces {
    pub packets: Vec<PacketRecord>,
    pub powers: Vec<PowerRow>,
}

/// Evaluate a controller on `episodes` fresh episodes of one scenario.
pub fn evaluate_scenario(
    scenario: &Scenario,
    controller: &mut Controller<'_>,
    seed: u64,
    episodes: usize,
    mut traces: Option<&mut Traces>,
) -> Result<MetricsReport> {
    let mut results = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut env = scenario.episode(seed, EVAL_EPISODE_OFFSET + k as u64)?;
        let capture = k == 0 && traces.is_some();
        let mut powers = Vec::new();
        results.push(run_episode(&mut env, controller, capture.then_some(&mut powers))?);
        if capture {
            let t = traces.as_deref_mut().expect("checked above");
            t.packets = env.packet_log();
            t.powers = powers;
        }
    }
    MetricsReport::from_episodes(&results)
}

/// Evaluate over the configured seeds, one topology per seed.
pub fn evaluate_seeds<'a, F>(
    config: &ExperimentConfig,
    mut make_controller: F,
    traces: Option<&mut Traces>,
) -> Result<RunSummary>
where
    F: FnMut(u64) -> Controller<'a>,
{
    let mut reports = Vec::with_capacity(config.eval.seeds.len());
    let mut traces = traces;
    let mut label = String::new();
    for (k, &seed) in config.eval.seeds.iter().enumerate() {
        let scenario = config.scenario(seed)?;
        let mut controller = make_controller(seed);
        label = controller.label();
        let t = if k == 0 { traces.as_deref_mut() } else { None };
        reports.push(evaluate_scenario(&scenario, &mut controller, seed, config.eval.episodes_per_seed, t)?);
    }
    Ok(RunSummary::new(label, config.network.pairs, config.eval.seeds.clone(), reports))
}

/// What `run_experiment` should do.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Train,
    EvalPolicy { checkpoint: PathBuf },
    EvalBaseline(BaselineKind),
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub training: Option<Vec<EpisodeLog>>,
    pub checkpoint: Option<PolicyCheckpoint>,
}

/// Train a policy on the topology of `seed`, logging progress through `on_episode`.
pub fn train_policy<F>(
    config: &ExperimentConfig,
    seed: u64,
    mut on_episode: F,
) -> Result<(Trainer, Scenario, Vec<EpisodeLog>)>
where
    F: FnMut(&EpisodeLog, &Trainer) -> Result<()>,
{
    let scenario = config.scenario(seed)?;
    let mut trainer = Trainer::new(config.train.clone(), scenario.env.p_max_w, seed)?;
    let mut logs = Vec::with_capacity(config.train.episodes);
    for ep in 0..config.train.episodes {
        let mut env = scenario.episode(seed, ep as u64)?;
        let log = trainer.train_episode(&mut env)?;
        on_episode(&log, &trainer)?;
        logs.push(log);
    }
    Ok((trainer, scenario, logs))
}

/// Run one experiment and, when `out_dir` is given, write its artifacts there.
pub fn run_experiment(config: &ExperimentConfig, mode: &Mode, out_dir: Option<&Path>) -> Result<RunOutput> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut traces = Traces::default();
    let output = match mode {
        Mode::Train => {
            let every = config.output.checkpoint_every;
            let arch = config.train.architecture.clone();
            let (trainer, scenario, logs) = train_policy(config, config.seed, |log, t| {
                log::info!("episode {} return {:.1} delay {:.3} ms", log.episode, log.episode_return, log.avg_delay);
                if let (Some(dir), true) = (out_dir, every > 0 && (log.episode + 1) % every.max(1) == 0) {
                    PolicyCheckpoint::capture(&t.actor, &t.critic, &arch, log.episode + 1)
                        .save(&dir.join(format!("checkpoint_{}.json", log.episode + 1)))?;
                }
                Ok(())
            })?;
            let checkpoint = PolicyCheckpoint::capture(&trainer.actor, &trainer.critic, &arch, trainer.episodes_done());
            let mut controller = Controller::agent(&trainer.actor, config, config.seed);
            let report = evaluate_scenario(
                &scenario,
                &mut controller,
                config.seed,
                config.eval.episodes_per_seed,
                Some(&mut traces),
            )?;
            let summary = RunSummary::new("agent".into(), config.network.pairs, vec![config.seed], vec![report]);
            if let Some(dir) = out_dir {
                write_training_csv(&logs, File::create(dir.join("training_curve.csv"))?)?;
                checkpoint.save(&dir.join("checkpoint.json"))?;
            }
            RunOutput { summary, training: Some(logs), checkpoint: Some(checkpoint) }
        }
        Mode::EvalPolicy { checkpoint } => {
            let ck = PolicyCheckpoint::load(checkpoint)?;
            let (actor, _) = ck.restore()?;
            let summary = evaluate_seeds(config, |seed| Controller::agent(&actor, config, seed), Some(&mut traces))?;
            RunOutput { summary, training: None, checkpoint: None }
        }
        Mode::EvalBaseline(kind) => {
            let params = config.baselines;
            let summary = evaluate_seeds(config, |seed| Controller::baseline(*kind, params, seed), Some(&mut traces))?;
            RunOutput { summary, training: None, checkpoint: None }
        }
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, &output.summary, &traces)?;
    }
    Ok(output)
}

pub fn write_outputs(dir: &Path, summary: &RunSummary, traces: &Traces) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(summary)?)?;
    write_packet_csv(&traces.packets, File::create(dir.join("packets.csv"))?)?;
    let mut w = csv::Writer::from_writer(File::create(dir.join("powers.csv"))?);
    for row in &traces.powers {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// All baselines (and optionally a trained policy) on the configured seeds.
pub fn sweep(config: &ExperimentConfig, kinds: &[BaselineKind], policy: Option<&Actor>) -> Result<Vec<RunSummary>> {
    let mut out = Vec::new();
    if let Some(actor) = policy {
        out.push(evaluate_seeds(config, |seed| Controller::agent(actor, config, seed), None)?);
    }
    for &kind in kinds {
        let params = config.baselines;
        out.push(evaluate_seeds(config, |seed| Controller::baseline(kind, params, seed), None)?);
    }
    Ok(out)
}

/// A deployment variation evaluated without retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityScenario {
    pub label: String,
    pub pairs: usize,
    pub area_side_m: f64,
    pub rx_radius_min_m: f64,
    pub rx_radius_max_m: f64,
}

impl ScalabilityScenario {
    pub fn new(label: impl Into<String>, pairs: usize, area_side_m: f64, radii: (f64, f64)) -> Self {
        Self { label: label.into(), pairs, area_side_m, rx_radius_min_m: radii.0, rx_radius_max_m: radii.1 }
    }

    /// Growing networks at the density of 6 pairs in 500 m x 500 m.
    pub fn same_density() -> Vec<Self> {
        [(6, 500.0), (12, 700.0), (24, 1000.0), (54, 1500.0)]
            .into_iter()
            .map(|(m, a)| Self::new(format!("density M={m} side={a}"), m, a, (10.0, 50.0)))
            .collect()
    }

    /// Growing networks in a fixed 500 m square.
    pub fn higher_density() -> Vec<Self> {
        [6, 8, 10, 12].into_iter().map(|m| Self::new(format!("dense M={m}"), m, 500.0, (10.0, 50.0))).collect()
    }

    /// Receiver-distance variations at M = 6.
    pub fn radius_variants() -> Vec<Self> {
        [(2.0, 65.0), (10.0, 50.0), (30.0, 70.0), (30.0, 30.0)]
            .into_iter()
            .map(|r| Self::new(format!("radius {}-{} m", r.0, r.1), 6, 500.0, r))
            .collect()
    }

    fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.network.pairs = self.pairs;
        c.network.area_side_m = self.area_side_m;
        c.network.rx_radius_min_m = self.rx_radius_min_m;
        c.network.rx_radius_max_m = self.rx_radius_max_m;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub scenario: ScalabilityScenario,
    pub method: String,
    pub average_delay_ms: Spread,
}

/// Evaluate the same actor (and the given baselines) on every scenario.
pub fn scalability_eval(
    base: &ExperimentConfig,
    actor: &Actor,
    scenarios: &[ScalabilityScenario],
    baselines: &[BaselineKind],
) -> Result<Vec<ScalabilityRow>> {
    let mut rows = Vec::new();
    for sc in scenarios {
        let cfg = sc.apply(base);
        cfg.validate()?;
        for summary in sweep(&cfg, baselines, Some(actor))? {
            rows.push(ScalabilityRow {
                scenario: sc.clone(),
                method: summary.method.clone(),
                average_delay_ms: summary.average_delay_ms,
            });
        }
    }
    Ok(rows)
}

pub fn write_scalability_csv(rows: &[ScalabilityRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record([
        "scenario",
        "pairs",
        "area_side_m",
        "rx_radius_min_m",
        "rx_radius_max_m",
        "method",
        "avg_delay_ms",
        "std_ms",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.label.clone(),
            r.scenario.pairs.to_string(),
            r.scenario.area_side_m.to_string(),
            r.scenario.rx_radius_min_m.to_string(),
            r.scenario.rx_radius_max_m.to_string(),
            r.method.clone(),
            format!("{:.4}", r.average_delay_ms.mean),
            format!("{:.4}", r.average_delay_ms.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_table_one() {
        let c = ExperimentConfig::default();
        let e = c.env_config();
        assert!((e.p_max_w - 0.01).abs() < 1e-15);
        assert!((e.noise_w - 3.981_071_705_534_97e-14).abs() < 1e-24);
        assert_eq!(e.total_slots, 300);
        assert_eq!(e.arrival_rate, 3000.0);
        assert_eq!(e.bandwidth_hz, 1e7);
        assert!((c.scenario_on(c.scenario(1).unwrap().topology).doppler_hz - 8.0055).abs() < 1e-3);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = ExperimentConfig { seed: 17, ..Default::default() };
        c.network.pairs = 4;
        c.train.episodes = 12;
        c.eval.seeds = vec![9, 10];
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn config_errors_name_line_and_field() {
        let err =
            ExperimentConfig::from_toml_str("seed = 1\n[network]\npairs = 4\nbogus = 3\n").unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("bogus"), "{err}");
        let err = ExperimentConfig::from_toml_str("[radio]\np_max_dbm = \"ten\"\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("p_max_dbm"), "{err}");
        let err = ExperimentConfig::from_toml_str("[traffic]\npacket_bits = 0.0\n").unwrap_err().to_string();
        assert!(err.contains("traffic.packet_bits"), "{err}");
    }

    #[test]
    fn max_power_single_pair_serves_instantly() {
        let mut c = ExperimentConfig::default();
        c.network.pairs = 1;
        let scenario = c.scenario(3).unwrap();
        // A very strong direct link: capacity far above the offered load.
        let mut strong = scenario.clone();
        strong.topology.gain.fill(1e-4);
        let mut ctl = Controller::baseline(BaselineKind::MaxPower, c.baselines, 3);
        let r = evaluate_scenario(&strong, &mut ctl, 3, 1, None).unwrap();
        assert!(r.average_delay_ms <= c.traffic.slot_ms);
        assert_eq!(r.remaining, 0);
    }

    #[test]
    fn starved_links_deliver_nothing() {
        let mut c = ExperimentConfig::default();
        c.network.pairs = 2;
        c.traffic.packet_bits = 1e12;
        let scenario = c.scenario(4).unwrap();
        let mut ctl = Controller::baseline(BaselineKind::MaxPower, c.baselines, 4);
        let mut env = scenario.episode(4, 0).unwrap();
        let r = run_episode(&mut env, &mut ctl, None).unwrap();
        assert_eq!(r.transmitted(), 0);
        assert_eq!(r.remaining.iter().sum::<usize>(), r.arrivals.iter().sum::<usize>());
    }

    #[test]
    fn evaluation_is_reproducible() {
        let mut c = ExperimentConfig::default();
        c.eval.seeds = vec![5, 6];
        let a = run_experiment(&c, &Mode::EvalBaseline(BaselineKind::RandomPower), None).unwrap();
        let b = run_experiment(&c, &Mode::EvalBaseline(BaselineKind::RandomPower), None).unwrap();
        assert_eq!(a.summary, b.summary);
    }
}
