//! Clipped-surrogate PPO with GAE, run episode by episode on [`Env`].
//!
//! Each episode is rolled out with the current actor; every
//! `episodes_per_update` episodes the stored transitions are used for
//! `epochs` full-batch updates of actor and critic, then discarded.

use std::io::Write;

use ndarray::Array1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::GraphBatch;
use crate::graphfeat::{Featurizer, GraphSample};
use crate::nn::{clip_grad_norm, Adam, AdamConfig, Parameterized};
use crate::policy::{gaussian_log_prob, Actor, Architecture, Critic, PowerAction};
use crate::queueing::{episode_average_delay, Env, RemainingPolicy};
use crate::rng::{self, SimRng};

/// Bootstrap used by the critic's TD target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CriticTarget {
    /// `r + V(s')`.
    PaperLiteral,
    /// `r + gamma V(s')`.
    #[default]
    Discounted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub episodes: usize,
    pub episodes_per_update: usize,
    pub epochs: usize,
    /// Transitions per gradient step; 0 means one full-batch step per epoch.
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub critic_target: CriticTarget,
    pub scale_rewards: bool,
    /// Weight of the newest sample in the moving-average rate feature.
    pub rate_epsilon: f64,
    pub architecture: Architecture,
    /// Watts per network power unit.
    pub power_unit_w: f64,
    /// Exploration std of the freshly initialized actor (W).
    pub initial_std_w: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            episodes: 800,
            episodes_per_update: 4,
            epochs: 10,
            minibatch_size: 64,
            learning_rate: 1e-3,
            max_grad_norm: 0.5,
            critic_target: CriticTarget::Discounted,
            scale_rewards: true,
            rate_epsilon: 0.01,
            architecture: Architecture::default(),
            power_unit_w: 1e-3,
            initial_std_w: 3e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.episodes_per_update == 0 {
            return bad("episodes_per_update must be at least 1");
        }
        if [self.learning_rate, self.max_grad_norm, self.power_unit_w]
            .iter()
            .any(|v| v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater))
        {
            return bad("learning_rate, max_grad_norm and power_unit_w must be positive");
        }
        if !self.initial_std_w.is_finite()
            || (self.initial_std_w / self.power_unit_w).partial_cmp(&crate::policy::MIN_STD)
                != Some(std::cmp::Ordering::Greater)
        {
            return bad("initial_std_w must exceed the std floor");
        }
        if !(0.0..=1.0).contains(&self.rate_epsilon) {
            return bad("rate_epsilon must lie in [0, 1]");
        }
        if self.architecture.gnn_dims.len() < 2 {
            return bad("architecture needs at least one GNN layer");
        }
        Ok(())
    }
}

/// Advantages and return targets by the backward GAE recursion.
///
/// `values` carries one extra trailing entry, the bootstrap value of the
/// state after the last reward (0 at a terminal state).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::LengthMismatch { expected: rewards.len() + 1, got: values.len() });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// d(surrogate)/d(ratio): zero where the clipped branch is the active one.
pub fn clipped_surrogate_grad(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = (advantage > 0.0 && ratio > 1.0 + clip) || (advantage < 0.0 && ratio < 1.0 - clip);
    if clipped {
        0.0
    } else {
        advantage
    }
}

/// Batch mean of the clipped surrogate (the quantity the actor maximizes).
pub fn actor_objective(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], clip: f64) -> f64 {
    let n = advantages.len();
    if n == 0 {
        return 0.0;
    }
    new_log_probs
        .iter()
        .zip(old_log_probs)
        .zip(advantages)
        .map(|((nl, ol), a)| clipped_surrogate((nl - ol).exp(), *a, clip))
        .sum::<f64>()
        / n as f64
}

/// Mean squared TD error `(r_t + g V_{t+1} - V_t)^2`.
pub fn critic_loss(rewards: &[f64], values: &[f64], next_values: &[f64], discount: f64) -> f64 {
    let n = rewards.len();
    if n == 0 {
        return 0.0;
    }
    rewards
        .iter()
        .zip(values)
        .zip(next_values)
        .map(|((r, v), nv)| {
            let e = r + discount * nv - v;
            e * e
        })
        .sum::<f64>()
        / n as f64
}

/// Zero-mean, unit-std rescaling; a constant input maps to zeros.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    if v.is_empty() {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    v.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStat {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStat {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            return 1.0;
        }
        (self.m2 / (self.count - 1) as f64).sqrt()
    }
}

/// Divides rewards by the running std of the discounted return.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardScaler {
    stat: RunningStat,
    ret: f64,
    gamma: f64,
}

impl RewardScaler {
    pub fn new(gamma: f64) -> Self {
        Self { gamma, ..Default::default() }
    }

    pub fn scale(&mut self, reward: f64, done: bool) -> f64 {
        self.ret = self.gamma * self.ret + reward;
        self.stat.push(self.ret);
        if done {
            self.ret = 0.0;
        }
        let s = self.stat.std();
        if s > 1e-8 {
            reward / s
        } else {
            reward
        }
    }
}

/// One stored slot of experience.
#[derive(Debug, Clone)]
pub struct Transition {
    pub sample: GraphSample,
    pub action: PowerAction,
    pub reward: f64,
    /// Reward after scaling; the quantity the learner sees.
    pub scaled_reward: f64,
    pub value: f64,
    pub log_prob: f64,
    pub done: bool,
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    /// Pair-mean of mean delivered-packet delay (ms); NaN when nothing was delivered.
    pub avg_delay: f64,
    /// Losses of the last epoch if an update followed this episode, else NaN.
    pub actor_loss: f64,
    pub critic_loss: f64,
}

pub fn write_training_csv<W: Write>(logs: &[EpisodeLog], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for l in logs {
        out.serialize(l)?;
    }
    out.flush()?;
    Ok(())
}

/// Summary of one update phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
}

/// Actor, critic, optimizers and the experience memory.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub actor: Actor,
    pub critic: Critic,
    actor_opt: Adam<Actor>,
    critic_opt: Adam<Critic>,
    scaler: RewardScaler,
    memory: Vec<Vec<Transition>>,
    action_rng: SimRng,
    shuffle_rng: SimRng,
    episodes_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, p_max_w: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = rng::stream(seed, rng::tag::POLICY_INIT, 0);
        let mut actor = Actor::new(&config.architecture, p_max_w, config.power_unit_w, &mut init);
        actor.set_initial_std(config.initial_std_w / config.power_unit_w)?;
        let critic = Critic::new(&config.architecture, &mut init);
        Ok(Self::from_parts(config, actor, critic, seed))
    }

    pub fn from_parts(config: TrainConfig, actor: Actor, critic: Critic, seed: u64) -> Self {
        let adam = AdamConfig { lr: config.learning_rate, ..Default::default() };
        Self {
            actor_opt: Adam::new(&actor, adam),
            critic_opt: Adam::new(&critic, adam),
            scaler: RewardScaler::new(config.gamma),
            memory: Vec::new(),
            action_rng: rng::stream(seed, rng::tag::ACTIONS, 0),
            shuffle_rng: rng::stream(seed, rng::tag::ACTIONS, 1),
            episodes_done: 0,
            config,
            actor,
            critic,
        }
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    /// Roll one episode with the current actor and store it.
    pub fn collect_episode(&mut self, env: &mut Env) -> Result<(Vec<Transition>, f64)> {
        let cfg = *env.config();
        let mut feat = Featurizer::new(cfg.p_max_w, cfg.noise_w, cfg.bandwidth_hz, self.config.rate_epsilon);
        let mut episode = Vec::with_capacity(cfg.total_slots);
        while !env.is_done() {
            let sample = feat.featurize(&env.observe())?;
            let action = self.actor.act(&sample, &mut self.action_rng)?;
            let out = env.step(&action.watts(self.actor.power_unit_w))?;
            feat.record_rates(&out.rates_bps);
            let scaled = if self.config.scale_rewards { self.scaler.scale(out.reward, out.done) } else { out.reward };
            episode.push(Transition {
                log_prob: action.log_prob,
                sample,
                action,
                reward: out.reward,
                scaled_reward: scaled,
                value: 0.0,
                done: out.done,
            });
        }
        let samples: Vec<&GraphSample> = episode.iter().map(|t| &t.sample).collect();
        let (values, _) = self.critic.forward(&GraphBatch::new(&samples)?)?;
        for (t, v) in episode.iter_mut().zip(values.iter()) {
            t.value = *v;
        }
        let delay = episode_average_delay(&env.buffers().completed, &[], RemainingPolicy::Exclude).unwrap_or(f64::NAN);
        Ok((episode, delay))
    }

    /// Algorithm-1 step: roll an episode, and update once the memory holds
    /// `episodes_per_update` episodes.
    pub fn train_episode(&mut self, env: &mut Env) -> Result<EpisodeLog> {
        let (episode, avg_delay) = self.collect_episode(env)?;
        let episode_return = episode.iter().map(|t| t.reward).sum();
        self.memory.push(episode);
        let index = self.episodes_done;
        self.episodes_done += 1;
        let (mut actor_loss, mut critic_loss) = (f64::NAN, f64::NAN);
        if self.memory.len() >= self.config.episodes_per_update {
            let stats = self.update(index)?;
            actor_loss = stats.actor_loss;
            critic_loss = stats.critic_loss;
        }
        Ok(EpisodeLog { episode: index, episode_return, avg_delay, actor_loss, critic_loss })
    }

    /// Train for `episodes` episodes, asking `make_env` for each fresh environment.
    pub fn train<F>(&mut self, episodes: usize, mut make_env: F) -> Result<Vec<EpisodeLog>>
    where
        F: FnMut(usize) -> Result<Env>,
    {
        let mut logs = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let mut env = make_env(self.episodes_done)?;
            let log = self.train_episode(&mut env)?;
            log::debug!("episode {} return {:.1} delay {:.3} ms", log.episode, log.episode_return, log.avg_delay);
            logs.push(log);
        }
        Ok(logs)
    }

    /// `epochs` passes over the memory, which is then emptied. Each pass is
    /// one full-batch step, or one step per shuffled minibatch of
    /// `minibatch_size` transitions.
    pub fn update(&mut self, episode: usize) -> Result<UpdateStats> {
        let memory = std::mem::take(&mut self.memory);
        let cfg = self.config.clone();

        let mut advantages = Vec::new();
        for ep in &memory {
            let rewards: Vec<f64> = ep.iter().map(|t| t.scaled_reward).collect();
            let mut values: Vec<f64> = ep.iter().map(|t| t.value).collect();
            values.push(0.0);
            advantages.extend(compute_gae(&rewards, &values, cfg.gamma, cfg.gae_lambda)?.0);
        }
        let advantages = normalize(&advantages);
        let flat: Vec<&Transition> = memory.iter().flatten().collect();
        let full = GraphBatch::new(&flat.iter().map(|t| &t.sample).collect::<Vec<_>>())?;
        let n = flat.len();
        // Next-state index within the memory; None at episode ends.
        let next: Vec<Option<usize>> = flat.iter().enumerate().map(|(k, t)| (!t.done).then_some(k + 1)).collect();
        let discount = match cfg.critic_target {
            CriticTarget::Discounted => cfg.gamma,
            CriticTarget::PaperLiteral => 1.0,
        };
        let chunk = if cfg.minibatch_size == 0 { n } else { cfg.minibatch_size.min(n) };

        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats { actor_loss: f64::NAN, critic_loss: f64::NAN };
        for _ in 0..cfg.epochs {
            // Detached bootstrap values, refreshed once per pass.
            let (boot_values, _) = self.critic.forward(&full)?;
            let targets: Vec<f64> =
                (0..n).map(|k| flat[k].scaled_reward + discount * next[k].map_or(0.0, |j| boot_values[j])).collect();
            if chunk < n {
                order.shuffle(&mut self.shuffle_rng);
            }
            let (mut a_sum, mut c_sum) = (0.0, 0.0);
            for idx in order.chunks(chunk) {
                let (a, c) = self.minibatch_step(&flat, idx, &advantages, &targets, &full, chunk == n, episode)?;
                a_sum += a * idx.len() as f64;
                c_sum += c * idx.len() as f64;
            }
            stats = UpdateStats { actor_loss: a_sum / n as f64, critic_loss: c_sum / n as f64 };
        }
        Ok(stats)
    }

    #[allow(clippy::too_many_arguments)]
    fn minibatch_step(
        &mut self,
        flat: &[&Transition],
        idx: &[usize],
        advantages: &[f64],
        targets: &[f64],
        full: &GraphBatch,
        use_full: bool,
        episode: usize,
    ) -> Result<(f64, f64)> {
        let cfg = &self.config;
        let owned;
        let batch = if use_full {
            full
        } else {
            owned = GraphBatch::new(&idx.iter().map(|&k| &flat[k].sample).collect::<Vec<_>>())?;
            &owned
        };
        let n = idx.len() as f64;

        let (out, cache) = self.actor.forward(batch)?;
        let mut d_mean = Array1::zeros(batch.rows());
        let mut d_std = Array1::zeros(batch.rows());
        let mut objective = 0.0;
        for (b, &(r0, m)) in batch.spans.iter().enumerate() {
            let t = flat[idx[b]];
            let raw = &t.action.raw;
            let new_lp: f64 = (0..m).map(|i| gaussian_log_prob(raw[i], out.mean[r0 + i], out.std[r0 + i])).sum();
            let ratio = (new_lp - t.log_prob).exp();
            let adv = advantages[idx[b]];
            objective += clipped_surrogate(ratio, adv, cfg.clip);
            // Loss is the negated mean objective.
            let d_lp = -clipped_surrogate_grad(ratio, adv, cfg.clip) * ratio / n;
            if d_lp == 0.0 {
                continue;
            }
            for i in 0..m {
                let (x, mu, sd) = (raw[i], out.mean[r0 + i], out.std[r0 + i]);
                let z = (x - mu) / sd;
                d_mean[r0 + i] = d_lp * z / sd;
                d_std[r0 + i] = d_lp * (z * z - 1.0) / sd;
            }
        }
        let actor_loss = -objective / n;
        let mut ga = self.actor.zeros_like();
        self.actor.backward(batch, &cache, &d_mean, &d_std, &mut ga)?;

        let (values, ccache) = self.critic.forward(batch)?;
        let mut d_value = Array1::zeros(idx.len());
        let mut closs = 0.0;
        for (b, &k) in idx.iter().enumerate() {
            let err = targets[k] - values[b];
            closs += err * err;
            d_value[b] = -2.0 * err / n;
        }
        let critic_loss = closs / n;
        let mut gc = self.critic.zeros_like();
        self.critic.backward(batch, &ccache, &d_value, &mut gc)?;

        if !actor_loss.is_finite() || !critic_loss.is_finite() || !ga.all_finite() || !gc.all_finite() {
            return Err(Error::DivergenceDetected {
                episode,
                what: format!("actor loss {actor_loss}, critic loss {critic_loss}"),
            });
        }
        clip_grad_norm(&mut ga, cfg.max_grad_norm);
        clip_grad_norm(&mut gc, cfg.max_grad_norm);
        self.actor_opt.step(&mut self.actor, &ga);
        self.critic_opt.step(&mut self.critic, &gc);
        Ok((actor_loss, critic_loss))
    }
}
