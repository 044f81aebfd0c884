//! PPO with a clipped surrogate and GAE, optionally Lagrangian.
//!
//! A candidate cost expression shapes the reward during rollout collection:
//! `shaped = raw + scale * cost_expr(post-step features)`. Raw rewards and
//! ground-truth costs are recorded unchanged, so episode metrics never depend
//! on the shaping.

mod gae;
mod lagrange;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::{discounted_return, EpisodeStats};
use crate::dsl::{evaluate, CostExpr, DslError, FeatureSource};
use crate::env::{DoneReason, EnvConfig, EnvError, PointGoalEnv, ACTION_DIM, OBS_DIM};
use crate::nn::{log_prob_given_mean, log_prob_grads, GaussianPolicy, Mlp, NnError};
use crate::nn::AdamState;

pub use gae::{gae, normalize};
pub use lagrange::LagrangeState;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error("shaping expression failed at step {step}: {source}")]
    Shaping { step: usize, source: DslError },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Overrides the environment's own step budget during training and evaluation.
    pub max_episode_steps: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Passes over the epoch batch per update.
    pub update_iters: usize,
    pub minibatch_size: usize,
    pub entropy_coefficient: f64,
    /// Policy passes stop early once the approximate KL exceeds 1.5x this.
    pub target_kl: Option<f64>,
    pub hidden_sizes: Vec<usize>,
    pub init_log_std: f64,
    pub shaping_scale: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            epochs: 50,
            steps_per_epoch: 4000,
            max_episode_steps: 300,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            update_iters: 10,
            minibatch_size: 250,
            entropy_coefficient: 0.0,
            target_kl: Some(0.02),
            hidden_sizes: vec![64, 64],
            init_log_std: -0.5,
            shaping_scale: 1.0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.max_episode_steps == 0 {
            return bad("max_episode_steps must be >= 1");
        }
        if self.steps_per_epoch < self.max_episode_steps {
            return bad("steps_per_epoch must be >= max_episode_steps");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.minibatch_size == 0 || self.update_iters == 0 {
            return bad("minibatch_size and update_iters must be >= 1");
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return bad("hidden sizes must be nonzero");
        }
        Ok(())
    }

    fn layer_sizes(&self, output: usize) -> Vec<usize> {
        let mut sizes = vec![OBS_DIM];
        sizes.extend(&self.hidden_sizes);
        sizes.push(output);
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagrangeConfig {
    pub cost_limit: f64,
    pub lambda_lr: f64,
    pub init_lambda: f64,
}

impl Default for LagrangeConfig {
    fn default() -> Self {
        LagrangeConfig {
            cost_limit: 10.0,
            lambda_lr: 0.05,
            init_lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ppo,
    PpoLag(LagrangeConfig),
}

impl Algorithm {
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::PpoLag(_) => "ppo-lag",
        }
    }
}

/// Policy plus critics. `cost_value_net` exists only for PPO-Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub policy: GaussianPolicy,
    pub value_net: Mlp,
    pub cost_value_net: Option<Mlp>,
}

impl Agent {
    pub fn new(config: &PpoConfig, algorithm: &Algorithm, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a9e7);
        let mean_net = Mlp::random(&config.layer_sizes(ACTION_DIM), 1.0, 0.01, &mut rng)?;
        let policy = GaussianPolicy::new(mean_net, vec![config.init_log_std; ACTION_DIM])?;
        let value_net = Mlp::random(&config.layer_sizes(1), 1.0, 1.0, &mut rng)?;
        let cost_value_net = match algorithm {
            Algorithm::PpoLag(_) => Some(Mlp::random(&config.layer_sizes(1), 1.0, 1.0, &mut rng)?),
            Algorithm::Ppo => None,
        };
        Ok(Agent {
            policy,
            value_net,
            cost_value_net,
        })
    }
}

/// `raw + scale * cost_expr(features)`, or `raw` when there is no expression.
pub fn shaped_reward<S: FeatureSource + ?Sized>(
    raw_reward: f64,
    cost_expr: Option<&CostExpr>,
    features: &S,
    scale: f64,
) -> Result<f64, DslError> {
    match cost_expr {
        None => Ok(raw_reward),
        Some(expr) => Ok(raw_reward + scale * evaluate(expr, features)?),
    }
}

/// One epoch of collected experience.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub observations: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub log_probs: Vec<f64>,
    pub shaped_rewards: Vec<f64>,
    pub raw_rewards: Vec<f64>,
    pub costs: Vec<f64>,
    /// Per-step value estimates interleaved with one bootstrap per segment (see [`gae`]).
    pub values: Vec<f64>,
    pub cost_values: Vec<f64>,
    pub segment_ends: Vec<usize>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Episode statistics for one training epoch. Undiscounted sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub avg_return: f64,
    pub avg_cost: f64,
    pub avg_shaped_return: f64,
    pub episodes: usize,
    pub tcr: f64,
    pub her: f64,
    pub lambda: Option<f64>,
    pub wall_clock_s: f64,
}

impl EpochStats {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &EpochStats) -> bool {
        EpochStats {
            wall_clock_s: 0.0,
            ..self.clone()
        } == EpochStats {
            wall_clock_s: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub algorithm: Algorithm,
    pub epochs: Vec<EpochStats>,
    pub wall_clock_s: f64,
    pub env_steps: usize,
    pub agent: Agent,
}

pub const TRAIN_CSV_HEADER: &str = "epoch,avg_return,avg_cost,avg_shaped_return,episodes,tcr,her,wall_clock_s";

impl TrainReport {
    pub fn lambda_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.lambda).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRAIN_CSV_HEADER}")?;
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.epoch, e.avg_return, e.avg_cost, e.avg_shaped_return, e.episodes, e.tcr, e.her, e.wall_clock_s
            )?;
        }
        Ok(())
    }
}

fn clamp_action(a: &[f64]) -> [f64; ACTION_DIM] {
    [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]
}

fn env_for(env: &EnvConfig, config: &PpoConfig) -> Result<PointGoalEnv, EnvError> {
    PointGoalEnv::new(EnvConfig {
        max_episode_steps: config.max_episode_steps,
        ..env.clone()
    })
}

/// Trains `agent` in place for `min(config.epochs, stop_after)` epochs.
///
/// Deterministic in `config.seed`: identical inputs give identical epoch
/// statistics and final parameters.
pub fn train(
    env: &EnvConfig,
    agent: Agent,
    config: &PpoConfig,
    algorithm: &Algorithm,
    shaping: Option<&CostExpr>,
    stop_after: Option<usize>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let mut agent = agent;
    if matches!(algorithm, Algorithm::PpoLag(_)) && agent.cost_value_net.is_none() {
        return Err(TrainError::InvalidArgument("PPO-Lagrangian needs a cost critic".into()));
    }
    let started = Instant::now();
    let epochs = stop_after.map_or(config.epochs, |s| s.min(config.epochs));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut env = env_for(env, config)?;

    let mut policy_opt = AdamState::new(agent.policy.mean_net.num_params(), config.policy_lr);
    let mut log_std_opt = AdamState::new(ACTION_DIM, config.policy_lr);
    let mut value_opt = AdamState::new(agent.value_net.num_params(), config.value_lr);
    let mut cost_value_opt = agent
        .cost_value_net
        .as_ref()
        .map(|n| AdamState::new(n.num_params(), config.value_lr));
    let mut lagrange = match algorithm {
        Algorithm::PpoLag(l) => Some(LagrangeState::new(l.init_lambda, l.lambda_lr, l.cost_limit)),
        Algorithm::Ppo => None,
    };

    let mut reports = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let epoch_start = Instant::now();
        let (buf, episodes) = collect_rollout(&mut env, &agent, config, shaping, &mut rng)?;

        let n_eps = episodes.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeOutcome) -> f64| episodes.iter().map(f).sum::<f64>() / n_eps;
        let avg_cost = mean(&|e| e.cost);
        if let Some(l) = lagrange.as_mut() {
            *l = l.update(avg_cost);
        }

        let (mut adv, ret) = gae(&buf.shaped_rewards, &buf.values, &buf.segment_ends, config.gamma, config.gae_lambda)?;
        let mut cost_ret = None;
        if let Some(l) = lagrange {
            let (mut cadv, cret) = gae(&buf.costs, &buf.cost_values, &buf.segment_ends, config.gamma, config.gae_lambda)?;
            normalize(&mut adv);
            normalize(&mut cadv);
            for (a, c) in adv.iter_mut().zip(&cadv) {
                *a = l.mix_advantage(*a, *c);
            }
            cost_ret = Some(cret);
        }
        normalize(&mut adv);

        update_policy(&mut agent.policy, &mut policy_opt, &mut log_std_opt, &buf, &adv, config, &mut rng)?;
        fit_critic(&mut agent.value_net, &mut value_opt, &buf, &ret, config, &mut rng)?;
        if let (Some(net), Some(opt), Some(cret)) = (agent.cost_value_net.as_mut(), cost_value_opt.as_mut(), cost_ret) {
            fit_critic(net, opt, &buf, &cret, config, &mut rng)?;
        }

        reports.push(EpochStats {
            epoch: epoch + 1,
            avg_return: mean(&|e| e.ret),
            avg_cost,
            avg_shaped_return: mean(&|e| e.shaped),
            episodes: episodes.len(),
            tcr: mean(&|e| if e.reached_goal { 1.0 } else { 0.0 }),
            her: mean(&|e| if e.cost > 0.0 { 1.0 } else { 0.0 }),
            lambda: lagrange.map(|l| l.lambda),
            wall_clock_s: epoch_start.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainReport {
        algorithm: *algorithm,
        env_steps: epochs * config.steps_per_epoch,
        epochs: reports,
        wall_clock_s: started.elapsed().as_secs_f64(),
        agent,
    })
}

struct EpisodeOutcome {
    ret: f64,
    cost: f64,
    shaped: f64,
    reached_goal: bool,
}

fn collect_rollout(
    env: &mut PointGoalEnv,
    agent: &Agent,
    config: &PpoConfig,
    shaping: Option<&CostExpr>,
    rng: &mut ChaCha8Rng,
) -> Result<(RolloutBuffer, Vec<EpisodeOutcome>), TrainError> {
    let n = config.steps_per_epoch;
    let mut buf = RolloutBuffer {
        observations: Vec::with_capacity(n),
        actions: Vec::with_capacity(n),
        log_probs: Vec::with_capacity(n),
        shaped_rewards: Vec::with_capacity(n),
        raw_rewards: Vec::with_capacity(n),
        costs: Vec::with_capacity(n),
        values: Vec::with_capacity(n + 16),
        cost_values: Vec::with_capacity(n + 16),
        segment_ends: Vec::new(),
    };
    let value_of = |net: &Mlp, obs: &[f64]| -> Result<f64, NnError> { Ok(net.forward(obs)?[0]) };
    let mut episodes = Vec::new();
    let mut obs = env.reset(rng.gen())?;
    let (mut ep_ret, mut ep_cost, mut ep_shaped) = (0.0, 0.0, 0.0);

    for t in 0..n {
        let (action, log_prob) = agent.policy.sample(obs.as_slice(), rng)?;
        buf.values.push(value_of(&agent.value_net, obs.as_slice())?);
        if let Some(net) = &agent.cost_value_net {
            buf.cost_values.push(value_of(net, obs.as_slice())?);
        }
        let step = env.step(clamp_action(&action))?;
        let shaped = shaped_reward(step.reward, shaping, &step.observation, config.shaping_scale)
            .map_err(|source| TrainError::Shaping { step: t, source })?;

        buf.observations.push(obs.0);
        buf.actions.push([action[0], action[1]]);
        buf.log_probs.push(log_prob);
        buf.shaped_rewards.push(shaped);
        buf.raw_rewards.push(step.reward);
        buf.costs.push(step.cost);
        ep_ret += step.reward;
        ep_cost += step.cost;
        ep_shaped += shaped;
        obs = step.observation;

        if step.done || t + 1 == n {
            let terminal = step.done_reason == Some(DoneReason::Goal);
            buf.values.push(if terminal { 0.0 } else { value_of(&agent.value_net, obs.as_slice())? });
            if let Some(net) = &agent.cost_value_net {
                buf.cost_values.push(if terminal { 0.0 } else { value_of(net, obs.as_slice())? });
            }
            buf.segment_ends.push(t + 1);
            if step.done {
                episodes.push(EpisodeOutcome {
                    ret: ep_ret,
                    cost: ep_cost,
                    shaped: ep_shaped,
                    reached_goal: terminal,
                });
                (ep_ret, ep_cost, ep_shaped) = (0.0, 0.0, 0.0);
                if t + 1 < n {
                    obs = env.reset(rng.gen())?;
                }
            }
        }
    }
    Ok((buf, episodes))
}

fn update_policy(
    policy: &mut GaussianPolicy,
    opt: &mut AdamState,
    log_std_opt: &mut AdamState,
    buf: &RolloutBuffer,
    adv: &[f64],
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), TrainError> {
    let mut idx: Vec<usize> = (0..buf.len()).collect();
    let eps = config.clip_ratio;
    for _ in 0..config.update_iters {
        idx.shuffle(rng);
        let mut kl_sum = 0.0;
        for chunk in idx.chunks(config.minibatch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = vec![0.0; policy.mean_net.num_params()];
            let mut log_std_grads = vec![-config.entropy_coefficient; ACTION_DIM];
            for &i in chunk {
                let cache = policy.mean_net.forward_cached(&buf.observations[i])?;
                let mean = cache.output();
                let action = &buf.actions[i];
                let log_prob = log_prob_given_mean(mean, policy.log_std(), action);
                let ratio = (log_prob - buf.log_probs[i]).exp();
                kl_sum += buf.log_probs[i] - log_prob;
                let a = adv[i];
                let clipped = (a >= 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
                if clipped {
                    continue;
                }
                // d(-ratio * A)/d(log_prob)
                let d_logp = -ratio * a * scale;
                let (d_mean, d_log_std) = log_prob_grads(mean, policy.log_std(), action);
                let out_grad: Vec<f64> = d_mean.iter().map(|g| g * d_logp).collect();
                policy.mean_net.accumulate_gradient(&cache, &out_grad, &mut grads)?;
                for (g, d) in log_std_grads.iter_mut().zip(&d_log_std) {
                    *g += d * d_logp;
                }
            }
            opt.step(policy.mean_net.params_mut(), &grads)?;
            log_std_opt.step(policy.log_std_mut(), &log_std_grads)?;
            policy.clamp_log_std();
        }
        if let Some(target) = config.target_kl {
            if kl_sum / buf.len() as f64 > 1.5 * target {
                break;
            }
        }
    }
    Ok(())
}

fn fit_critic(
    net: &mut Mlp,
    opt: &mut AdamState,
    buf: &RolloutBuffer,
    targets: &[f64],
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), TrainError> {
    let mut idx: Vec<usize> = (0..buf.len()).collect();
    for _ in 0..config.update_iters {
        idx.shuffle(rng);
        for chunk in idx.chunks(config.minibatch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = vec![0.0; net.num_params()];
            for &i in chunk {
                let cache = net.forward_cached(&buf.observations[i])?;
                let err = cache.output()[0] - targets[i];
                net.accumulate_gradient(&cache, &[err * scale], &mut grads)?;
            }
            opt.step(net.params_mut(), &grads)?;
        }
    }
    Ok(())
}

/// Runs `episodes` unshaped episodes with the deterministic (mean) action.
/// Episode `i` spawns from seed `eval_seed + i`, so every policy evaluated
/// with the same seed faces the same start positions.
pub fn evaluate_policy(
    env: &EnvConfig,
    policy: &GaussianPolicy,
    config: &PpoConfig,
    episodes: usize,
    eval_seed: u64,
) -> Result<Vec<EpisodeStats>, TrainError> {
    let mut env = env_for(env, config)?;
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut obs = env.reset(eval_seed.wrapping_add(i as u64))?;
        let (mut rewards, mut costs) = (Vec::new(), Vec::new());
        loop {
            let mean = policy.mean(obs.as_slice())?;
            let step = env.step(clamp_action(&mean))?;
            rewards.push(step.reward);
            costs.push(step.cost);
            obs = step.observation;
            if step.done {
                let reached = step.done_reason == Some(DoneReason::Goal);
                let gamma = config.gamma;
                let j_r = discounted_return(&rewards, gamma).map_err(|e| TrainError::InvalidArgument(e.to_string()))?;
                let j_c = discounted_return(&costs, gamma).map_err(|e| TrainError::InvalidArgument(e.to_string()))?;
                out.push(EpisodeStats::new(j_r, j_c, costs.iter().sum(), reached));
                break;
            }
        }
    }
    Ok(out)
}
