//! Fast performance evaluation: train a candidate-shaped policy for a few
//! epochs, evaluate it unshaped, and reduce the rollouts to a score.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::EpisodeStats;
use crate::dsl::{evaluate, parse, CostExpr, DslError, FeatureMap};
use crate::env::EnvConfig;
use crate::nn::GaussianPolicy;
use crate::ppo::{evaluate_policy, train, Agent, Algorithm, EpochStats, PpoConfig, TrainError};
use crate::report::compute_rates;

/// Names a score expression may reference.
pub const SCORE_FEATURES: [&str; 6] = ["avg_return", "avg_cost", "tcr", "her", "d", "n"];

/// The constrained fitness written in the DSL.
pub const BUILTIN_SCORE: &str = "if(avg_cost > d, 0 - n, avg_return)";

pub const DEFAULT_EVAL_SEED: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum FpeError {
    /// The candidate broke during training. Scored as infeasible.
    #[error("candidate failed during shaped training: {0}")]
    Candidate(TrainError),
    #[error(transparent)]
    Train(TrainError),
    #[error("invalid phase: {0}")]
    InvalidPhase(String),
}

impl FpeError {
    pub fn is_soft(&self) -> bool {
        matches!(self, FpeError::Candidate(_))
    }
}

impl From<TrainError> for FpeError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Shaping { .. } => FpeError::Candidate(e),
            other => FpeError::Train(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    Early,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPhase {
    pub label: PhaseLabel,
    pub epochs: usize,
    pub eval_episodes: usize,
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
}

fn default_eval_seed() -> u64 {
    DEFAULT_EVAL_SEED
}

impl EvalPhase {
    pub fn early(epochs: usize, eval_episodes: usize) -> Self {
        EvalPhase {
            label: PhaseLabel::Early,
            epochs,
            eval_episodes,
            eval_seed: DEFAULT_EVAL_SEED,
        }
    }

    pub fn late(epochs: usize, eval_episodes: usize) -> Self {
        EvalPhase {
            label: PhaseLabel::Late,
            ..EvalPhase::early(epochs, eval_episodes)
        }
    }
}

/// Evaluation statistics of one trained policy. Returns and costs are
/// discounted per-episode means of the raw (unshaped) signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsAggregate {
    pub avg_return: f64,
    pub avg_cost: f64,
    pub tcr: f64,
    pub her: f64,
    pub episodes: usize,
    pub wall_clock_s: f64,
}

impl MetricsAggregate {
    pub fn from_episodes(episodes: &[EpisodeStats], wall_clock_s: f64) -> Result<Self, FpeError> {
        let (tcr, her) =
            compute_rates(episodes).map_err(|e| FpeError::InvalidPhase(e.to_string()))?;
        let n = episodes.len() as f64;
        Ok(MetricsAggregate {
            avg_return: episodes.iter().map(|e| e.j_r).sum::<f64>() / n,
            avg_cost: episodes.iter().map(|e| e.j_c).sum::<f64>() / n,
            tcr,
            her,
            episodes: episodes.len(),
            wall_clock_s,
        })
    }

    /// Bindings for [`SCORE_FEATURES`].
    pub fn bindings(&self, d: f64, n: f64) -> FeatureMap {
        FeatureMap::new()
            .with("avg_return", self.avg_return)
            .with("avg_cost", self.avg_cost)
            .with("tcr", self.tcr)
            .with("her", self.her)
            .with("d", d)
            .with("n", n)
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &MetricsAggregate) -> bool {
        MetricsAggregate {
            wall_clock_s: 0.0,
            ..*self
        } == MetricsAggregate {
            wall_clock_s: 0.0,
            ..*other
        }
    }
}

/// A fitness expression over [`SCORE_FEATURES`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreExpr(CostExpr);

impl ScoreExpr {
    pub fn parse(text: &str) -> Result<Self, DslError> {
        ScoreExpr::new(parse(text)?)
    }

    pub fn new(expr: CostExpr) -> Result<Self, DslError> {
        expr.validate(&SCORE_FEATURES, Default::default())?;
        Ok(ScoreExpr(expr))
    }

    pub fn builtin() -> Self {
        ScoreExpr::parse(BUILTIN_SCORE).expect("built-in score parses")
    }

    pub fn expr(&self) -> &CostExpr {
        &self.0
    }
}

impl Default for ScoreExpr {
    fn default() -> Self {
        ScoreExpr::builtin()
    }
}

impl fmt::Display for ScoreExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Serialize for ScoreExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScoreExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        ScoreExpr::parse(&text).map_err(serde::de::Error::custom)
    }
}

pub fn score(metrics: &MetricsAggregate, expr: &ScoreExpr, d: f64, n: f64) -> Result<f64, DslError> {
    evaluate(expr.expr(), &metrics.bindings(d, n))
}

#[derive(Debug, Clone)]
pub struct FpeOutcome {
    pub metrics: MetricsAggregate,
    pub curves: Vec<EpochStats>,
    pub policy: GaussianPolicy,
    pub env_steps: usize,
}

/// Trains a fresh PPO agent for `phase.epochs` with `candidate` as the
/// shaping term, then evaluates the mean action without shaping.
pub fn fpe_run(
    candidate: Option<&CostExpr>,
    phase: &EvalPhase,
    env: &EnvConfig,
    ppo: &PpoConfig,
    seed: u64,
) -> Result<FpeOutcome, FpeError> {
    if phase.eval_episodes == 0 {
        return Err(FpeError::InvalidPhase("eval_episodes must be > 0".into()));
    }
    if phase.epochs > ppo.epochs {
        return Err(FpeError::InvalidPhase(format!(
            "phase needs {} epochs but training is capped at {}",
            phase.epochs, ppo.epochs
        )));
    }
    let started = Instant::now();
    let config = PpoConfig {
        seed,
        ..ppo.clone()
    };
    let agent = Agent::new(&config, &Algorithm::Ppo, seed)?;
    let report = train(env, agent, &config, &Algorithm::Ppo, candidate, Some(phase.epochs))?;
    let episodes = evaluate_policy(env, &report.agent.policy, &config, phase.eval_episodes, phase.eval_seed)?;
    let metrics = MetricsAggregate::from_episodes(&episodes, started.elapsed().as_secs_f64())?;
    Ok(FpeOutcome {
        metrics,
        curves: report.epochs,
        policy: report.agent.policy,
        env_steps: report.env_steps,
    })
}

#[derive(Debug, Clone)]
pub struct FpeJob {
    pub candidate: Option<CostExpr>,
    pub phase: EvalPhase,
}

/// Runs `jobs` on `workers` threads. Results come back in job order.
pub fn run_pool(
    jobs: &[FpeJob],
    env: &EnvConfig,
    ppo: &PpoConfig,
    seed: u64,
    workers: usize,
) -> Vec<Result<FpeOutcome, FpeError>> {
    let workers = workers.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let result = fpe_run(job.candidate.as_ref(), &job.phase, env, ppo, seed);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<Result<FpeOutcome, FpeError>>> = (0..jobs.len()).map(|_| None).collect();
    for (i, r) in rx {
        slots[i] = Some(r);
    }
    slots
        .into_iter()
        .map(|s| s.expect("every job reports once"))
        .collect()
}
