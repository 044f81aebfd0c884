//! Point robot in a square arena with a fixed goal circle and fixed hazard
//! circles.
//!
//! The robot is a double integrator. Reward is progress toward the goal plus
//! a terminal bonus; cost is 1 for every step whose resulting position lies
//! strictly inside a hazard. Touching a hazard never ends the episode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::FeatureSource;

/// Observation layout, in order. Bump [`FEATURE_REGISTRY_VERSION`] whenever
/// this list changes.
pub const FEATURE_NAMES: [&str; 11] = [
    "x",
    "y",
    "vx",
    "vy",
    "goal_dx",
    "goal_dy",
    "dist_goal",
    "dist_hazard_min",
    "in_hazard",
    "speed",
    "progress",
];

pub const FEATURE_REGISTRY_VERSION: u32 = 1;

pub const OBS_DIM: usize = FEATURE_NAMES.len();
pub const ACTION_DIM: usize = 2;

pub fn feature_registry() -> &'static [&'static str] {
    &FEATURE_NAMES
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("invalid state: {0}")]
    InvalidState(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Circle {
            center: [x, y],
            radius,
        }
    }

    pub fn center_distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1])
    }

    /// Signed distance to the boundary; negative inside.
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        self.center_distance(p) - self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub arena_half_extent: f64,
    pub hazards: Vec<Circle>,
    pub goal: Circle,
    pub dt: f64,
    pub max_speed: f64,
    pub accel_gain: f64,
    pub max_episode_steps: usize,
    pub goal_bonus: f64,
    pub progress_coefficient: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            arena_half_extent: 2.0,
            hazards: vec![Circle::new(0.0, 0.5, 0.5), Circle::new(0.8, -0.4, 0.5)],
            goal: Circle::new(1.5, 1.5, 0.3),
            dt: 0.1,
            max_speed: 1.0,
            accel_gain: 3.0,
            max_episode_steps: 300,
            goal_bonus: 1.0,
            progress_coefficient: 1.0,
        }
    }
}

impl EnvConfig {
    /// Same arena and goal, no hazards.
    pub fn hazard_free() -> Self {
        EnvConfig {
            hazards: Vec::new(),
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        let h = self.arena_half_extent;
        if !(h > 0.0 && h.is_finite()) {
            return bad(format!("arena_half_extent must be > 0, got {h}"));
        }
        let inside = |c: &Circle| {
            c.center
                .iter()
                .all(|&v| v - c.radius >= -h && v + c.radius <= h)
        };
        for (i, c) in self
            .hazards
            .iter()
            .chain(std::iter::once(&self.goal))
            .enumerate()
        {
            let label = if i < self.hazards.len() {
                format!("hazard {i}")
            } else {
                "goal".to_string()
            };
            if !(c.radius > 0.0) {
                return bad(format!("{label} radius must be > 0"));
            }
            if !inside(c) {
                return bad(format!("{label} does not lie inside the arena"));
            }
        }
        if !(self.dt > 0.0) || !(self.max_speed > 0.0) || !(self.accel_gain > 0.0) {
            return bad("dt, max_speed and accel_gain must be > 0".into());
        }
        if self.max_episode_steps == 0 {
            return bad("max_episode_steps must be >= 1".into());
        }
        Ok(())
    }

    /// Signed distance from `p` to the nearest hazard boundary. With no
    /// hazards this is the distance to the farthest arena corner, a finite
    /// stand-in for "infinitely far".
    pub fn hazard_distance(&self, p: [f64; 2]) -> f64 {
        self.hazards
            .iter()
            .map(|c| c.boundary_distance(p))
            .reduce(f64::min)
            .unwrap_or(2.0 * std::f64::consts::SQRT_2 * self.arena_half_extent)
    }

    pub fn in_hazard(&self, p: [f64; 2]) -> bool {
        self.hazard_distance(p) < 0.0
    }

    pub fn in_goal(&self, p: [f64; 2]) -> bool {
        self.goal.center_distance(p) < self.goal.radius
    }

    /// Features of a robot resting at `p` (zero velocity, zero progress).
    pub fn features_at(&self, p: [f64; 2]) -> Observation {
        Observation::compute(self, p, [0.0, 0.0], 0.0)
    }
}

/// The 11-feature observation vector, ordered as [`FEATURE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    fn compute(cfg: &EnvConfig, p: [f64; 2], v: [f64; 2], progress: f64) -> Self {
        let goal_dx = cfg.goal.center[0] - p[0];
        let goal_dy = cfg.goal.center[1] - p[1];
        let dist_hazard_min = cfg.hazard_distance(p);
        Observation([
            p[0],
            p[1],
            v[0],
            v[1],
            goal_dx,
            goal_dy,
            goal_dx.hypot(goal_dy),
            dist_hazard_min,
            if dist_hazard_min < 0.0 { 1.0 } else { 0.0 },
            v[0].hypot(v[1]),
            progress,
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.0[i])
    }

    pub fn position(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }

    pub fn dist_goal(&self) -> f64 {
        self.0[6]
    }

    pub fn in_hazard(&self) -> bool {
        self.0[8] > 0.5
    }
}

impl FeatureSource for Observation {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Goal,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
}

/// A live episode. Not `Sync`-shared; clone the config into one instance per worker.
#[derive(Debug, Clone)]
pub struct PointGoalEnv {
    config: EnvConfig,
    position: [f64; 2],
    velocity: [f64; 2],
    steps: usize,
    started: bool,
    done: bool,
}

const MAX_SPAWN_ATTEMPTS: usize = 10_000;

impl PointGoalEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(PointGoalEnv {
            config,
            position: [0.0, 0.0],
            velocity: [0.0, 0.0],
            steps: 0,
            started: false,
            done: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Places the robot uniformly at random outside every hazard and the goal.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = self.config.arena_half_extent;
        let spawn = (0..MAX_SPAWN_ATTEMPTS)
            .map(|_| [rng.gen_range(-h..=h), rng.gen_range(-h..=h)])
            .find(|&p| !self.config.in_hazard(p) && self.config.goal.center_distance(p) > self.config.goal.radius)
            .ok_or_else(|| EnvError::InvalidConfig("no free area to spawn the robot".into()))?;
        self.place(spawn);
        Ok(self.observation(0.0))
    }

    /// Starts an episode from an explicit resting position.
    pub fn reset_at(&mut self, position: [f64; 2]) -> Observation {
        self.place(position);
        self.observation(0.0)
    }

    fn place(&mut self, p: [f64; 2]) {
        self.position = p;
        self.velocity = [0.0, 0.0];
        self.steps = 0;
        self.started = true;
        self.done = false;
    }

    pub fn observation(&self, progress: f64) -> Observation {
        Observation::compute(&self.config, self.position, self.velocity, progress)
    }

    pub fn step(&mut self, action: [f64; 2]) -> Result<StepResult, EnvError> {
        if !self.started {
            return Err(EnvError::InvalidState("step called before reset"));
        }
        if self.done {
            return Err(EnvError::InvalidState("step called after episode end"));
        }
        let cfg = &self.config;
        let prev_dist = cfg.goal.center_distance(self.position);

        let a = action.map(|x| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) });
        for i in 0..2 {
            self.velocity[i] += a[i] * cfg.accel_gain * cfg.dt;
        }
        let speed = self.velocity[0].hypot(self.velocity[1]);
        if speed > cfg.max_speed {
            let k = cfg.max_speed / speed;
            self.velocity = self.velocity.map(|v| v * k);
        }
        let h = cfg.arena_half_extent;
        for i in 0..2 {
            self.position[i] = (self.position[i] + self.velocity[i] * cfg.dt).clamp(-h, h);
        }
        self.steps += 1;

        let dist = cfg.goal.center_distance(self.position);
        let progress = prev_dist - dist;
        let reached = cfg.in_goal(self.position);
        let reward = cfg.progress_coefficient * progress + if reached { cfg.goal_bonus } else { 0.0 };
        let cost = if cfg.in_hazard(self.position) { 1.0 } else { 0.0 };
        let done_reason = if reached {
            Some(DoneReason::Goal)
        } else if self.steps >= cfg.max_episode_steps {
            Some(DoneReason::Timeout)
        } else {
            None
        };
        self.done = done_reason.is_some();
        Ok(StepResult {
            observation: self.observation(progress),
            reward,
            cost,
            done: self.done,
            done_reason,
        })
    }
}
