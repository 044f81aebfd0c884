//! Constrained-MDP bookkeeping: discounted returns, safety requirements and
//! the constrained fitness score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CmdpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Default value of the "large" penalty returned for infeasible policies.
pub const DEFAULT_INFEASIBLE_PENALTY: f64 = 1e6;

/// `Σ_t gamma^t · values[t]`.
pub fn discounted_return(values: &[f64], gamma: f64) -> Result<f64, CmdpError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CmdpError::InvalidArgument(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for &v in values {
        total += discount * v;
        discount *= gamma;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementKind {
    Traditional,
    ZeroViolation,
    AlmostSurely,
}

/// What "safe" means for a task.
///
/// `ZeroViolation` ignores `d` and tests against zero. `AlmostSurely` bounds
/// the share of episodes whose cost exceeds `d` by `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyRequirement {
    pub kind: RequirementKind,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub epsilon: f64,
}

impl SafetyRequirement {
    pub fn traditional(d: f64) -> Result<Self, CmdpError> {
        Self::new(RequirementKind::Traditional, d, 0.0)
    }

    pub fn zero_violation() -> Self {
        SafetyRequirement {
            kind: RequirementKind::ZeroViolation,
            d: 0.0,
            epsilon: 0.0,
        }
    }

    pub fn almost_surely(d: f64, epsilon: f64) -> Result<Self, CmdpError> {
        Self::new(RequirementKind::AlmostSurely, d, epsilon)
    }

    pub fn new(kind: RequirementKind, d: f64, epsilon: f64) -> Result<Self, CmdpError> {
        let req = SafetyRequirement { kind, d, epsilon };
        req.check()?;
        Ok(req)
    }

    pub fn check(&self) -> Result<(), CmdpError> {
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(CmdpError::InvalidArgument(format!("d must be >= 0, got {}", self.d)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(CmdpError::InvalidArgument(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Cost threshold actually applied by the cumulative predicate.
    pub fn effective_limit(&self) -> f64 {
        match self.kind {
            RequirementKind::ZeroViolation => 0.0,
            _ => self.d,
        }
    }

    pub fn describe(&self) -> String {
        match self.kind {
            RequirementKind::Traditional => format!(
                "Traditional: the expected discounted cumulative cost per episode must stay at or below d = {}.",
                self.d
            ),
            RequirementKind::ZeroViolation => {
                "Zero violation: the discounted cumulative cost must be exactly 0 (never enter a hazard).".to_string()
            }
            RequirementKind::AlmostSurely => format!(
                "Almost surely: at most a fraction {} of episodes may exceed a discounted cumulative cost of d = {}.",
                self.epsilon, self.d
            ),
        }
    }
}

/// One recorded environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub observation: Vec<f64>,
    pub action: [f64; 2],
    pub reward: f64,
    pub cost: f64,
    pub shaped_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub terminated_at_goal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn stats(&self, gamma: f64) -> Result<EpisodeStats, CmdpError> {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        let costs: Vec<f64> = self.steps.iter().map(|s| s.cost).collect();
        Ok(EpisodeStats::new(
            discounted_return(&rewards, gamma)?,
            discounted_return(&costs, gamma)?,
            costs.iter().sum(),
            self.terminated_at_goal,
        ))
    }
}

/// Per-episode summary used by every metric and safety predicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub j_r: f64,
    pub j_c: f64,
    pub undiscounted_cost: f64,
    pub reached_goal: bool,
    pub touched_hazard: bool,
}

impl EpisodeStats {
    pub fn new(j_r: f64, j_c: f64, undiscounted_cost: f64, reached_goal: bool) -> Self {
        EpisodeStats {
            j_r,
            j_c,
            undiscounted_cost,
            reached_goal,
            touched_hazard: undiscounted_cost > 0.0,
        }
    }
}

/// Whether a set of evaluation episodes meets `req`.
pub fn satisfies(req: &SafetyRequirement, episodes: &[EpisodeStats]) -> Result<bool, CmdpError> {
    if episodes.is_empty() {
        return Err(CmdpError::InvalidArgument("no episodes to judge".into()));
    }
    let n = episodes.len() as f64;
    Ok(match req.kind {
        RequirementKind::Traditional | RequirementKind::ZeroViolation => {
            let mean = episodes.iter().map(|e| e.j_c).sum::<f64>() / n;
            mean <= req.effective_limit()
        }
        RequirementKind::AlmostSurely => {
            let violating = episodes.iter().filter(|e| e.j_c > req.d).count() as f64;
            violating / n <= req.epsilon
        }
    })
}

/// Constrained fitness: the reward when the cost limit holds, `-n` otherwise.
/// A cost exactly at the limit counts as feasible.
pub fn constrained_fitness(j_r: f64, j_c: f64, d: f64, n: f64) -> Result<f64, CmdpError> {
    if !(n > 0.0) {
        return Err(CmdpError::InvalidArgument(format!("n must be > 0, got {n}")));
    }
    Ok(if j_c > d { -n } else { j_r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ep(j_c: f64) -> EpisodeStats {
        EpisodeStats::new(1.0, j_c, j_c, false)
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5).unwrap(), 1.75);
        assert_eq!(discounted_return(&[], 0.9).unwrap(), 0.0);
        assert_eq!(discounted_return(&[0.0, 1.0, 0.0], 0.9).unwrap(), 0.9);
        assert!(discounted_return(&[1.0], 1.5).is_err());
        assert!(discounted_return(&[1.0], -0.1).is_err());
    }

    #[test]
    fn satisfies_examples() {
        let req = SafetyRequirement::traditional(10.0).unwrap();
        let eps = [ep(9.0), ep(10.0)];
        assert!(satisfies(&req, &eps).unwrap());

        let zero = SafetyRequirement::zero_violation();
        assert!(satisfies(&zero, &[ep(0.0), ep(0.0)]).unwrap());
        assert!(!satisfies(&zero, &[ep(0.0), ep(0.1)]).unwrap());

        let almost = SafetyRequirement::almost_surely(10.0, 0.05).unwrap();
        let batch = |violating: usize| -> Vec<EpisodeStats> {
            (0..100).map(|i| if i < violating { ep(11.0) } else { ep(3.0) }).collect()
        };
        assert!(satisfies(&almost, &batch(4)).unwrap());
        assert!(satisfies(&almost, &batch(5)).unwrap());
        assert!(!satisfies(&almost, &batch(6)).unwrap());

        assert!(satisfies(&req, &[]).is_err());
    }

    #[test]
    fn requirement_validation() {
        assert!(SafetyRequirement::traditional(-1.0).is_err());
        assert!(SafetyRequirement::almost_surely(1.0, 1.5).is_err());
    }

    #[test]
    fn fitness_examples() {
        assert_eq!(constrained_fitness(5.0, 12.0, 10.0, 1e6).unwrap(), -1e6);
        assert_eq!(constrained_fitness(5.0, 10.0, 10.0, 1e6).unwrap(), 5.0);
        assert_eq!(constrained_fitness(-2.0, 0.0, 0.0, 1e6).unwrap(), -2.0);
        assert!(constrained_fitness(1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn trajectory_stats() {
        let step = |reward, cost| StepRecord {
            observation: vec![],
            action: [0.0, 0.0],
            reward,
            cost,
            shaped_reward: reward,
        };
        let t = Trajectory {
            steps: vec![step(1.0, 0.0), step(1.0, 1.0), step(1.0, 1.0)],
            terminated_at_goal: true,
        };
        let s = t.stats(0.5).unwrap();
        assert_eq!(s.j_r, 1.75);
        assert_eq!(s.j_c, 0.75);
        assert_eq!(s.undiscounted_cost, 2.0);
        assert!(s.touched_hazard && s.reached_goal);
    }

    proptest! {
        #[test]
        fn gamma_extremes(values in prop::collection::vec(-10.0f64..10.0, 0..20)) {
            let plain: f64 = values.iter().sum();
            prop_assert!((discounted_return(&values, 1.0).unwrap() - plain).abs() < 1e-9);
            let first = values.first().copied().unwrap_or(0.0);
            prop_assert_eq!(discounted_return(&values, 0.0).unwrap(), first);
        }

        #[test]
        fn fitness_monotone_on_feasible_branch(
            a in -100.0f64..100.0, b in -100.0f64..100.0,
            j_c in 0.0f64..20.0, d in 0.0f64..20.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let f_lo = constrained_fitness(lo, j_c, d, 1e6).unwrap();
            let f_hi = constrained_fitness(hi, j_c, d, 1e6).unwrap();
            prop_assert!(f_lo <= f_hi);
            if j_c > d {
                prop_assert_eq!(f_lo, -1e6);
                prop_assert_eq!(f_hi, -1e6);
            }
        }

        #[test]
        fn zero_violation_implies_every_traditional(
            costs in prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..5.0], 1..30),
            d in 0.0f64..10.0,
        ) {
            let eps: Vec<_> = costs.iter().map(|&c| ep(c)).collect();
            if satisfies(&SafetyRequirement::zero_violation(), &eps).unwrap() {
                prop_assert!(satisfies(&SafetyRequirement::traditional(d).unwrap(), &eps).unwrap());
            }
        }

        #[test]
        fn almost_surely_with_zero_epsilon_is_pointwise(
            costs in prop::collection::vec(0.0f64..20.0, 1..30),
            d in 0.0f64..20.0,
        ) {
            let eps: Vec<_> = costs.iter().map(|&c| ep(c)).collect();
            let req = SafetyRequirement::almost_surely(d, 0.0).unwrap();
            if satisfies(&req, &eps).unwrap() {
                prop_assert!(eps.iter().all(|e| e.j_c <= d));
            }
        }
    }
}
