use serde::{Deserialize, Serialize};

/// Dual variable for the expected-cost constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda: f64,
    pub lambda_lr: f64,
    pub cost_limit: f64,
}

impl LagrangeState {
    pub fn new(lambda: f64, lambda_lr: f64, cost_limit: f64) -> Self {
        LagrangeState {
            lambda: lambda.max(0.0),
            lambda_lr,
            cost_limit,
        }
    }

    /// Projected dual ascent: `lambda <- max(0, lambda + lr * (cost - d))`.
    pub fn update(self, measured_cost: f64) -> Self {
        LagrangeState {
            lambda: (self.lambda + self.lambda_lr * (measured_cost - self.cost_limit)).max(0.0),
            ..self
        }
    }

    /// Mixes reward and cost advantages as `(A_r - lambda * A_c) / (1 + lambda)`.
    pub fn mix_advantage(&self, reward_adv: f64, cost_adv: f64) -> f64 {
        (reward_adv - self.lambda * cost_adv) / (1.0 + self.lambda)
    }
}
