use rand::Rng;
use rand_distr::StandardNormal;

use super::{Mlp, NnError};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian over actions whose mean is an MLP of the observation
/// and whose log standard deviation is a free, state-independent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(mean_net: Mlp, log_std: Vec<f64>) -> Result<Self, NnError> {
        if log_std.len() != mean_net.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: mean_net.output_dim(),
                actual: log_std.len(),
            });
        }
        let mut p = GaussianPolicy { mean_net, log_std };
        p.clamp_log_std();
        Ok(p)
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn log_std_mut(&mut self) -> &mut [f64] {
        &mut self.log_std
    }

    pub fn clamp_log_std(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.mean_net.forward(obs)
    }

    /// Draws an unclamped action and returns it with its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), NnError> {
        let mean = self.mean(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s.exp() * z
            })
            .collect();
        let lp = log_prob_given_mean(&mean, &self.log_std, &action);
        Ok((action, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64, NnError> {
        let mean = self.mean(obs)?;
        if action.len() != mean.len() {
            return Err(NnError::DimensionMismatch {
                expected: mean.len(),
                actual: action.len(),
            });
        }
        Ok(log_prob_given_mean(&mean, &self.log_std, action))
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|s| s + 0.5 + HALF_LN_2PI).sum()
    }
}

pub fn log_prob_given_mean(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

/// Partial derivatives of `log_prob_given_mean` with respect to the mean and
/// the log standard deviation.
pub fn log_prob_grads(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_log_std = Vec::with_capacity(mean.len());
    for ((m, s), a) in mean.iter().zip(log_std).zip(action) {
        let var = (2.0 * s).exp();
        let diff = a - m;
        d_mean.push(diff / var);
        d_log_std.push(diff * diff / var - 1.0);
    }
    (d_mean, d_log_std)
}
