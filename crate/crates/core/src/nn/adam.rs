use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place (descent direction).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.m.len(),
                actual: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_with_unit_gradient() {
        let mut adam = AdamState::new(3, 0.01);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        adam.step(&mut p, &[1.0, 1.0, 1.0]).unwrap();
        let want = -0.01 * (1.0 / (1.0 + 1e-8));
        for (a, b) in p.iter().zip(&before) {
            assert!((a - b - want).abs() < 1e-15);
        }
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(2, 0.1);
        let mut p = vec![0.3, 0.4];
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.3, 0.4]);
    }

    #[test]
    fn two_steps_match_hand_computed_moments() {
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let mut adam = AdamState::new(1, lr);
        let mut p = vec![0.0];
        let (g1, g2) = (2.0, -1.0);
        adam.step(&mut p, &[g1]).unwrap();
        adam.step(&mut p, &[g2]).unwrap();

        let m1 = (1.0 - b1) * g1;
        let v1 = (1.0 - b2) * g1 * g1;
        let p1 = 0.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
        let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

        assert!((adam.first_moment()[0] - m2).abs() < 1e-15);
        assert!((adam.second_moment()[0] - v2).abs() < 1e-15);
        assert!((p[0] - p2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = AdamState::new(2, 0.1);
        assert!(adam.step(&mut [0.0], &[0.0]).is_err());
        assert!(adam.step(&mut [0.0, 0.0], &[0.0]).is_err());
    }
}
