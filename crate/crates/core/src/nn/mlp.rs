use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NnError;

/// Fully connected network: tanh on hidden layers, identity on the output.
///
/// Parameters live in one flat vector, layer by layer, each layer storing its
/// `n_out x n_in` weight matrix row-major followed by its `n_out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations from a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(NnError::InvalidArgument(format!(
                "layer sizes must have >= 2 nonzero entries, got {sizes:?}"
            )));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Gaussian init with std `gain / sqrt(n_in)`; the output layer uses
    /// `output_gain` instead. Biases start at zero.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes)?;
        let layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let g = if l + 1 == layers { output_gain } else { gain };
            let normal = Normal::new(0.0, g / (n_in as f64).sqrt()).expect("valid std");
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = normal.sample(rng);
            }
            off += n_in * n_out + n_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(NnError::InvalidArgument(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight matrix (row-major) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off: usize = param_count(&self.sizes[..=l]);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        (w, b)
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_cached(input)?.acts.pop().expect("output"))
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache, NnError> {
        self.check_input(input)?;
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        for l in 0..layers {
            let (w, b) = self.layer(l);
            let x = &acts[l];
            let n_in = self.sizes[l];
            let mut y: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
        Ok(ForwardCache { acts })
    }

    /// Gradient of `output_grad · net(input)` with respect to the parameters.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Vec<f64>, NnError> {
        let cache = self.forward_cached(input)?;
        let mut grads = vec![0.0; self.params.len()];
        self.accumulate_gradient(&cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradient for one cached sample into `grads`.
    pub fn accumulate_gradient(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<(), NnError> {
        if output_grad.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.params.len(),
                actual: grads.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        let mut delta = output_grad.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = param_count(&self.sizes[..=l]);
            let x = &cache.acts[l];
            {
                let (gw, rest) = grads[off..].split_at_mut(n_in * n_out);
                let gb = &mut rest[..n_out];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(l);
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            // tanh'(z) = 1 - tanh(z)^2, and acts[l] holds tanh(z).
            for (p, a) in prev.iter_mut().zip(&cache.acts[l]) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count_formula() {
        let net = Mlp::zeros(&[4, 8, 2]).unwrap();
        assert_eq!(net.num_params(), 4 * 8 + 8 + 8 * 2 + 2);
        assert!(Mlp::zeros(&[3]).is_err());
        assert!(Mlp::zeros(&[3, 0, 1]).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let net = Mlp::from_params(&[2, 2], params).unwrap();
        assert_eq!(net.forward(&[0.3, -7.0]).unwrap(), vec![0.3, -7.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(NnError::DimensionMismatch { .. })));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradient_and_backward_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::random(&[4, 8, 2], 1.0, 1.0, &mut rng).unwrap();
        let x = [0.1, -0.4, 0.9, 0.0];
        assert!(net.backward(&x, &[0.0, 0.0]).unwrap().iter().all(|&g| g == 0.0));
        let g1 = net.backward(&x, &[0.7, -1.3]).unwrap();
        let g2 = net.backward(&x, &[1.4, -2.6]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
