//! Small dense networks with tanh hidden units and hand-written backprop.

use mavic_core::SimRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Parameters are stored flat: for each layer the `out x in` weight matrix
/// (row-major) followed by the `out` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    /// `layers[0]` is the input, the last entry the (linear) output.
    layers: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("non-empty")
    }
}

impl Mlp {
    /// Glorot-uniform hidden layers; the output layer starts at
    /// `output_scale` times that range (0 gives a zero output layer).
    pub fn new(input: usize, hidden: &[usize], output: usize, output_scale: f64, rng: &mut SimRng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut params = Vec::with_capacity(Self::count(&sizes));
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
            if l + 1 == layers {
                limit *= output_scale;
            }
            for _ in 0..fan_in * fan_out {
                params.push(if limit > 0.0 { rng.random_range(-limit..limit) } else { 0.0 });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes, params }
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64]) -> Cache {
        assert_eq!(input.len(), self.sizes[0], "network input size");
        let mut layers = vec![input.to_vec()];
        let mut offset = 0;
        let n = self.sizes.len() - 1;
        for l in 0..n {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let x = layers.last().expect("non-empty");
            let mut out: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + w[o * fan_in..(o + 1) * fan_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l + 1 < n {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(out);
        }
        Cache { layers }
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).layers.pop().expect("non-empty")
    }

    /// Adds `scale * d(out . grad_out)/d(params)` into `grads`.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], scale: f64, grads: &mut [f64]) {
        let n = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n);
        let mut offset = 0;
        for l in 0..n {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta: Vec<f64> = grad_out.iter().map(|g| g * scale).collect();
        for l in (0..n).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let x = &cache.layers[l];
            let off = offsets[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grads[off + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    for i in 0..fan_in {
                        prev[i] += w[o * fan_in + i] * delta[o];
                    }
                }
                // x is the tanh output of layer l.
                for (p, xi) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - xi * xi;
                }
                delta = prev;
            }
        }
    }

    /// `params -= lr * grads`, after rescaling `grads` to norm at most `clip`.
    /// Returns the pre-clip norm.
    pub fn sgd_step(&mut self, grads: &[f64], lr: f64, clip: Option<f64>) -> f64 {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let factor = match clip {
            Some(c) if norm > c && norm > 0.0 => c / norm,
            _ => 1.0,
        };
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p -= lr * factor * g;
        }
        norm
    }
}

/// Softmax over the entries where `mask` is true; masked entries get 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mavic_core::seeded_rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded_rng(1);
        let mut net = Mlp::new(4, &[5, 3], 2, 1.0, &mut rng);
        let x = [0.3, -0.2, 0.9, 0.1];
        let w = [0.7, -1.3];
        let f = |net: &Mlp| net.predict(&x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let mut grads = vec![0.0; net.param_count()];
        let cache = net.forward(&x);
        net.backward(&cache, &w, 1.0, &mut grads);
        for i in 0..net.param_count() {
            let orig = net.params[i];
            net.params[i] = orig + 1e-6;
            let up = f(&net);
            net.params[i] = orig - 1e-6;
            let down = f(&net);
            net.params[i] = orig;
            assert!((grads[i] - (up - down) / 2e-6).abs() < 1e-7, "param {i}");
        }
    }

    #[test]
    fn masked_entries_get_zero_probability() {
        let p = masked_softmax(&[1.0, 50.0, 2.0], &[true, false, true]);
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[0]);
    }

    #[test]
    fn zero_output_scale_gives_zero_output() {
        let net = Mlp::new(3, &[4], 2, 0.0, &mut seeded_rng(0));
        assert_eq!(net.predict(&[1.0, 2.0, 3.0]), vec![0.0, 0.0]);
    }
}
