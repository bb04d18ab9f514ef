//! Minimal dense-network building blocks with hand-rolled backpropagation:
//! linear layers, two activations, multilayer perceptrons with forward
//! caches, parameter flattening, and the Adam optimizer.
//!
//! Conventions: activations are row vectors, so a batch is `(rows, features)`
//! and a layer computes `y = x W + b` with `W` of shape `(in, out)`.
//! Parameter flattening visits layers in order, each as row-major `W` then
//! `b`; gradients flatten in the identical order.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Elementwise nonlinearity applied between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activated output `y = f(x)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Shape `(fan_in, fan_out)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Uniform fan-in initialization: weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
        Self { w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulate parameter gradients for upstream gradient `dy` at input
    /// `x`, returning the gradient with respect to `x`.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        dw: &mut Array2<f64>,
        db: &mut Array1<f64>,
    ) -> Array2<f64> {
        *dw += &x.t().dot(dy);
        *db += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.w.iter());
        out.extend(self.b.iter());
    }

    /// Read parameters back in [`Self::write_params`] order, advancing the
    /// cursor.
    pub fn read_params(&mut self, src: &[f64], cursor: &mut usize) {
        for v in self.w.iter_mut() {
            *v = src[*cursor];
            *cursor += 1;
        }
        for v in self.b.iter_mut() {
            *v = src[*cursor];
            *cursor += 1;
        }
    }
}

/// Multilayer perceptron: linear layers with the activation between them
/// (none after the final layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Forward-pass cache: the input seen by each layer (the entry `i + 1` is
/// layer `i`'s activated output).
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub layer_inputs: Vec<Array2<f64>>,
}

/// Gradient accumulators mirroring [`Mlp::layers`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn scale(&mut self, factor: f64) {
        for (dw, db) in &mut self.layers {
            *dw *= factor;
            *db *= factor;
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (dw, db) in &self.layers {
            out.extend(dw.iter());
            out.extend(db.iter());
        }
    }
}

impl Mlp {
    /// Build from `widths = [in, hidden..., out]` with seeded initialization.
    pub fn init(widths: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs an input and an output width");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        let layers =
            widths.windows(2).map(|pair| Linear::init(pair[0], pair[1], rng)).collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            layer_inputs.push(current.clone());
            current = layer.forward(&current);
            if i + 1 < self.layers.len() {
                current.mapv_inplace(|v| self.activation.apply(v));
            }
        }
        (current, MlpCache { layer_inputs })
    }

    /// Backpropagate `dy` (gradient at the output), accumulating into
    /// `grads` and returning the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>, grads: &mut MlpGrads) -> Array2<f64> {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                // `layer_inputs[i + 1]` is this layer's activated output.
                let activated = &cache.layer_inputs[i + 1];
                d.zip_mut_with(activated, |g, &y| {
                    *g *= self.activation.derivative_from_output(y)
                });
            }
            let (dw, db) = &mut grads.layers[i];
            d = self.layers[i].backward(&cache.layer_inputs[i], &d, dw, db);
        }
        d
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.write_params(out);
        }
    }

    pub fn read_params(&mut self, src: &[f64], cursor: &mut usize) {
        for layer in &mut self.layers {
            layer.read_params(src, cursor);
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_params(&mut out);
        out
    }

    pub fn set_params_flat(&mut self, src: &[f64]) {
        let mut cursor = 0;
        self.read_params(src, &mut cursor);
    }
}

/// Adam optimizer over a flat parameter vector (bias-corrected moments,
/// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, param_count: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed under Adam");
        assert_eq!(params.len(), grads.len(), "gradient/parameter length mismatch");
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn seeded(seed: u64) -> ChaCha8Rng {
        rng::rng_from(seed)
    }

    #[test]
    fn linear_layer_matches_hand_arithmetic() {
        let layer = Linear {
            w: Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            b: Array1::from_vec(vec![0.5, -0.5]),
        };
        let x = Array2::from_shape_vec((1, 2), vec![1.0, 1.0]).unwrap();
        let y = layer.forward(&x);
        assert_eq!(y[(0, 0)], 1.0 + 3.0 + 0.5);
        assert_eq!(y[(0, 1)], 2.0 + 4.0 - 0.5);
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = seeded(41);
        for &activation in &[Activation::Tanh, Activation::Relu] {
            let mut mlp = Mlp::init(&[4, 6, 3, 1], activation, &mut rng);
            let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
            // Scalar loss: sum of outputs.
            let loss = |m: &Mlp| m.forward(&x).sum();
            let (_, cache) = mlp.forward_cached(&x);
            let mut grads = mlp.zero_grads();
            let dy = Array2::ones((5, 1));
            let dx = mlp.backward(&cache, &dy, &mut grads);

            let mut flat = Vec::new();
            mlp.write_params(&mut flat);
            let mut flat_grads = Vec::new();
            grads.write_flat(&mut flat_grads);
            let h = 1e-6;
            for i in 0..flat.len() {
                let mut bumped = flat.clone();
                bumped[i] += h;
                let mut cursor = 0;
                mlp.read_params(&bumped, &mut cursor);
                let up = loss(&mlp);
                bumped[i] -= 2.0 * h;
                cursor = 0;
                mlp.read_params(&bumped, &mut cursor);
                let down = loss(&mlp);
                cursor = 0;
                mlp.read_params(&flat, &mut cursor);
                let numeric = (up - down) / (2.0 * h);
                let denom = flat_grads[i].abs().max(numeric.abs()).max(1e-3);
                assert!(
                    (flat_grads[i] - numeric).abs() / denom < 1e-5,
                    "{activation:?} param {i}: {} vs {numeric}",
                    flat_grads[i]
                );
            }
            // Input gradient: bump one input entry.
            let numeric = {
                let mut xp = x.clone();
                xp[(2, 1)] += h;
                let up = mlp.forward(&xp).sum();
                xp[(2, 1)] -= 2.0 * h;
                let down = mlp.forward(&xp).sum();
                (up - down) / (2.0 * h)
            };
            assert!((dx[(2, 1)] - numeric).abs() < 1e-6);
        }
    }

    #[test]
    fn params_round_trip_exactly() {
        let mut rng = seeded(43);
        let mlp = Mlp::init(&[3, 5, 2], Activation::Tanh, &mut rng);
        let mut flat = Vec::new();
        mlp.write_params(&mut flat);
        assert_eq!(flat.len(), mlp.param_count());
        assert_eq!(mlp.param_count(), 3 * 5 + 5 + 5 * 2 + 2);
        let mut copy = Mlp::init(&[3, 5, 2], Activation::Tanh, &mut seeded(999));
        let mut cursor = 0;
        copy.read_params(&flat, &mut cursor);
        assert_eq!(cursor, flat.len());
        assert_eq!(copy, mlp);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(p) = sum (p - target)^2; Adam should converge near the target.
        let target = [1.0, -2.0, 3.0];
        let mut params = vec![0.0; 3];
        let mut adam = Adam::new(0.05, 3);
        for _ in 0..2000 {
            let grads: Vec<f64> =
                params.iter().zip(&target).map(|(p, t)| 2.0 * (p - t)).collect();
            adam.step(&mut params, &grads);
        }
        for (p, t) in params.iter().zip(&target) {
            assert!((p - t).abs() < 1e-3, "{p} vs {t}");
        }
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = Mlp::init(&[8, 4], Activation::Tanh, &mut seeded(7));
        let b = Mlp::init(&[8, 4], Activation::Tanh, &mut seeded(7));
        assert_eq!(a, b);
        let bound = 1.0 / 8f64.sqrt();
        assert!(a.layers[0].w.iter().all(|v| v.abs() <= bound));
        assert!(a.layers[0].b.iter().all(|v| v.abs() <= bound));
    }
}
