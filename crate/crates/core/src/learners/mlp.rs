//! Fully-connected regression net: tanh hidden layers, linear output,
//! squared-error loss, mini-batch gradient descent.
//!
//! Inputs and the response are standardized internally (statistics stored on
//! the model), weights use Xavier-uniform init from a seeded stream, and the
//! per-epoch shuffle is seeded, so training is bit-reproducible.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self { hidden: vec![64, 64, 64], learning_rate: 1e-3, epochs: 200, batch_size: 128 }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("mlp hidden widths must all be >= 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("mlp epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("mlp learning rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    y_mean: f64,
    y_std: f64,
}

impl Mlp {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut a: Vec<f64> = features
            .iter()
            .zip(self.x_mean.iter().zip(&self.x_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut out = vec![0.0; w.ncols()];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = b[j];
                for (i, v) in a.iter().enumerate() {
                    acc += v * w[(i, j)];
                }
                *o = if k < last { acc.tanh() } else { acc };
            }
            a = out;
        }
        self.y_mean + self.y_std * a[0]
    }

    /// Net with all weights and biases zero and identity output transform.
    /// Prediction is then exactly the final bias. Test hook.
    pub fn zeroed(sizes: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            weights.push(Array2::zeros((w[0], w[1])));
            biases.push(Array1::zeros(w[1]));
        }
        Self {
            weights,
            biases,
            x_mean: vec![0.0; sizes[0]],
            x_std: vec![1.0; sizes[0]],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    pub fn set_output_bias(&mut self, b: f64) {
        let last = self.biases.len() - 1;
        self.biases[last][0] = b;
    }
}

pub fn fit_mlp(xs: &[Vec<f64>], ys: &[f64], params: &MlpParams, seed: u64) -> Result<Mlp> {
    params.validate()?;
    let n = xs.len();
    if n == 0 {
        return Err(Error::ShapeMismatch("mlp training set is empty".into()));
    }
    let p = xs[0].len();

    let mut x_mean = vec![0.0; p];
    let mut x_std = vec![0.0; p];
    for row in xs {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut x_mean {
        *m /= n as f64;
    }
    for row in xs {
        for ((s, m), v) in x_std.iter_mut().zip(&x_mean).zip(row) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut x_std {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let mut y_std = (ys.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n as f64).sqrt();
    if y_std == 0.0 {
        y_std = 1.0;
    }

    let xz = Array2::from_shape_fn((n, p), |(i, j)| (xs[i][j] - x_mean[j]) / x_std[j]);
    let yz = Array1::from_iter(ys.iter().map(|v| (v - y_mean) / y_std));

    let mut sizes = vec![p];
    sizes.extend_from_slice(&params.hidden);
    sizes.push(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<Array2<f64>> = Vec::new();
    let mut biases: Vec<Array1<f64>> = Vec::new();
    for w in sizes.windows(2) {
        let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
        weights.push(Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-bound..bound)));
        biases.push(Array1::zeros(w[1]));
    }

    let n_layers = weights.len();
    let lr = params.learning_rate;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..params.epochs {
        // Seeded in-epoch shuffle.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(params.batch_size) {
            let b = chunk.len();
            let xb = Array2::from_shape_fn((b, p), |(i, j)| xz[(chunk[i], j)]);
            let yb = Array1::from_iter(chunk.iter().map(|&i| yz[i]));

            // Forward pass, keeping activations per layer.
            let mut acts: Vec<Array2<f64>> = vec![xb];
            for k in 0..n_layers {
                let mut z = acts[k].dot(&weights[k]);
                z += &biases[k];
                if k < n_layers - 1 {
                    z.mapv_inplace(f64::tanh);
                }
                acts.push(z);
            }

            // Backward pass: d(mean squared error)/d(output).
            let out = acts[n_layers].index_axis(Axis(1), 0);
            let mut delta: Array2<f64> = Array2::from_shape_fn((b, 1), |(i, _)| {
                2.0 * (out[i] - yb[i]) / b as f64
            });
            for k in (0..n_layers).rev() {
                let grad_w = acts[k].t().dot(&delta);
                let grad_b = delta.sum_axis(Axis(0));
                if k > 0 {
                    let mut back = delta.dot(&weights[k].t());
                    // tanh' = 1 - tanh^2, and acts[k] already holds tanh values.
                    back.zip_mut_with(&acts[k], |d, a| *d *= 1.0 - a * a);
                    delta = back;
                }
                weights[k].scaled_add(-lr, &grad_w);
                biases[k].scaled_add(-lr, &grad_b);
            }
        }
    }

    Ok(Mlp { weights, biases, x_mean, x_std, y_mean, y_std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_weight_net_predicts_the_final_bias() {
        let mut net = Mlp::zeroed(&[3, 4, 1]);
        net.set_output_bias(0.42);
        assert_relative_eq!(net.predict(&[1.0, -2.0, 7.0]), 0.42);
        assert_relative_eq!(net.predict(&[0.0, 0.0, 0.0]), 0.42);
    }

    #[test]
    fn learns_a_linear_map() {
        let xs: Vec<Vec<f64>> = (0..200).map(|i| {
            let t = i as f64 / 20.0;
            vec![t.sin(), t.cos()]
        }).collect();
        let ys: Vec<f64> = xs.iter().map(|r| 3.0 * r[0] - r[1]).collect();
        let params = MlpParams { hidden: vec![16, 16], learning_rate: 5e-3, epochs: 400, batch_size: 32 };
        let net = fit_mlp(&xs, &ys, &params, 5).unwrap();
        let mse: f64 = xs.iter().zip(&ys).map(|(x, y)| (net.predict(x) - y).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mse < 0.05, "mse = {mse}");
    }

    #[test]
    fn training_is_deterministic() {
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 10.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|r| r[0] * r[0]).collect();
        let params = MlpParams { hidden: vec![8], learning_rate: 1e-2, epochs: 30, batch_size: 16 };
        let a = fit_mlp(&xs, &ys, &params, 7).unwrap();
        let b = fit_mlp(&xs, &ys, &params, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
