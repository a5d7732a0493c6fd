//! Multinomial-logistic propensity model over the treatment levels.
//!
//! Weights are an `n x (p_x + p_z + 1)` matrix, intercept last. Fitting
//! maximizes the L2-penalized multinomial log-likelihood (intercepts
//! unpenalized) by full-batch gradient ascent with backtracking line search,
//! starting from zero weights. Predictions are clipped onto the box
//! `[eps, 1-(n-1)*eps]` and renormalized exactly.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::learners::PropensityModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityConfig {
    /// L2 penalty on non-intercept weights.
    pub l2_penalty: f64,
    pub max_iter: usize,
    /// Convergence when the max-norm of the mean gradient drops below this.
    pub tol: f64,
    /// Clip bound applied to predicted probabilities. 0 disables clipping.
    pub clip: f64,
    /// Any weight above this magnitude flags a separation warning.
    pub weight_bound: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self { l2_penalty: 1e-3, max_iter: 500, tol: 1e-6, clip: 1e-3, weight_bound: 30.0 }
    }
}

impl PropensityConfig {
    pub fn validate(&self, n_levels: usize) -> Result<()> {
        if self.l2_penalty < 0.0 || self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("propensity: l2 >= 0, max_iter >= 1, tol > 0".into()));
        }
        if self.clip < 0.0 || self.clip * n_levels as f64 >= 1.0 {
            return Err(Error::InvalidConfig("propensity clip must satisfy 0 <= eps < 1/n".into()));
        }
        Ok(())
    }
}

/// Convergence report for a propensity fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFitInfo {
    pub converged: bool,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub separation_warning: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedPropensityModel {
    /// `n_levels x (p_x + p_z + 1)`, intercept in the last column.
    weights: Array2<f64>,
    p_x: usize,
    p_z: usize,
    pub clip: f64,
    pub fit_info: PropensityFitInfo,
}

impl FittedPropensityModel {
    /// Builds a model from explicit weights. Test and replay hook.
    pub fn from_weights(weights: Array2<f64>, p_x: usize, p_z: usize, clip: f64) -> Result<Self> {
        if weights.ncols() != p_x + p_z + 1 || weights.nrows() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "weights {}x{} incompatible with p_x={p_x}, p_z={p_z}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        Ok(Self {
            weights,
            p_x,
            p_z,
            clip,
            fit_info: PropensityFitInfo {
                converged: true,
                iterations: 0,
                final_grad_norm: 0.0,
                separation_warning: false,
            },
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl PropensityModel for FittedPropensityModel {
    fn predict(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p_x || z.len() != self.p_z {
            return Err(Error::DimensionMismatch(format!(
                "expected (p_x={}, p_z={}), got ({}, {})",
                self.p_x,
                self.p_z,
                x.len(),
                z.len()
            )));
        }
        let n = self.weights.nrows();
        let mut logits = vec![0.0; n];
        for (c, l) in logits.iter_mut().enumerate() {
            let row = self.weights.row(c);
            let mut acc = row[self.p_x + self.p_z];
            for (k, v) in x.iter().enumerate() {
                acc += row[k] * v;
            }
            for (k, v) in z.iter().enumerate() {
                acc += row[self.p_x + k] * v;
            }
            *l = acc;
        }
        let mut p = softmax(&logits);
        clip_simplex(&mut p, self.clip);
        Ok(p)
    }

    fn n_levels(&self) -> usize {
        self.weights.nrows()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|e| e / s).collect()
}

/// Projects a probability vector onto `{p : sum = 1, lo <= p_i <= hi}` with
/// `lo = eps`, `hi = 1 - (n-1)*eps`, redistributing the excess or deficit
/// proportionally to the available slack. One pass, exact, order independent.
pub fn clip_simplex(p: &mut [f64], eps: f64) {
    let n = p.len();
    if n == 0 || eps <= 0.0 {
        return;
    }
    let lo = eps;
    let hi = 1.0 - (n as f64 - 1.0) * eps;
    for v in p.iter_mut() {
        *v = v.clamp(lo, hi);
    }
    let sum: f64 = p.iter().sum();
    let over = sum - 1.0;
    if over > 0.0 {
        let slack: f64 = p.iter().map(|v| v - lo).sum();
        if slack > 0.0 {
            for v in p.iter_mut() {
                *v -= over * (*v - lo) / slack;
            }
        }
    } else if over < 0.0 {
        let slack: f64 = p.iter().map(|v| hi - v).sum();
        if slack > 0.0 {
            for v in p.iter_mut() {
                *v += (-over) * (hi - *v) / slack;
            }
        }
    }
}

/// Fits the multinomial-logistic propensity model on the given rows.
pub fn fit_propensity(
    table: &ObservationTable,
    rows: &[usize],
    config: &PropensityConfig,
) -> Result<FittedPropensityModel> {
    let n_levels = table.max_label_plus_one().max(2);
    config.validate(n_levels)?;
    let mut seen = vec![false; n_levels];
    for &r in rows {
        seen[table.label(r)] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::DegenerateSplit(
            "propensity fit needs at least 2 distinct levels in the training rows".into(),
        ));
    }

    let q = table.p_x() + table.p_z() + 1;
    let n = rows.len();
    let mut phi = Array2::zeros((n, q));
    for (i, &r) in rows.iter().enumerate() {
        for (k, v) in table.x_row(r).iter().enumerate() {
            phi[(i, k)] = *v;
        }
        for (k, v) in table.z_row(r).iter().enumerate() {
            phi[(i, table.p_x() + k)] = *v;
        }
        phi[(i, q - 1)] = 1.0;
    }
    let labels: Vec<usize> = rows.iter().map(|&r| table.label(r)).collect();

    let penalized_loglik = |w: &Array2<f64>| -> f64 {
        let logits = phi.dot(&w.t());
        let mut ll = 0.0;
        for i in 0..n {
            let row = logits.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            ll += row[labels[i]] - lse;
        }
        let mut pen = 0.0;
        for c in 0..n_levels {
            for k in 0..q - 1 {
                pen += w[(c, k)] * w[(c, k)];
            }
        }
        ll - 0.5 * config.l2_penalty * pen
    };

    let gradient = |w: &Array2<f64>| -> Array2<f64> {
        let logits = phi.dot(&w.t());
        let mut grad = Array2::zeros((n_levels, q));
        for i in 0..n {
            let probs = softmax(logits.row(i).as_slice().expect("contiguous"));
            for c in 0..n_levels {
                let coef = (if labels[i] == c { 1.0 } else { 0.0 }) - probs[c];
                for k in 0..q {
                    grad[(c, k)] += coef * phi[(i, k)];
                }
            }
        }
        for c in 0..n_levels {
            for k in 0..q - 1 {
                grad[(c, k)] -= config.l2_penalty * w[(c, k)];
            }
        }
        grad
    };

    let mut w: Array2<f64> = Array2::zeros((n_levels, q));
    let mut ll = penalized_loglik(&w);
    let mut step = 1.0 / n as f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    for it in 0..config.max_iter {
        iterations = it + 1;
        let grad = gradient(&w);
        grad_norm = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs())) / n as f64;
        if grad_norm < config.tol {
            converged = true;
            break;
        }
        // Backtracking: halve the step until the penalized likelihood improves.
        step *= 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &w + &(&grad * step);
            let trial_ll = penalized_loglik(&trial);
            if trial_ll > ll {
                w = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true; // no ascent direction at f64 resolution
            break;
        }
    }

    let separation_warning = w.iter().any(|v| v.abs() > config.weight_bound);
    if separation_warning {
        log::warn!("propensity fit: weight magnitude exceeds {}, labels may be separable", config.weight_bound);
    }

    Ok(FittedPropensityModel {
        weights: w,
        p_x: table.p_x(),
        p_z: table.p_z(),
        clip: config.clip,
        fit_info: PropensityFitInfo { converged, iterations, final_grad_norm: grad_norm, separation_warning },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{arr2, Array1};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_predict_the_uniform_vector() {
        let model = FittedPropensityModel::from_weights(Array2::zeros((4, 3)), 1, 1, 0.0).unwrap();
        let p = model.predict(&[2.0], &[-1.0]).unwrap();
        for v in p {
            assert_relative_eq!(v, 0.25);
        }
    }

    #[test]
    fn clip_two_levels_exact() {
        let mut p = vec![0.999, 0.001];
        clip_simplex(&mut p, 0.01);
        assert_relative_eq!(p[0], 0.99);
        assert_relative_eq!(p[1], 0.01);
    }

    #[test]
    fn clip_keeps_box_and_sum_after_renormalization() {
        let mut p = vec![0.0001, 0.5, 0.4999];
        clip_simplex(&mut p, 0.001);
        let sum: f64 = p.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-14);
        for v in &p {
            assert!(*v >= 0.001 - 1e-15 && *v <= 1.0 - 2.0 * 0.001 + 1e-15);
        }
    }

    #[test]
    fn permuted_labels_recover_empirical_frequencies() {
        // Features carry no signal, so the fit should settle on the
        // intercept solution: class frequencies everywhere.
        let n = 240;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = Array1::zeros(n);
        let d: Vec<usize> = (0..n).map(|i| if i % 3 == 0 { 0 } else { 1 }).collect();
        let feat = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let table = ObservationTable::new(
            y,
            d,
            Array2::zeros((n, 1)),
            feat.clone(),
            Array2::zeros((n, 1)),
        )
        .unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let model = fit_propensity(&table, &rows, &PropensityConfig::default()).unwrap();
        for probe in [[-0.5, 0.5], [0.9, -0.9], [0.0, 0.0]] {
            let p = model.predict(&probe, &[0.0]).unwrap();
            assert!((p[0] - 1.0 / 3.0).abs() < 0.05, "p0 = {}", p[0]);
            assert!((p[1] - 2.0 / 3.0).abs() < 0.05, "p1 = {}", p[1]);
        }
    }

    #[test]
    fn symmetric_balanced_data_gives_half_half_at_the_symmetry_point() {
        let n = 40;
        let d: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| if i % 2 == 0 { -1.0 } else { 1.0 });
        let table = ObservationTable::new(
            Array1::zeros(n),
            d,
            Array2::zeros((n, 1)),
            x,
            Array2::zeros((n, 1)),
        )
        .unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let model = fit_propensity(&table, &rows, &PropensityConfig { clip: 0.0, ..Default::default() }).unwrap();
        let p = model.predict(&[0.0], &[0.0]).unwrap();
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fit_is_deterministic() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-2.0..2.0));
        let table = ObservationTable::new(Array1::zeros(n), d, Array2::zeros((n, 1)), x, Array2::zeros((n, 1))).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let a = fit_propensity(&table, &rows, &PropensityConfig::default()).unwrap();
        let b = fit_propensity(&table, &rows, &PropensityConfig::default()).unwrap();
        assert_eq!(a.weights(), b.weights());
    }

    #[test]
    fn separation_sets_the_warning_flag() {
        let table = ObservationTable::new(
            Array1::zeros(8),
            vec![0, 0, 0, 0, 1, 1, 1, 1],
            Array2::zeros((8, 1)),
            arr2(&[[-4.0], [-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0], [4.0]]),
            Array2::zeros((8, 1)),
        )
        .unwrap();
        let rows: Vec<usize> = (0..8).collect();
        let config = PropensityConfig { l2_penalty: 0.0, max_iter: 5000, weight_bound: 5.0, ..Default::default() };
        let model = fit_propensity(&table, &rows, &config).unwrap();
        assert!(model.fit_info.separation_warning);
    }

    #[test]
    fn single_level_train_rows_are_rejected() {
        let table = ObservationTable::new(
            Array1::zeros(4),
            vec![1, 1, 1, 1],
            Array2::zeros((4, 1)),
            Array2::zeros((4, 1)),
            Array2::zeros((4, 1)),
        )
        .unwrap();
        let rows: Vec<usize> = (0..4).collect();
        assert!(fit_propensity(&table, &rows, &PropensityConfig::default()).is_err());
    }
}
