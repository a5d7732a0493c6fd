//! Interaction terms and the nonlinear feature maps `k(.)` used by the
//! outcome scale function.
//!
//! The order-r interaction vector of `v` holds the products of r distinct
//! components in lexicographic combination order (v1v2, v1v3, ...). For the
//! elementwise-log part of `k` the combination structure collapses: the
//! weighted sum of `log|products|` equals a per-component weighted sum of
//! `log|v_k|`, which `KCoeffs` precomputes once.

use crate::error::{Error, Result};

/// Absolute values below this are floored before any `log`.
pub const LOG_FLOOR: f64 = 1e-12;

pub(crate) fn guarded_ln(v: f64) -> f64 {
    v.abs().max(LOG_FLOOR).ln()
}

/// Number of combinations C(p, r).
pub fn n_combinations(p: usize, r: usize) -> usize {
    if r > p {
        return 0;
    }
    let mut num = 1usize;
    let mut den = 1usize;
    for k in 0..r {
        num *= p - k;
        den *= k + 1;
    }
    num / den
}

/// Calls `f` with each r-combination of `0..p` in lexicographic order.
fn for_each_combination<F: FnMut(&[usize])>(p: usize, r: usize, f: &mut F) {
    let mut idx: Vec<usize> = (0..r).collect();
    if r > p {
        return;
    }
    loop {
        f(&idx);
        // Advance to the next combination.
        let mut k = r;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if idx[k] != k + p - r {
                break;
            }
            if k == 0 {
                return;
            }
        }
        idx[k] += 1;
        for j in k + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All products of `order` distinct components of `v`, lexicographic.
/// `order` must lie in `2..=4`.
pub fn interaction_vector(v: &[f64], order: usize) -> Result<Vec<f64>> {
    if !(2..=4).contains(&order) {
        return Err(Error::InvalidConfig(format!("interaction order {order} not in 2..=4")));
    }
    let mut out = Vec::with_capacity(n_combinations(v.len(), order));
    for_each_combination(v.len(), order, &mut |combo| {
        let mut prod = 1.0;
        for &k in combo {
            prod *= v[k];
        }
        out.push(prod);
    });
    Ok(out)
}

/// Coefficient bundle for one feature block: `c1` on the raw components and
/// `c2..c4` on the order-2..4 interaction vectors, plus the collapsed
/// per-component weights for the elementwise-log part.
#[derive(Debug, Clone)]
pub struct KCoeffs {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
    pub c4: Vec<f64>,
    log_weights: Vec<f64>,
}

impl KCoeffs {
    pub fn new(c1: Vec<f64>, c2: Vec<f64>, c3: Vec<f64>, c4: Vec<f64>) -> Result<Self> {
        let p = c1.len();
        for (r, c) in [(2usize, &c2), (3, &c3), (4, &c4)] {
            let expect = n_combinations(p, r);
            if c.len() != expect {
                return Err(Error::DimensionMismatch(format!(
                    "order-{r} coefficient vector has {} entries, expected {expect} for p={p}",
                    c.len()
                )));
            }
        }
        let mut log_weights = c1.clone();
        for (r, c) in [(2usize, &c2), (3, &c3), (4, &c4)] {
            let mut pos = 0;
            for_each_combination(p, r, &mut |combo| {
                for &k in combo {
                    log_weights[k] += c[pos];
                }
                pos += 1;
            });
        }
        Ok(Self { c1, c2, c3, c4, log_weights })
    }

    pub fn p(&self) -> usize {
        self.c1.len()
    }
}

/// `k(v) = ln|c1'v + sum_r cr' v_r| + c1' ln|v| + sum_r cr' ln|v_r|`,
/// computed streamwise without materializing the interaction vectors.
/// Absolute values are floored at [`LOG_FLOOR`] before every log.
pub fn k_interactions(v: &[f64], coeffs: &KCoeffs) -> f64 {
    debug_assert_eq!(v.len(), coeffs.p());
    let p = v.len();
    let mut linear: f64 = coeffs.c1.iter().zip(v).map(|(c, x)| c * x).sum();
    for (r, c) in [(2usize, &coeffs.c2), (3, &coeffs.c3), (4, &coeffs.c4)] {
        let mut pos = 0;
        for_each_combination(p, r, &mut |combo| {
            let mut prod = 1.0;
            for &k in combo {
                prod *= v[k];
            }
            linear += c[pos] * prod;
            pos += 1;
        });
    }
    let mut k_val = guarded_ln(linear);
    for (w, x) in coeffs.log_weights.iter().zip(v) {
        k_val += w * guarded_ln(*x);
    }
    k_val
}

/// Linear form `k(v) = c1' v` used by the semi-synthetic generator.
pub fn k_linear(v: &[f64], c1: &[f64]) -> f64 {
    debug_assert_eq!(v.len(), c1.len());
    c1.iter().zip(v).map(|(c, x)| c * x).sum()
}
