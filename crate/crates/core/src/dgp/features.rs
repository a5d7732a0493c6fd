//! Correlated feature sampling: multivariate normal (light tails) or
//! multivariate student-t (heavy tails) per feature block, with the
//! correlation kernel `C_ij = a + (1-a) exp(-b |i-j|)`.
//!
//! Student-t draws are scaled so the covariance (not the shape matrix)
//! equals C, keeping light and heavy configurations like-for-like; this
//! requires dof > 2.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the correlation kernel for one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrParams {
    pub a: f64,
    pub b: f64,
}

impl CorrParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) || self.b < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "correlation kernel needs a in [0,1], b >= 0; got a={}, b={}",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// `C_ij = a + (1-a) exp(-b |i-j|)`; the diagonal is always 1.
pub fn correlation_matrix(p: usize, params: &CorrParams) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| {
        let d = (i as f64 - j as f64).abs();
        params.a + (1.0 - params.a) * (-params.b * d).exp()
    })
}

/// A factor L with L L' = C. Cholesky when C is positive definite, otherwise
/// an eigendecomposition with tiny negative eigenvalues clamped to zero
/// (the kernel is positive semi-definite; a = 1 gives the all-ones matrix).
pub fn factor_correlation(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = c.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = c.clone().symmetric_eigen();
    let mut q = eig.eigenvectors;
    for (k, ev) in eig.eigenvalues.iter().enumerate() {
        if *ev < -1e-8 {
            return Err(Error::FactorizationFailure(format!(
                "eigenvalue {ev} is significantly negative"
            )));
        }
        let s = ev.max(0.0).sqrt();
        for i in 0..q.nrows() {
            q[(i, k)] *= s;
        }
    }
    Ok(q)
}

/// Tail regime for the three feature blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tail {
    Light,
    Heavy { dof_u: f64, dof_x: f64, dof_z: f64 },
}

impl Tail {
    pub fn validate(&self) -> Result<()> {
        if let Tail::Heavy { dof_u, dof_x, dof_z } = self {
            for d in [dof_u, dof_x, dof_z] {
                if !(*d > 2.0) {
                    return Err(Error::InvalidConfig(
                        "student-t dof must exceed 2 so the covariance exists".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-block sampler: factor of C and optionally the student-t mixing law.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    factor: DMatrix<f64>, // already scaled by sqrt((dof-2)/dof) for heavy tails
    dof: Option<f64>,
    p: usize,
}

impl BlockSampler {
    pub fn new(p: usize, corr: &CorrParams, dof: Option<f64>) -> Result<Self> {
        corr.validate()?;
        let c = correlation_matrix(p, corr);
        let mut factor = factor_correlation(&c)?;
        if let Some(d) = dof {
            if !(d > 2.0) {
                return Err(Error::InvalidConfig("student-t dof must exceed 2".into()));
            }
            factor *= ((d - 2.0) / d).sqrt();
        }
        Ok(Self { factor, dof, p })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Draws one row into `out` using the caller's stream.
    pub fn sample_row(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.p);
        let z: Vec<f64> = (0..self.p).map(|_| rng.sample(StandardNormal)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate() {
                acc += self.factor[(i, j)] * zj;
            }
            *o = acc;
        }
        if let Some(d) = self.dof {
            let w: f64 = ChiSquared::new(d).expect("dof validated").sample(rng);
            let scale = (d / w).sqrt();
            for o in out.iter_mut() {
                *o *= scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn diagonal_is_one() {
        let c = correlation_matrix(6, &CorrParams { a: 0.37, b: 1.3 });
        for i in 0..6 {
            assert_relative_eq!(c[(i, i)], 1.0);
        }
    }

    #[test]
    fn a_equal_one_gives_identical_coordinates() {
        let sampler = BlockSampler::new(5, &CorrParams { a: 1.0, b: 0.5 }, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut row = [0.0; 5];
        sampler.sample_row(&mut rng, &mut row);
        for v in &row[1..] {
            assert_relative_eq!(*v, row[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn sample_correlation_approaches_the_kernel() {
        // Smaller-N version of the full check; the 1e6 variant lives in the
        // acceptance suite.
        let params = CorrParams { a: 0.5, b: 0.5 };
        let p = 4;
        let sampler = BlockSampler::new(p, &params, None).unwrap();
        let n = 200_000;
        let mut sums = vec![0.0; p];
        let mut prods = vec![vec![0.0; p]; p];
        let mut row = vec![0.0; p];
        for r in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            rng.set_stream(r as u64);
            sampler.sample_row(&mut rng, &mut row);
            for i in 0..p {
                sums[i] += row[i];
                for j in 0..p {
                    prods[i][j] += row[i] * row[j];
                }
            }
        }
        let c = correlation_matrix(p, &params);
        for i in 0..p {
            for j in 0..p {
                let mi = sums[i] / n as f64;
                let mj = sums[j] / n as f64;
                let cov = prods[i][j] / n as f64 - mi * mj;
                let vi = prods[i][i] / n as f64 - mi * mi;
                let vj = prods[j][j] / n as f64 - mj * mj;
                let corr = cov / (vi * vj).sqrt();
                assert!((corr - c[(i, j)]).abs() < 0.02, "({i},{j}): {corr} vs {}", c[(i, j)]);
            }
        }
    }

    #[test]
    fn heavy_tail_variance_matches_the_kernel_diagonal() {
        let sampler = BlockSampler::new(3, &CorrParams { a: 0.5, b: 0.5 }, Some(5.0)).unwrap();
        let n = 400_000;
        let mut ss = 0.0;
        let mut row = [0.0; 3];
        for r in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            rng.set_stream(r as u64);
            sampler.sample_row(&mut rng, &mut row);
            ss += row[0] * row[0];
        }
        let var = ss / n as f64;
        // dof 5 has heavy but finite variance; allow a loose band.
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn invalid_dof_is_rejected() {
        assert!(BlockSampler::new(3, &CorrParams { a: 0.5, b: 0.5 }, Some(2.0)).is_err());
        assert!(Tail::Heavy { dof_u: 10.0, dof_x: 10.0, dof_z: 1.5 }.validate().is_err());
    }
}
