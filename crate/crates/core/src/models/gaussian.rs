//! Exact sampling of a finite-dimensional centered Gaussian vector.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const JITTER_RETRIES: usize = 3;

/// Lower Cholesky factor of a covariance matrix, stored packed by rows.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    dim: usize,
    packed: Vec<f64>,
}

impl GaussianSampler {
    /// Factorizes `cov`. On failure the diagonal is loaded with
    /// `1e-12·trace/n`, growing tenfold per retry, before giving up.
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if n == 0 || cov.ncols() != n {
            return Err(Error::Shape(format!(
                "covariance must be square and non-empty, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if cov.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("covariance has non-finite entries".into()));
        }
        let base = 1e-12 * cov.trace() / n as f64;
        let mut jitter = 0.0;
        for attempt in 0..=JITTER_RETRIES {
            let mut m = cov.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = m.cholesky() {
                if attempt > 0 {
                    log::warn!("covariance factorized after adding diagonal jitter {jitter:e}");
                }
                let l = chol.l();
                let mut packed = Vec::with_capacity(n * (n + 1) / 2);
                for i in 0..n {
                    packed.extend((0..=i).map(|k| l[(i, k)]));
                }
                return Ok(Self { dim: n, packed });
            }
            jitter = if jitter == 0.0 { base } else { jitter * 10.0 };
        }
        Err(Error::Numerical(format!(
            "Cholesky factorization of a {n}x{n} covariance failed after {JITTER_RETRIES} jitter retries"
        )))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `out = L·z` for standard normal `z`, which has the target covariance.
    pub fn transform(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        let mut start = 0;
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let row = &self.packed[start..start + i + 1];
            *o = dot(row, &z[..=i]);
            start += i + 1;
        }
    }

    /// Entry `(i, k)` of the factor, zero above the diagonal.
    pub fn factor(&self, i: usize, k: usize) -> f64 {
        if k > i {
            0.0
        } else {
            self.packed[i * (i + 1) / 2 + k]
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
/// The summation order depends only on the length, never on the caller.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_covariance_exactly_in_factor() {
        let cov = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 2.0, 0.5, 0.4, 0.5, 3.0]);
        let g = GaussianSampler::new(cov.clone()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| g.factor(i, k) * g.factor(j, k)).sum();
                assert!((s - cov[(i, j)]).abs() < 1e-14);
            }
        }
        let mut out = [0.0; 3];
        g.transform(&[1.0, 0.0, 0.0], &mut out);
        assert_eq!(out, [2.0, 1.0, 0.2]);
    }

    #[test]
    fn singular_covariance_gets_jitter() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let g = GaussianSampler::new(cov).unwrap();
        assert!(g.factor(1, 1) > 0.0 && g.factor(1, 1) < 1e-4);
    }

    #[test]
    fn indefinite_covariance_fails() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianSampler::new(cov),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
