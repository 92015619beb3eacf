use nalgebra::DMatrix;
use rayon::prelude::*;

use super::batch::PathBatch;
use super::gaussian::GaussianSampler;
use super::rng::PathRng;
use crate::error::{Error, Result};
use crate::signature::uniform_grid;

#[derive(Clone, Debug, PartialEq)]
pub struct FbmConfig {
    pub hurst: f64,
    pub horizon: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl FbmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::Parameter(format!(
                "Hurst parameter {} outside (0,1)",
                self.hurst
            )));
        }
        if !(self.horizon > 0.0) || self.steps == 0 || self.n_paths == 0 {
            return Err(Error::Parameter(
                "fBm needs a positive horizon, at least one step and one path".into(),
            ));
        }
        Ok(())
    }
}

/// `E[X_s X_t] = ½(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (s.abs().powf(h2) + t.abs().powf(h2) - (t - s).abs().powf(h2))
}

/// Exact fBm sampler on a uniform grid, built once per configuration.
///
/// `X_{s_{j+1}} = Σ_{k≤j} L_{jk} z_k` with `L` the Cholesky factor of the
/// covariance of `(X_{s_1}, …, X_{s_J})`. The innovations `z_k` are new
/// information at `s_{k+1}`; the batch reports `z_k·√Δs` as the Brownian
/// increments driving the path.
#[derive(Clone)]
pub struct FbmModel {
    cfg: FbmConfig,
    times: std::sync::Arc<[f64]>,
    sampler: GaussianSampler,
}

impl FbmModel {
    pub fn new(cfg: FbmConfig) -> Result<Self> {
        cfg.validate()?;
        let times = uniform_grid(cfg.horizon, cfg.steps)?;
        let j = cfg.steps;
        let cov = DMatrix::from_fn(j, j, |a, b| {
            fbm_covariance(times[a + 1], times[b + 1], cfg.hurst)
        });
        let sampler = GaussianSampler::new(cov)?;
        Ok(Self {
            cfg,
            times,
            sampler,
        })
    }

    /// Same grid and factorization with a new seed and path count.
    pub fn with_seed(&self, seed: u64, n_paths: usize) -> Self {
        let mut cfg = self.cfg.clone();
        cfg.seed = seed;
        cfg.n_paths = n_paths;
        Self {
            cfg,
            times: self.times.clone(),
            sampler: self.sampler.clone(),
        }
    }

    pub fn config(&self) -> &FbmConfig {
        &self.cfg
    }

    /// Paths `first .. first + count`; path `i` only depends on `(seed, i)`.
    pub fn simulate_range(&self, first: usize, count: usize) -> PathBatch {
        let n = self.times.len();
        let j = n - 1;
        let sqrt_dt: Vec<f64> = self
            .times
            .windows(2)
            .map(|w| (w[1] - w[0]).sqrt())
            .collect();
        let mut states = vec![0.0; count * n];
        let mut noise = vec![0.0; count * j];
        states
            .par_chunks_mut(n)
            .zip(noise.par_chunks_mut(j))
            .enumerate()
            .for_each(|(k, (x, dw))| {
                let mut rng = PathRng::new(self.cfg.seed, (first + k) as u64, 0);
                rng.fill_normal(dw);
                self.sampler.transform(dw, &mut x[1..]);
                for (d, s) in dw.iter_mut().zip(&sqrt_dt) {
                    *d *= s;
                }
            });
        let payoff = states.clone();
        PathBatch {
            times: self.times.clone(),
            n_paths: count,
            state_dim: 1,
            noise_dim: 1,
            hurst: self.cfg.hurst,
            states,
            noise,
            payoff,
            resampled: 0,
        }
    }

    pub fn simulate(&self) -> PathBatch {
        self.simulate_range(0, self.cfg.n_paths)
    }
}

/// All `M` paths of the configuration; the payoff is the process itself.
pub fn simulate_fbm(cfg: &FbmConfig) -> Result<PathBatch> {
    Ok(FbmModel::new(cfg.clone())?.simulate())
}
