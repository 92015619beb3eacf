use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::PathBatch;
use super::gaussian::GaussianSampler;
use super::quadrature::integrate;
use super::rng::PathRng;
use crate::error::{Error, Result};
use crate::signature::uniform_grid;

const MAX_ATTEMPTS: u32 = 64;

/// How the Volterra process enters the variance.
///
/// `Standard` uses `v_t = ξ_0 exp(η√(2H)·V_t − ½η²t^{2H})`, the usual rough
/// Bergomi normalization where the log-variance has variance `η²t^{2H}`.
/// `Unscaled` uses `v_t = ξ_0 exp(η V_t − ½η² t^{2H}/(2H))`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolterraScaling {
    #[default]
    Standard,
    Unscaled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RBergomiConfig {
    pub hurst: f64,
    pub eta: f64,
    pub rho: f64,
    pub xi0: f64,
    pub rate: f64,
    pub spot: f64,
    pub horizon: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scaling: VolterraScaling,
}

impl RBergomiConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return bad("Hurst parameter outside (0,1)");
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad("eta must be non-negative");
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return bad("rho outside [-1,1]");
        }
        if !(self.xi0 > 0.0) || !(self.spot > 0.0) || !self.rate.is_finite() {
            return bad("need xi0 > 0, spot > 0 and a finite rate");
        }
        if !(self.horizon > 0.0) || self.steps == 0 || self.n_paths == 0 {
            return bad("need a positive horizon, at least one step and one path");
        }
        Ok(())
    }
}

/// `Cov(V_t, W_hi − W_lo) = ∫_lo^{min(hi,t)} (t−u)^{H−½} du`.
pub fn volterra_increment_cov(t: f64, lo: f64, hi: f64, hurst: f64) -> f64 {
    if lo >= t {
        return 0.0;
    }
    let p = hurst + 0.5;
    ((t - lo).powf(p) - (t - hi.min(t)).powf(p)) / p
}

/// `Cov(V_s, V_t) = ∫_0^{min(s,t)} (s−u)^{H−½}(t−u)^{H−½} du`.
///
/// With `x = min−u`, `d = |t−s|` and `y = x^{H+½}` the integrand becomes
/// `(y^{1/(H+½)} + d)^{H−½}/(H+½)`, which is bounded; the remaining kink
/// sits near `y = d^{H+½}`, where the range is split.
pub fn volterra_cov(s: f64, t: f64, hurst: f64) -> f64 {
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    if lo <= 0.0 {
        return 0.0;
    }
    let a = hurst - 0.5;
    let p = hurst + 0.5;
    let d = hi - lo;
    if d == 0.0 {
        return lo.powf(2.0 * hurst) / (2.0 * hurst);
    }
    let top = lo.powf(p);
    let f = |y: f64| (y.powf(1.0 / p) + d).powf(a) / p;
    let knee = d.powf(p).min(top);
    integrate(f, 0.0, knee, 1e-13) + integrate(f, knee, top, 1e-13)
}

/// Covariance of `(ΔW_1, …, ΔW_J, V_{s_1}, …, V_{s_J})`, `ΔW_j = W_{s_j} − W_{s_{j−1}}`.
pub fn stacked_covariance(times: &[f64], hurst: f64) -> DMatrix<f64> {
    let j = times.len() - 1;
    let mut cov = DMatrix::zeros(2 * j, 2 * j);
    for a in 0..j {
        cov[(a, a)] = times[a + 1] - times[a];
    }
    for a in 0..j {
        let t = times[a + 1];
        for b in 0..j {
            let c = volterra_increment_cov(t, times[b], times[b + 1], hurst);
            cov[(j + a, b)] = c;
            cov[(b, j + a)] = c;
        }
        for b in 0..=a {
            let c = volterra_cov(times[b + 1], t, hurst);
            cov[(j + a, j + b)] = c;
            cov[(j + b, j + a)] = c;
        }
    }
    cov
}

/// Rough Bergomi sampler with the Gaussian factor computed once.
///
/// States are `(X, v)` per grid time; increments are `(ΔW, ΔB)` per step.
#[derive(Clone)]
pub struct RBergomiModel {
    cfg: RBergomiConfig,
    times: Arc<[f64]>,
    sampler: GaussianSampler,
}

impl RBergomiModel {
    pub fn new(cfg: RBergomiConfig) -> Result<Self> {
        cfg.validate()?;
        let times = uniform_grid(cfg.horizon, cfg.steps)?;
        let sampler = GaussianSampler::new(stacked_covariance(&times, cfg.hurst))?;
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

    pub fn config(&self) -> &RBergomiConfig {
        &self.cfg
    }

    fn variance_map(&self) -> (f64, Vec<f64>) {
        let c = &self.cfg;
        let h2 = 2.0 * c.hurst;
        let (scale, comp): (f64, Vec<f64>) = match c.scaling {
            VolterraScaling::Standard => (
                c.eta * h2.sqrt(),
                self.times
                    .iter()
                    .map(|t| 0.5 * c.eta * c.eta * t.powf(h2))
                    .collect(),
            ),
            VolterraScaling::Unscaled => (
                c.eta,
                self.times
                    .iter()
                    .map(|t| 0.5 * c.eta * c.eta * t.powf(h2) / h2)
                    .collect(),
            ),
        };
        (scale, comp)
    }

    /// Writes one path; returns false if anything overflowed.
    fn draw_path(
        &self,
        rng: &mut PathRng,
        scale: f64,
        comp: &[f64],
        z: &mut [f64],
        y: &mut [f64],
        states: &mut [f64],
        noise: &mut [f64],
    ) -> bool {
        let c = &self.cfg;
        let j = self.times.len() - 1;
        rng.fill_normal(z);
        self.sampler.transform(z, y);
        let rho_bar = (1.0 - c.rho * c.rho).max(0.0).sqrt();
        let mut log_x = c.spot.ln();
        states[0] = c.spot;
        states[1] = c.xi0;
        for k in 0..j {
            let dt = self.times[k + 1] - self.times[k];
            let dw = y[k];
            let db = rng.normal() * dt.sqrt();
            noise[2 * k] = dw;
            noise[2 * k + 1] = db;
            let v = states[2 * k + 1];
            log_x += (c.rate - 0.5 * v) * dt + v.sqrt() * (c.rho * dw + rho_bar * db);
            let v_next = c.xi0 * (scale * y[j + k] - comp[k + 1]).exp();
            states[2 * (k + 1)] = log_x.exp();
            states[2 * (k + 1) + 1] = v_next;
        }
        states.iter().all(|x| x.is_finite())
    }

    /// Paths `first .. first + count`. A path whose variance or price
    /// overflows is redrawn from the next attempt substream.
    pub fn simulate_range(&self, first: usize, count: usize) -> Result<PathBatch> {
        let n = self.times.len();
        let j = n - 1;
        let (scale, comp) = self.variance_map();
        let mut states = vec![0.0; count * n * 2];
        let mut noise = vec![0.0; count * j * 2];
        let attempts: Vec<u32> = states
            .par_chunks_mut(2 * n)
            .zip(noise.par_chunks_mut(2 * j))
            .enumerate()
            .map(|(k, (x, dw))| {
                let mut z = vec![0.0; 2 * j];
                let mut y = vec![0.0; 2 * j];
                for attempt in 0..MAX_ATTEMPTS {
                    let mut rng = PathRng::new(self.cfg.seed, (first + k) as u64, attempt);
                    if self.draw_path(&mut rng, scale, &comp, &mut z, &mut y, x, dw) {
                        return attempt;
                    }
                }
                MAX_ATTEMPTS
            })
            .collect();
        if attempts.contains(&MAX_ATTEMPTS) {
            return Err(Error::Numerical(format!(
                "rough Bergomi path overflowed in {MAX_ATTEMPTS} consecutive draws"
            )));
        }
        let resampled = attempts.iter().filter(|&&a| a > 0).count();
        if resampled > 0 {
            log::warn!("{resampled} of {count} rough Bergomi paths resampled after overflow");
        }
        Ok(PathBatch {
            times: self.times.clone(),
            n_paths: count,
            state_dim: 2,
            noise_dim: 2,
            hurst: self.cfg.hurst,
            states,
            noise,
            payoff: vec![0.0; count * n],
            resampled,
        })
    }

    pub fn simulate(&self) -> Result<PathBatch> {
        self.simulate_range(0, self.cfg.n_paths)
    }
}

/// All `M` paths of the configuration. The payoff is left at zero; use
/// [`PathBatch::payoff_put`] to set it.
pub fn simulate_rbergomi(cfg: &RBergomiConfig) -> Result<PathBatch> {
    RBergomiModel::new(cfg.clone())?.simulate()
}
