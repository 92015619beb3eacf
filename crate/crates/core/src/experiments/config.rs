use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dual::LpMethod;
use crate::error::{Error, Result};
use crate::models::VolterraScaling;
use crate::tensor_algebra::DEFAULT_NORMALIZE_RADIUS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fbm,
    Rbergomi,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "one")]
    pub horizon: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Number of exercise dates after 0 (`N`).
    pub exercise_dates: usize,
    /// Fine-grid steps (`J`), a multiple of `exercise_dates`.
    pub steps: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbmSection {
    /// One table row per Hurst parameter.
    pub hurst: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RBergomiSection {
    #[serde(default = "default_rb_hurst")]
    pub hurst: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_xi0")]
    pub xi0: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_spot")]
    pub spot: f64,
    /// One table row per strike.
    pub strikes: Vec<f64>,
    #[serde(default)]
    pub volterra_scaling: VolterraScaling,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureSection {
    /// Apply robust normalization to every signature entry.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

impl Default for SignatureSection {
    fn default() -> Self {
        Self {
            normalize: false,
            radius: DEFAULT_NORMALIZE_RADIUS,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimalSection {
    pub sig_level: usize,
    #[serde(default)]
    pub poly_degree: usize,
    pub paths_train: usize,
    pub paths_eval: usize,
    /// Defaults to on for puts and off for fBm.
    pub in_the_money_only: Option<bool>,
    /// Clip polynomial inputs at an upper quantile of the training states.
    #[serde(default = "yes")]
    pub clip_states: bool,
    #[serde(default = "default_clip_quantile")]
    pub clip_quantile: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualSection {
    pub sig_level: usize,
    /// Lift `(t, X, Z)` instead of `(t, X)`. Defaults to on for puts.
    pub payoff_letter: Option<bool>,
    #[serde(default)]
    pub poly_degree: usize,
    pub paths_train: usize,
    pub paths_eval: usize,
    #[serde(default)]
    pub lp_method: LpMethod,
    #[serde(default = "default_lp_tol")]
    pub lp_tol: f64,
    #[serde(default = "default_lp_iter")]
    pub lp_max_iter: usize,
    /// Clip polynomial inputs at an upper quantile of the training states.
    #[serde(default = "yes")]
    pub clip_states: bool,
    #[serde(default = "default_clip_quantile")]
    pub clip_quantile: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub train: u64,
    pub eval: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// CSV destination used when `--out` is not given.
    pub csv: Option<PathBuf>,
    /// Directory for fitted policies and dual coefficients.
    pub artifacts: Option<PathBuf>,
    /// Write the first primal training batch of each row as a binary path dump.
    #[serde(default)]
    pub dump_paths: bool,
    /// Write each row's dual training LP in sparse triplet form.
    #[serde(default)]
    pub dump_lp: bool,
    /// Paths simulated at once during evaluation.
    #[serde(default = "default_chunk")]
    pub eval_chunk: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            csv: None,
            artifacts: None,
            dump_paths: false,
            dump_lp: false,
            eval_chunk: default_chunk(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub fbm: Option<FbmSection>,
    pub rbergomi: Option<RBergomiSection>,
    #[serde(default)]
    pub signature: SignatureSection,
    pub primal: PrimalSection,
    pub dual: DualSection,
    pub seeds: SeedSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_clip_quantile() -> f64 {
    0.99
}
fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn default_rb_hurst() -> f64 {
    0.07
}
fn default_eta() -> f64 {
    1.9
}
fn default_rho() -> f64 {
    -0.9
}
fn default_xi0() -> f64 {
    0.09
}
fn default_rate() -> f64 {
    0.05
}
fn default_spot() -> f64 {
    100.0
}
fn default_radius() -> f64 {
    DEFAULT_NORMALIZE_RADIUS
}
fn default_lp_tol() -> f64 {
    1e-7
}
fn default_lp_iter() -> usize {
    200
}
fn default_chunk() -> usize {
    20_000
}

const MIN_PATHS: usize = 100;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let g = &self.grid;
        if g.exercise_dates == 0 || g.steps == 0 || !g.steps.is_multiple_of(g.exercise_dates) {
            return err(format!(
                "grid.steps ({}) must be a positive multiple of grid.exercise_dates ({})",
                g.steps, g.exercise_dates
            ));
        }
        if !(self.model.horizon > 0.0) {
            return err("model.horizon must be positive".into());
        }
        for (name, m) in [
            ("primal.paths_train", self.primal.paths_train),
            ("primal.paths_eval", self.primal.paths_eval),
            ("dual.paths_train", self.dual.paths_train),
            ("dual.paths_eval", self.dual.paths_eval),
        ] {
            if m < MIN_PATHS {
                return err(format!("{name} = {m} is below the minimum of {MIN_PATHS}"));
            }
        }
        if self.seeds.train == self.seeds.eval {
            return err("seeds.train and seeds.eval must differ".into());
        }
        if self.primal.sig_level == 0 || self.dual.sig_level == 0 {
            return err("signature levels must be at least 1".into());
        }
        if self.signature.normalize && !(self.signature.radius > 1.0) {
            return err("signature.radius must exceed 1".into());
        }
        for q in [self.primal.clip_quantile, self.dual.clip_quantile] {
            if !(q > 0.0 && q <= 1.0) {
                return err(format!("clip_quantile = {q} must lie in (0, 1]"));
            }
        }
        if self.output.eval_chunk == 0 {
            return err("output.eval_chunk must be positive".into());
        }
        match self.model.kind {
            ModelKind::Fbm => {
                let Some(f) = &self.fbm else {
                    return err("model.kind = \"fbm\" needs an [fbm] section".into());
                };
                if f.hurst.is_empty() || f.hurst.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
                    return err("fbm.hurst must list values in (0,1)".into());
                }
                if self.primal.poly_degree > 0 || self.dual.poly_degree > 0 {
                    return err("polynomial features are only available for rbergomi".into());
                }
            }
            ModelKind::Rbergomi => {
                let Some(r) = &self.rbergomi else {
                    return err("model.kind = \"rbergomi\" needs a [rbergomi] section".into());
                };
                if r.strikes.is_empty() || r.strikes.iter().any(|k| !(*k >= 0.0)) {
                    return err("rbergomi.strikes must list non-negative strikes".into());
                }
                if !(r.hurst > 0.0 && r.hurst < 1.0) || !(-1.0..=1.0).contains(&r.rho) {
                    return err("rbergomi.hurst must lie in (0,1) and rho in [-1,1]".into());
                }
                if !(r.xi0 > 0.0 && r.spot > 0.0 && r.eta >= 0.0) {
                    return err("rbergomi needs xi0 > 0, spot > 0 and eta >= 0".into());
                }
            }
        }
        Ok(())
    }

    pub fn normalize_radius(&self) -> Option<f64> {
        self.signature.normalize.then_some(self.signature.radius)
    }

    /// Replaces both seeds, keeping them distinct.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds.train = seed;
        self.seeds.eval = seed.wrapping_add(1);
    }
}
