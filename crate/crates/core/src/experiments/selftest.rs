//! Small-size invariant checks run by `sigstop selftest`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dual::{build_martingale_basis, solve_lp, LpInstance, LpMethod, LpOptions};
use crate::error::Result;
use crate::features::BasisSpec;
use crate::models::rng::PathRng;
use crate::models::{fbm_covariance, FbmConfig, FbmModel};
use crate::signature::{signature_stream, uniform_grid, PathGrid};
use crate::tensor_algebra::{LinearFunctional, TruncatedTensor, Word};

/// Shuffle product under test; swapped out by the mutation check.
pub type ShuffleFn = fn(&Word, &Word) -> LinearFunctional;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect()
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<22} {}", c.name, c.detail)?;
        }
        let failed = self.failures();
        if failed.is_empty() {
            writeln!(f, "selftest: all {} checks passed", self.checks.len())
        } else {
            writeln!(
                f,
                "selftest: {} failed: {}",
                failed.len(),
                failed.join(", ")
            )
        }
    }
}

const SEED: u64 = 0x5e1f_7e57;

pub fn run_selftest() -> SelftestReport {
    run_selftest_with(crate::tensor_algebra::shuffle)
}

/// Runs every check with the given shuffle product.
pub fn run_selftest_with(shuffle: ShuffleFn) -> SelftestReport {
    let checks: [(&'static str, fn(ShuffleFn) -> Result<(bool, String)>); 8] = [
        ("shuffle_identity", shuffle_identity),
        ("chen_relation", |_| chen_relation()),
        ("group_like", group_like),
        ("pure_time_signature", |_| pure_time()),
        ("normalize_ball", |_| normalize_ball()),
        ("lp_oracle", |_| lp_oracle()),
        ("martingale_means", |_| martingale_means()),
        ("fbm_covariance", |_| fbm_cov()),
    ];
    let checks = checks
        .into_iter()
        .map(|(name, check)| {
            let (passed, detail) = match check(shuffle) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                name,
                passed,
                detail,
            }
        })
        .collect();
    SelftestReport { checks }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

fn random_word(rng: &mut PathRng, alphabet: usize, max_degree: usize) -> Word {
    let degree = (rng.uniform() * (max_degree + 1) as f64) as usize;
    let letters: Vec<u8> = (0..degree.min(max_degree))
        .map(|_| 1 + (rng.uniform() * alphabet as f64) as u8)
        .collect();
    Word::new(&letters, alphabet).expect("letters in range")
}

/// Worst `|⟨a,w⟩⟨a,v⟩ − ⟨a, w⧢v⟩|` over random word pairs.
fn worst_shuffle_violation(
    a: &TruncatedTensor,
    rng: &mut PathRng,
    pairs: usize,
    shuffle: ShuffleFn,
) -> Result<f64> {
    let (e, k) = (a.alphabet(), a.level());
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let w = random_word(rng, e, k);
        let v = random_word(rng, e, k - w.degree());
        let lhs = a.get(&w)? * a.get(&v)?;
        let rhs = a.inner(&shuffle(&w, &v))?;
        worst = worst.max(rel_err(lhs, rhs));
    }
    Ok(worst)
}

fn shuffle_identity(shuffle: ShuffleFn) -> Result<(bool, String)> {
    let mut rng = PathRng::new(SEED, 1, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mut inc = [0.0; 3];
        rng.fill_normal(&mut inc);
        let a = TruncatedTensor::exp(&inc, 4);
        worst = worst.max(worst_shuffle_violation(&a, &mut rng, 5, shuffle)?);
    }
    Ok((worst <= 1e-10, format!("max violation {worst:.2e}")))
}

fn random_path(rng: &mut PathRng, points: usize, dim: usize) -> Result<PathGrid> {
    let mut values = vec![0.0; points * dim];
    rng.fill_normal(&mut values);
    PathGrid::new(uniform_grid(1.0, points - 1)?, values, dim)
}

fn sub_path(path: &PathGrid, from: usize, to: usize) -> Result<PathGrid> {
    let d = path.dim();
    let t0 = path.times()[from];
    let times: Arc<[f64]> = path.times()[from..=to].iter().map(|t| t - t0).collect();
    PathGrid::new(times, path.values()[from * d..=to * d + d - 1].to_vec(), d)
}

fn chen_relation() -> Result<(bool, String)> {
    let mut rng = PathRng::new(SEED, 2, 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let path = random_path(&mut rng, 8, 2)?;
        let split = 1 + (rng.uniform() * 6.0) as usize;
        let whole = signature_stream(&path, 4, None)?.get(7);
        let left = signature_stream(&sub_path(&path, 0, split)?, 4, None)?.get(split);
        let right = signature_stream(&sub_path(&path, split, 7)?, 4, None)?.get(7 - split);
        let joined = left.concat_product(&right)?;
        for (x, y) in whole.coords().iter().zip(joined.coords()) {
            worst = worst.max(rel_err(*x, *y));
        }
    }
    Ok((worst <= 1e-12, format!("max relative error {worst:.2e}")))
}

fn group_like(shuffle: ShuffleFn) -> Result<(bool, String)> {
    let mut rng = PathRng::new(SEED, 3, 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let path = random_path(&mut rng, 6, 3)?;
        let sig = signature_stream(&path, 4, None)?.get(5);
        worst = worst.max((sig.coords()[0] - 1.0).abs());
        worst = worst.max(worst_shuffle_violation(&sig, &mut rng, 10, shuffle)?);
    }
    Ok((worst <= 1e-10, format!("max violation {worst:.2e}")))
}

fn pure_time() -> Result<(bool, String)> {
    let horizon = 1.7;
    let times = uniform_grid(horizon, 9)?;
    let path = PathGrid::new(times.clone(), times.to_vec(), 1)?;
    let sig = signature_stream(&path, 6, None)?.get(9);
    let mut worst = 0.0f64;
    let mut factorial = 1.0;
    for k in 0..=6usize {
        if k > 0 {
            factorial *= k as f64;
        }
        let want = horizon.powi(k as i32) / factorial;
        worst = worst.max(rel_err(sig.get(&Word::new(&vec![1; k], 1)?)?, want));
    }
    Ok((worst <= 1e-13, format!("max relative error {worst:.2e}")))
}

fn normalize_ball() -> Result<(bool, String)> {
    let mut rng = PathRng::new(SEED, 4, 0);
    let radius = 4.0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let mut inc = [0.0; 2];
        rng.fill_normal(&mut inc);
        let scale = 5.0 * rng.uniform();
        let a = TruncatedTensor::exp(&[inc[0] * scale, inc[1] * scale], 4);
        let n = a.normalize(radius)?;
        worst = worst.max(n.norm() - radius);
    }
    Ok((worst <= 1e-9, format!("max excess over radius {worst:.2e}")))
}

/// `(1/M) Σ_i max_n (Z_{in} − λ·g_{in})` evaluated directly.
fn lp_value(m: usize, nd: usize, z: &[f64], g: &[f64], lambda: &[f64]) -> f64 {
    let d = lambda.len();
    (0..m)
        .map(|i| {
            (0..nd)
                .map(|n| {
                    let r = i * nd + n;
                    z[r] - (0..d).map(|c| lambda[c] * g[r * d + c]).sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / m as f64
}

/// Minimum over `λ` by repeatedly refining a grid around the best point.
fn grid_minimum(m: usize, nd: usize, z: &[f64], g: &[f64], d: usize) -> f64 {
    const POINTS: usize = 101;
    if d == 0 {
        return lp_value(m, nd, z, g, &[]);
    }
    let mut center = vec![0.0; d];
    let mut half = 64.0;
    let mut best = f64::INFINITY;
    for _ in 0..60 {
        let h = 2.0 * half / (POINTS - 1) as f64;
        let total = POINTS.pow(d as u32);
        let mut best_point = center.clone();
        let mut on_edge = false;
        let mut lambda = vec![0.0; d];
        for k in 0..total {
            let mut rest = k;
            let mut edge = false;
            for (c, l) in lambda.iter_mut().enumerate() {
                let step = rest % POINTS;
                rest /= POINTS;
                edge |= step == 0 || step == POINTS - 1;
                *l = center[c] - half + step as f64 * h;
            }
            let v = lp_value(m, nd, z, g, &lambda);
            if v < best {
                best = v;
                best_point.clone_from(&lambda);
                on_edge = edge;
            }
        }
        center = best_point;
        if on_edge {
            half *= 2.0;
        } else if half < 1e-11 {
            break;
        } else {
            half = 5.0 * h;
        }
    }
    best
}

fn lp_oracle() -> Result<(bool, String)> {
    let mut rng = PathRng::new(SEED, 5, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = 1 + (rng.uniform() * 4.0) as usize;
        let nd = 2 + (rng.uniform() * 2.0) as usize;
        let d = (rng.uniform() * 3.0) as usize;
        let z: Vec<f64> = (0..m * nd).map(|_| rng.uniform()).collect();
        let mut g = vec![0.0; m * nd * d];
        for (r, row) in g.chunks_mut(d.max(1)).enumerate().take(m * nd) {
            if r % nd != 0 && d > 0 {
                rng.fill_normal(row);
            }
        }
        let oracle = grid_minimum(m, nd, &z, &g, d);
        let lp = LpInstance::new(m, nd, z, DMatrix::from_row_slice(m * nd, d, &g))?;
        for method in [LpMethod::Simplex, LpMethod::Ipm] {
            let sol = solve_lp(
                &lp,
                &LpOptions {
                    method,
                    ..LpOptions::default()
                },
            )?;
            worst = worst.max((sol.objective - oracle).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max objective gap {worst:.2e}")))
}

fn martingale_means() -> Result<(bool, String)> {
    let cfg = FbmConfig {
        hurst: 0.3,
        horizon: 1.0,
        steps: 20,
        n_paths: 4000,
        seed: SEED,
    };
    let batch = FbmModel::new(cfg)?.simulate();
    let exercise = uniform_grid(1.0, 4)?;
    let mb = build_martingale_basis(&batch, &BasisSpec::signature(2), &exercise)?;
    let worst = mb
        .terminal_summaries()
        .iter()
        .map(|s| s.mean.abs() / s.stderr().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok((worst <= 4.0, format!("max |mean|/stderr {worst:.2}")))
}

fn fbm_cov() -> Result<(bool, String)> {
    let hurst = 0.3;
    let m = 4000;
    let cfg = FbmConfig {
        hurst,
        horizon: 1.0,
        steps: 10,
        n_paths: m,
        seed: SEED + 1,
    };
    let batch = FbmModel::new(cfg)?.simulate();
    let times = batch.times().clone();
    let mut worst = 0.0f64;
    for (a, b) in [(3, 3), (3, 7), (10, 10), (5, 10)] {
        let xs: Vec<f64> = (0..m)
            .map(|i| batch.states(i)[a] * batch.states(i)[b])
            .collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let want = fbm_covariance(times[a], times[b], hurst);
        let var = fbm_covariance(times[a], times[a], hurst)
            * fbm_covariance(times[b], times[b], hurst)
            + want * want;
        worst = worst.max((mean - want).abs() / (var / m as f64).sqrt());
    }
    Ok((worst <= 4.5, format!("max |error|/stderr {worst:.2}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concatenation_only(w: &Word, v: &Word) -> LinearFunctional {
        let mut letters = w.letters().to_vec();
        letters.extend_from_slice(v.letters());
        LinearFunctional::word(Word::new(&letters, 9).unwrap())
    }

    #[test]
    fn grid_oracle_matches_hand_instance() {
        // One path, Z = (0, 1), g = (0, 2): the optimum is 0 at λ ≥ 1/2.
        let v = grid_minimum(1, 2, &[0.0, 1.0], &[0.0, 2.0], 1);
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn broken_shuffle_is_named() {
        let report = run_selftest_with(concatenation_only);
        let failed = report.failures();
        assert!(failed.contains(&"shuffle_identity"), "{report}");
        assert!(failed.contains(&"group_like"));
        assert!(!failed.contains(&"lp_oracle"));
    }
}
