//! Longstaff–Schwartz regression on signature features.
//!
//! Working backwards over the exercise dates, the realized payoff at the
//! current stopping time is regressed on the features at `t_n`; a path stops
//! at `t_n` when its payoff reaches the fitted continuation value. The frozen
//! rule applied to fresh paths gives a lower-biased estimate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{path_features, BasisSpec};
use crate::models::PathBatch;
use crate::signature::grid_indices;
use crate::stats::summarize;

/// Relative singular-value cutoff used by the regressions.
pub const SVD_TOLERANCE: f64 = 1e-10;

const POLICY_FORMAT: &str = "sigstop-regression-policy";
const POLICY_VERSION: u32 = 1;

/// Minimum-norm least-squares solution of `A β ≈ y`.
///
/// Singular values below `tol·σ_max` count as zero, so exactly collinear
/// features share weight instead of blowing up. Tall systems are reduced
/// by a QR step before the SVD.
pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if m == 0 || y.len() != m {
        return Err(Error::Shape(format!(
            "least squares with {m} rows and {} targets",
            y.len()
        )));
    }
    if a.iter().all(|&x| x == 0.0) {
        log::warn!("least squares on an all-zero design matrix; returning zero coefficients");
        return Ok(DVector::zeros(n));
    }
    let (r, rhs) = if m > n {
        let qr = a.clone().qr();
        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        (qr.r(), qty.rows(0, n).into_owned())
    } else {
        (a.clone(), y.clone())
    };
    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(&rhs, tol * smax)
        .map_err(|e| Error::Numerical(format!("SVD solve failed: {e}")))
}

/// Features and payoffs of a training batch at the exercise dates.
///
/// `features` is path-major, `M × (N+1) × F`; `payoff` is `M × (N+1)`.
#[derive(Clone, Debug)]
pub struct ExerciseData {
    pub n_paths: usize,
    pub n_dates: usize,
    pub n_features: usize,
    pub features: Vec<f64>,
    pub payoff: Vec<f64>,
}

impl ExerciseData {
    pub fn build(batch: &PathBatch, basis: &BasisSpec, exercise_times: &[f64]) -> Result<Self> {
        basis.validate()?;
        basis.check_batch(batch)?;
        let idx = grid_indices(batch.times(), exercise_times)?;
        let (m, n, f) = (batch.n_paths(), idx.len(), basis.feature_count());
        let mut features = vec![0.0; m * n * f];
        features
            .par_chunks_mut(n * f)
            .enumerate()
            .try_for_each(|(i, out)| path_features(batch, i, basis, &idx, out))?;
        let mut payoff = Vec::with_capacity(m * n);
        for i in 0..m {
            let z = batch.payoff(i);
            payoff.extend(idx.iter().map(|&j| z[j]));
        }
        Ok(Self {
            n_paths: m,
            n_dates: n,
            n_features: f,
            features,
            payoff,
        })
    }

    fn row(&self, i: usize, n: usize) -> &[f64] {
        let f = self.n_features;
        let start = (i * self.n_dates + n) * f;
        &self.features[start..start + f]
    }

    fn z(&self, i: usize, n: usize) -> f64 {
        self.payoff[i * self.n_dates + n]
    }
}

/// Frozen stopping rule: per exercise date `t_n`, `n < N`, the continuation
/// coefficients, or `None` where no regression was possible (continue).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionPolicy {
    pub format: String,
    pub version: u32,
    pub basis: BasisSpec,
    pub exercise_times: Vec<f64>,
    pub in_the_money_only: bool,
    pub coefficients: Vec<Option<Vec<f64>>>,
}

impl RegressionPolicy {
    pub fn continuation(&self, n: usize, features: &[f64]) -> Option<f64> {
        self.coefficients[n]
            .as_ref()
            .map(|b| b.iter().zip(features).map(|(b, x)| b * x).sum())
    }

    /// Whether a path with payoff `z` and these features stops at `t_n`, `n ≥ 1`.
    pub fn stops(&self, n: usize, z: f64, features: &[f64]) -> bool {
        if self.in_the_money_only && !(z > 0.0) {
            return false;
        }
        self.continuation(n, features).is_some_and(|c| z >= c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        if p.format != POLICY_FORMAT || p.version != POLICY_VERSION {
            return Err(Error::Format(format!(
                "unsupported policy file {} v{}",
                p.format, p.version
            )));
        }
        if p.coefficients.len() + 1 != p.exercise_times.len() {
            return Err(Error::Format(
                "policy has one coefficient slot per date before T".into(),
            ));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A fitted policy and its in-sample value `max(Z_{t_0}, mean Z_{τ_1})`.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub policy: RegressionPolicy,
    pub train_estimate: f64,
}

/// Backward induction over the exercise dates of `data`.
pub fn fit_policy(
    data: &ExerciseData,
    basis: &BasisSpec,
    exercise_times: &[f64],
    in_the_money_only: bool,
) -> Result<FitResult> {
    let (m, nd, f) = (data.n_paths, data.n_dates, data.n_features);
    if nd != exercise_times.len() || nd < 2 {
        return Err(Error::Shape(format!(
            "{nd} dates of data for {} exercise times",
            exercise_times.len()
        )));
    }
    if m == 0 {
        return Err(Error::Parameter("cannot fit a policy on zero paths".into()));
    }
    let last = nd - 1;
    let mut cashflow: Vec<f64> = (0..m).map(|i| data.z(i, last)).collect();
    let mut coefficients = vec![None; last];
    for n in (0..last).rev() {
        let rows: Vec<usize> = (0..m)
            .filter(|&i| n == 0 || !in_the_money_only || data.z(i, n) > 0.0)
            .collect();
        if rows.is_empty() {
            log::info!("no in-the-money paths at exercise date {n}; continuing everywhere");
            continue;
        }
        let a = DMatrix::from_fn(rows.len(), f, |r, c| data.row(rows[r], n)[c]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| cashflow[i]));
        let beta = least_squares(&a, &y, SVD_TOLERANCE)?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite regression coefficients at date {n}"
            )));
        }
        if n > 0 {
            let fitted = &a * &beta;
            for (r, &i) in rows.iter().enumerate() {
                if data.z(i, n) >= fitted[r] {
                    cashflow[i] = data.z(i, n);
                }
            }
        }
        coefficients[n] = Some(beta.as_slice().to_vec());
    }
    let z0 = data.z(0, 0);
    let train_estimate = z0.max(summarize(&cashflow).mean);
    Ok(FitResult {
        policy: RegressionPolicy {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            basis: basis.clone(),
            exercise_times: exercise_times.to_vec(),
            in_the_money_only,
            coefficients,
        },
        train_estimate,
    })
}

/// Lower-bound estimate of a frozen policy on an independent batch.
#[derive(Clone, Debug)]
pub struct LowerBoundResult {
    pub estimate: f64,
    pub stderr: f64,
    /// Whether the deterministic payoff at `t_0` beat continuing.
    pub stopped_at_start: bool,
    /// Payoff of each path at the policy's stopping date from `t_1` on.
    pub stopped_payoffs: Vec<f64>,
    pub stop_dates: Vec<usize>,
}

/// Stopping dates and payoffs of `policy` for every path of `batch`.
pub fn apply_policy(
    policy: &RegressionPolicy,
    batch: &PathBatch,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let basis = &policy.basis;
    basis.validate()?;
    basis.check_batch(batch)?;
    let idx = grid_indices(batch.times(), &policy.exercise_times)?;
    if policy
        .coefficients
        .iter()
        .flatten()
        .any(|b| b.len() != basis.feature_count())
    {
        return Err(Error::BasisMismatch(
            "coefficient length differs from the basis".into(),
        ));
    }
    let f = basis.feature_count();
    let last = idx.len() - 1;
    let inner = &idx[1..last];
    let results: Vec<(usize, f64)> = (0..batch.n_paths())
        .into_par_iter()
        .map(|i| {
            let z = batch.payoff(i);
            let mut feats = vec![0.0; inner.len() * f];
            path_features(batch, i, basis, inner, &mut feats)?;
            for (k, row) in feats.chunks(f).enumerate() {
                let n = k + 1;
                if policy.stops(n, z[idx[n]], row) {
                    return Ok((n, z[idx[n]]));
                }
            }
            Ok((last, z[idx[last]]))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

pub fn evaluate_policy(policy: &RegressionPolicy, batch: &PathBatch) -> Result<LowerBoundResult> {
    if batch.n_paths() == 0 {
        return Err(Error::Parameter("cannot evaluate on zero paths".into()));
    }
    let (stop_dates, stopped_payoffs) = apply_policy(policy, batch)?;
    let z0 = batch.payoff(0)[0];
    Ok(combine_start(z0, stop_dates, stopped_payoffs))
}

/// `max(Z_{t_0}, mean)`: the standard error vanishes when stopping at once wins.
pub(crate) fn combine_start(
    z0: f64,
    stop_dates: Vec<usize>,
    stopped_payoffs: Vec<f64>,
) -> LowerBoundResult {
    let s = summarize(&stopped_payoffs);
    let stopped_at_start = z0 >= s.mean;
    LowerBoundResult {
        estimate: if stopped_at_start { z0 } else { s.mean },
        stderr: if stopped_at_start { 0.0 } else { s.stderr() },
        stopped_at_start,
        stopped_payoffs,
        stop_dates,
    }
}
