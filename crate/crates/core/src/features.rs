//! Regression and integrand features: signature coordinates of the lifted
//! path plus Laguerre polynomials of the current state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PathBatch;
use crate::signature::{lift_payoff_augmented, lift_time_augmented, signature_stream, PathGrid};
use crate::tensor_algebra::{tensor_dim, TruncatedTensor};

/// Feature family shared by the primal regression and the dual integrands.
///
/// The signature is taken of `(t, X/lift_scale)` or, with `payoff_letter`,
/// of `(t, X/lift_scale, Z/payoff_scale)`, where `X` is the first state
/// coordinate. Polynomials use the first `state_scales.len()` state
/// coordinates, each divided by its scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub sig_level: usize,
    pub payoff_letter: bool,
    pub poly_degree: usize,
    pub state_scales: Vec<f64>,
    /// Upper clip applied to each scaled state before the polynomials; empty
    /// means no clipping.
    #[serde(default)]
    pub state_caps: Vec<f64>,
    pub lift_scale: f64,
    pub payoff_scale: f64,
    pub normalize_radius: Option<f64>,
}

impl BasisSpec {
    /// Plain signature basis of `(t, X)` at the given level.
    pub fn signature(sig_level: usize) -> Self {
        Self {
            sig_level,
            payoff_letter: false,
            poly_degree: 0,
            state_scales: Vec::new(),
            state_caps: Vec::new(),
            lift_scale: 1.0,
            payoff_scale: 1.0,
            normalize_radius: None,
        }
    }

    pub fn alphabet(&self) -> usize {
        if self.payoff_letter {
            3
        } else {
            2
        }
    }

    pub fn state_arity(&self) -> usize {
        self.state_scales.len()
    }

    pub fn sig_count(&self) -> usize {
        tensor_dim(self.alphabet(), self.sig_level)
    }

    pub fn poly_count(&self) -> usize {
        poly_terms(self.state_arity(), self.poly_degree).len()
    }

    pub fn feature_count(&self) -> usize {
        self.sig_count() + self.poly_count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sig_level == 0 {
            return Err(Error::Parameter(
                "signature level must be at least 1".into(),
            ));
        }
        if self.poly_degree > 0 && self.state_scales.is_empty() {
            return Err(Error::Parameter(
                "polynomial features need at least one state".into(),
            ));
        }
        let scales = self
            .state_scales
            .iter()
            .chain([&self.lift_scale, &self.payoff_scale]);
        if scales.into_iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Parameter(
                "feature scales must be positive and finite".into(),
            ));
        }
        if !self.state_caps.is_empty()
            && (self.state_caps.len() != self.state_scales.len()
                || self.state_caps.iter().any(|c| c.is_nan()))
        {
            return Err(Error::Parameter(
                "state caps must match the state scales".into(),
            ));
        }
        if let Some(r) = self.normalize_radius {
            if !(r > 1.0) {
                return Err(Error::Parameter(format!(
                    "normalization radius {r} must exceed 1"
                )));
            }
        }
        Ok(())
    }

    /// Checks that a batch carries the states this basis reads.
    pub fn check_batch(&self, batch: &PathBatch) -> Result<()> {
        if self.state_arity() > batch.state_dim() {
            return Err(Error::BasisMismatch(format!(
                "basis reads {} state coordinates, batch has {}",
                self.state_arity(),
                batch.state_dim()
            )));
        }
        Ok(())
    }
}

/// Laguerre polynomials `L_0(x), …, L_p(x)` by the three-term recursion.
pub fn laguerre(x: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    if degree >= 1 {
        out.push(1.0 - x);
    }
    for k in 1..degree {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// Polynomial terms as `(coordinate, degree)` factor lists: the constant,
/// every single-coordinate `L_i` and every product `L_i(x_a)·L_j(x_b)`,
/// `a < b`, of total degree at most `degree`.
fn poly_terms(arity: usize, degree: usize) -> Vec<Vec<(usize, usize)>> {
    if degree == 0 || arity == 0 {
        return Vec::new();
    }
    let mut terms = vec![Vec::new()];
    for total in 1..=degree {
        for a in 0..arity {
            terms.push(vec![(a, total)]);
        }
        for a in 0..arity {
            for b in a + 1..arity {
                for i in (1..total).rev() {
                    terms.push(vec![(a, i), (b, total - i)]);
                }
            }
        }
    }
    terms
}

/// Feature vector from a signature and the raw state at the same time.
pub fn build_features(sig: &TruncatedTensor, state: &[f64], basis: &BasisSpec) -> Result<Vec<f64>> {
    if sig.level() < basis.sig_level || sig.alphabet() != basis.alphabet() {
        return Err(Error::BasisMismatch(format!(
            "signature of alphabet {} level {} cannot feed a basis of alphabet {} level {}",
            sig.alphabet(),
            sig.level(),
            basis.alphabet(),
            basis.sig_level
        )));
    }
    if state.len() < basis.state_arity() {
        return Err(Error::BasisMismatch(format!(
            "basis needs {} state coordinates, got {}",
            basis.state_arity(),
            state.len()
        )));
    }
    let mut out = sig.coords()[..basis.sig_count()].to_vec();
    let mut poly = vec![0.0; basis.poly_count()];
    PolyEval::new(basis).eval(state, &mut poly);
    out.extend(poly);
    Ok(out)
}

struct PolyEval<'a> {
    basis: &'a BasisSpec,
    terms: Vec<Vec<(usize, usize)>>,
}

impl<'a> PolyEval<'a> {
    fn new(basis: &'a BasisSpec) -> Self {
        Self {
            basis,
            terms: poly_terms(basis.state_arity(), basis.poly_degree),
        }
    }

    fn eval(&self, state: &[f64], out: &mut [f64]) {
        if self.terms.is_empty() {
            return;
        }
        let tables: Vec<Vec<f64>> = self
            .basis
            .state_scales
            .iter()
            .zip(state)
            .enumerate()
            .map(|(c, (s, x))| {
                let cap = self
                    .basis
                    .state_caps
                    .get(c)
                    .copied()
                    .unwrap_or(f64::INFINITY);
                laguerre((x / s).min(cap), self.basis.poly_degree)
            })
            .collect();
        for (o, term) in out.iter_mut().zip(&self.terms) {
            *o = term.iter().map(|&(c, k)| tables[c][k]).product();
        }
    }
}

/// Per-coordinate `quantile` of each scaled polynomial state over every
/// grid point of a batch, for use as [`BasisSpec::state_caps`].
pub fn observed_state_caps(
    batch: &PathBatch,
    basis: &BasisSpec,
    quantile: f64,
) -> Result<Vec<f64>> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Parameter(format!(
            "clip quantile {quantile} must lie in (0, 1]"
        )));
    }
    if batch.n_paths() == 0 {
        return Err(Error::Parameter(
            "cannot take state quantiles of an empty batch".into(),
        ));
    }
    let n = batch.times().len();
    (0..basis.state_arity())
        .map(|c| {
            let s = basis.state_scales[c];
            let mut xs: Vec<f64> = (0..batch.n_paths())
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| batch.state(i, j)[c] / s)
                .collect();
            let k = ((xs.len() - 1) as f64 * quantile).floor() as usize;
            Ok(*xs.select_nth_unstable_by(k, f64::total_cmp).1)
        })
        .collect()
}

/// The lifted path of batch entry `i` fed to the signature.
pub fn lifted_path(batch: &PathBatch, i: usize, basis: &BasisSpec) -> Result<PathGrid> {
    let x: Vec<f64> = batch
        .state_column(i, 0)
        .iter()
        .map(|x| x / basis.lift_scale)
        .collect();
    let path = lift_time_augmented(&PathGrid::scalar(batch.times().clone(), x)?);
    if basis.payoff_letter {
        let z: Vec<f64> = batch
            .payoff(i)
            .iter()
            .map(|z| z / basis.payoff_scale)
            .collect();
        lift_payoff_augmented(&path, &z)
    } else {
        Ok(path)
    }
}

/// Features of path `i` at the fine-grid indices `at`, written row by row
/// into `out` (`at.len() × feature_count`).
pub fn path_features(
    batch: &PathBatch,
    i: usize,
    basis: &BasisSpec,
    at: &[usize],
    out: &mut [f64],
) -> Result<()> {
    let f = basis.feature_count();
    let d = basis.sig_count();
    debug_assert_eq!(out.len(), at.len() * f);
    let stream = signature_stream(
        &lifted_path(batch, i, basis)?,
        basis.sig_level,
        basis.normalize_radius,
    )?;
    let poly = PolyEval::new(basis);
    for (row, &j) in out.chunks_mut(f).zip(at) {
        row[..d].copy_from_slice(stream.coords(j));
        poly.eval(batch.state(i, j), &mut row[d..]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laguerre_values() {
        let l = laguerre(0.5, 3);
        assert_eq!(l[0], 1.0);
        assert_eq!(l[1], 0.5);
        // L_2(x) = (x² − 4x + 2)/2, L_3(x) = (−x³ + 9x² − 18x + 6)/6
        assert!((l[2] - (0.25 - 2.0 + 2.0) / 2.0).abs() < 1e-15);
        assert!((l[3] - (-0.125 + 2.25 - 9.0 + 6.0) / 6.0).abs() < 1e-15);
    }

    #[test]
    fn feature_examples() {
        let basis = BasisSpec::signature(1);
        let sig = TruncatedTensor::from_coords(2, 1, vec![1.0, 0.3, -0.2]).unwrap();
        assert_eq!(
            build_features(&sig, &[], &basis).unwrap(),
            vec![1.0, 0.3, -0.2]
        );

        let with_poly = BasisSpec {
            poly_degree: 1,
            state_scales: vec![1.0],
            ..BasisSpec::signature(1)
        };
        let f = build_features(&sig, &[0.25], &with_poly).unwrap();
        assert_eq!(f, vec![1.0, 0.3, -0.2, 1.0, 0.75]);

        let unit = TruncatedTensor::unit(2, 2);
        let f = build_features(
            &unit,
            &[2.0],
            &BasisSpec {
                sig_level: 2,
                ..with_poly.clone()
            },
        )
        .unwrap();
        assert_eq!(f[..7], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f[7..], [1.0, -1.0]);

        assert!(build_features(&sig, &[], &with_poly).is_err());
    }

    #[test]
    fn poly_counts() {
        let basis = |arity: usize, degree| BasisSpec {
            poly_degree: degree,
            state_scales: vec![1.0; arity],
            ..BasisSpec::signature(1)
        };
        assert_eq!(basis(2, 3).poly_count(), 10);
        assert_eq!(basis(2, 5).poly_count(), 21);
        assert_eq!(basis(1, 4).poly_count(), 5);
        assert_eq!(basis(3, 2).poly_count(), 1 + 3 + 3 + 3);
        assert_eq!(basis(2, 0).poly_count(), 0);
    }
}
