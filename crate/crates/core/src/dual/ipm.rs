//! Mehrotra predictor–corrector interior point method for
//!
//! ```text
//! min (1/M) Σ_i x_i + Σ_c ε_c λ_c²   s.t.   x_i + g_r·λ − s_r = a_r,  s ≥ 0,
//! ```
//!
//! with one row `r = (i, n)` per path and exercise date. Per path the free
//! variable `x_i` is eliminated, leaving a `C × C` Schur complement
//! `Σ_r θ_r (g_r − ḡ_i)(g_r − ḡ_i)ᵀ + 2ε`, where `θ = π/s` and `ḡ_i` is the
//! `θ`-weighted mean of the path's rows. The centered form avoids the
//! cancellation of the equivalent `Σθggᵀ − Σ bbᵀ/d` near convergence.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub struct IpmProblem<'a> {
    pub n_paths: usize,
    pub n_dates: usize,
    /// `a_r`, path-major.
    pub rhs: &'a [f64],
    /// `g_r` as an `R × C` matrix, columns already scaled.
    pub g: &'a DMatrix<f64>,
    /// Per-column ridge weights `ε_c`.
    pub ridge: &'a [f64],
}

pub struct IpmOutcome {
    pub lambda: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct State {
    x: Vec<f64>,
    lambda: DVector<f64>,
    s: Vec<f64>,
    pi: Vec<f64>,
}

struct Residuals {
    primal: Vec<f64>,
    paths: Vec<f64>,
    lambda: DVector<f64>,
}

struct Direction {
    dx: Vec<f64>,
    dl: DVector<f64>,
    ds: Vec<f64>,
    dpi: Vec<f64>,
}

impl IpmProblem<'_> {
    fn rows(&self) -> usize {
        self.n_paths * self.n_dates
    }

    fn cols(&self) -> usize {
        self.g.ncols()
    }

    fn residuals(&self, st: &State) -> Residuals {
        let gl = self.g * &st.lambda;
        let nd = self.n_dates;
        let primal = (0..self.rows())
            .map(|r| st.x[r / nd] + gl[r] - st.s[r] - self.rhs[r])
            .collect();
        let inv_m = 1.0 / self.n_paths as f64;
        let paths = st
            .pi
            .chunks(nd)
            .map(|p| p.iter().sum::<f64>() - inv_m)
            .collect();
        let pi = DVector::from_column_slice(&st.pi);
        let mut lambda = self.g.tr_mul(&pi);
        for c in 0..self.cols() {
            lambda[c] -= 2.0 * self.ridge[c] * st.lambda[c];
        }
        Residuals {
            primal,
            paths,
            lambda,
        }
    }

    /// Newton direction for complementarity target `π∘s + rc = 0`.
    fn direction(&self, st: &State, res: &Residuals, rc: &[f64]) -> Result<Direction> {
        let (m, nd, cols, rows) = (self.n_paths, self.n_dates, self.cols(), self.rows());
        let theta: Vec<f64> = st.pi.iter().zip(&st.s).map(|(p, s)| p / s).collect();
        let w: Vec<f64> = (0..rows)
            .map(|r| theta[r] * res.primal[r] + rc[r] / st.s[r])
            .collect();
        let mut gbar = DMatrix::zeros(m, cols);
        let mut dsum = vec![0.0; m];
        let mut u = vec![0.0; m];
        for i in 0..m {
            let d: f64 = theta[i * nd..(i + 1) * nd].iter().sum();
            dsum[i] = d;
            u[i] = res.paths[i] - w[i * nd..(i + 1) * nd].iter().sum::<f64>();
            for c in 0..cols {
                let mut acc = 0.0;
                for n in 0..nd {
                    acc += theta[i * nd + n] * self.g[(i * nd + n, c)];
                }
                gbar[(i, c)] = acc / d;
            }
        }
        // centered, θ-weighted rows
        let mut gc = DMatrix::zeros(rows, cols);
        let mut rhs = res.lambda.clone();
        for c in 0..cols {
            let gcol = self.g.column(c);
            let mut out = gc.column_mut(c);
            let mut acc = 0.0;
            for r in 0..rows {
                let i = r / nd;
                let centered = gcol[r] - gbar[(i, c)];
                out[r] = theta[r].sqrt() * centered;
                acc += w[r] * centered;
            }
            for i in 0..m {
                acc += gbar[(i, c)] * res.paths[i];
            }
            rhs[c] -= acc;
        }
        // the Schur complement C = Gcᵀ Gc
        let mut schur = DMatrix::<f64>::zeros(cols, cols);
        let (ri, ci) = (rows as isize, cols as isize);
        // SAFETY: both operands describe the column-major `rows × cols`
        // buffer of `gc` and the output the `cols × cols` buffer of `schur`.
        unsafe {
            matrixmultiply::dgemm(
                cols,
                rows,
                cols,
                1.0,
                gc.as_ptr(),
                ri,
                1,
                gc.as_ptr(),
                1,
                ri,
                0.0,
                schur.as_mut_ptr(),
                1,
                ci,
            );
        }
        for c in 0..cols {
            schur[(c, c)] += 2.0 * self.ridge[c];
        }
        let chol = schur.cholesky().ok_or_else(|| {
            Error::Numerical("interior point Schur complement is not positive definite".into())
        })?;
        let dl = chol.solve(&rhs);
        let gdl = self.g * &dl;
        let mut dx = vec![0.0; m];
        for i in 0..m {
            let mean_dl: f64 = (0..cols).map(|c| gbar[(i, c)] * dl[c]).sum();
            dx[i] = u[i] / dsum[i] - mean_dl;
        }
        let mut dpi = vec![0.0; rows];
        let mut ds = vec![0.0; rows];
        for r in 0..rows {
            let i = r / nd;
            dpi[r] = -theta[r] * (res.primal[r] + dx[i] + gdl[r]) - rc[r] / st.s[r];
            ds[r] = (-rc[r] - st.s[r] * dpi[r]) / st.pi[r];
        }
        Ok(Direction { dx, dl, ds, dpi })
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

/// Runs until the scaled residuals and the complementarity gap fall below `tol`.
pub fn solve(p: &IpmProblem, tol: f64, max_iter: usize) -> Result<IpmOutcome> {
    let (m, nd, rows, cols) = (p.n_paths, p.n_dates, p.rows(), p.cols());
    if m == 0 || nd == 0 || p.rhs.len() != rows || p.g.nrows() != rows || p.ridge.len() != cols {
        return Err(Error::Shape(
            "interior point data has inconsistent sizes".into(),
        ));
    }
    let amax = p.rhs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let x: Vec<f64> = p
        .rhs
        .chunks(nd)
        .map(|a| a.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0 + amax)
        .collect();
    let s: Vec<f64> = (0..rows).map(|r| x[r / nd] - p.rhs[r]).collect();
    let mut st = State {
        x,
        lambda: DVector::zeros(cols),
        s,
        pi: vec![1.0 / rows as f64; rows],
    };
    let inv_m = 1.0 / m as f64;
    let scale = 1.0 + amax;
    for iter in 0..max_iter {
        let res = p.residuals(&st);
        let gap: f64 = st.pi.iter().zip(&st.s).map(|(a, b)| a * b).sum();
        let primal_inf = res.primal.iter().fold(0.0f64, |a, x| a.max(x.abs())) / scale;
        let path_inf = res.paths.iter().fold(0.0f64, |a, x| a.max(x.abs())) / inv_m;
        let dual_inf = res.lambda.amax();
        log::debug!("ipm iter {iter}: gap {gap:.3e} primal {primal_inf:.3e} dual {dual_inf:.3e}");
        if gap <= tol * scale && primal_inf <= tol && path_inf <= tol && dual_inf <= tol {
            return Ok(IpmOutcome {
                lambda: st.lambda.as_slice().to_vec(),
                multipliers: st.pi,
                iterations: iter,
                converged: true,
            });
        }
        let mu = gap / rows as f64;
        let rc_aff: Vec<f64> = st.pi.iter().zip(&st.s).map(|(a, b)| a * b).collect();
        let aff = p.direction(&st, &res, &rc_aff)?;
        let a_aff = max_step(&st.s, &aff.ds).min(max_step(&st.pi, &aff.dpi));
        let mu_aff: f64 = (0..rows)
            .map(|r| (st.s[r] + a_aff * aff.ds[r]) * (st.pi[r] + a_aff * aff.dpi[r]))
            .sum::<f64>()
            / rows as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
        let rc: Vec<f64> = (0..rows)
            .map(|r| st.pi[r] * st.s[r] + aff.ds[r] * aff.dpi[r] - sigma * mu)
            .collect();
        let dir = p.direction(&st, &res, &rc)?;
        let alpha = (0.995 * max_step(&st.s, &dir.ds).min(max_step(&st.pi, &dir.dpi))).min(1.0);
        for i in 0..m {
            st.x[i] += alpha * dir.dx[i];
        }
        st.lambda += alpha * &dir.dl;
        for r in 0..rows {
            st.s[r] += alpha * dir.ds[r];
            st.pi[r] += alpha * dir.dpi[r];
        }
        if st.lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("interior point iterate diverged".into()));
        }
    }
    log::warn!("interior point stopped after {max_iter} iterations without meeting tolerance");
    Ok(IpmOutcome {
        lambda: st.lambda.as_slice().to_vec(),
        multipliers: st.pi,
        iterations: max_iter,
        converged: false,
    })
}
