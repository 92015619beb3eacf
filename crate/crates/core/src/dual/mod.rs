//! Upper bounds from martingales spanned by signature integrands.
//!
//! Each basis martingale is a left-point Euler integral of one feature
//! against one Brownian component. The coefficients minimize the sample
//! average of `max_n (Z_{t_n} − M^λ_{t_n})`, a linear program; the frozen
//! martingale on fresh paths gives an upper-biased estimate.

mod ipm;
mod simplex;

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{path_features, BasisSpec};
use crate::models::PathBatch;
use crate::signature::grid_indices;
use crate::stats::{summarize, Summary};

pub use simplex::{solve_standard_form, SimplexSolution};

/// Default ridge weight on `‖λ‖²`, which picks a deterministic optimum.
pub const DEFAULT_RIDGE: f64 = 1e-10;

const COEFF_FORMAT: &str = "sigstop-dual-coefficients";
const COEFF_VERSION: u32 = 1;

/// Basis martingales of a batch at the exercise dates.
///
/// `values` is path-major `M × (N+1) × C` with `C = F·m`; column `r·m + b`
/// integrates feature `r` against Brownian component `b`.
#[derive(Clone, Debug)]
pub struct MartingaleBasis {
    pub n_paths: usize,
    pub n_dates: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
}

impl MartingaleBasis {
    pub fn value(&self, i: usize, n: usize, c: usize) -> f64 {
        self.values[(i * self.n_dates + n) * self.n_cols + c]
    }

    /// Mean and spread of each column at the last exercise date.
    pub fn terminal_summaries(&self) -> Vec<Summary> {
        let last = self.n_dates - 1;
        (0..self.n_cols)
            .map(|c| {
                let xs: Vec<f64> = (0..self.n_paths).map(|i| self.value(i, last, c)).collect();
                summarize(&xs)
            })
            .collect()
    }
}

/// `M^{r,b}_{t_n} = Σ_{s_j < t_n} h_r(s_j)·ΔW^b_j` for one path.
fn path_martingales(
    batch: &PathBatch,
    i: usize,
    basis: &BasisSpec,
    idx: &[usize],
    out: &mut [f64],
) -> Result<()> {
    let f = basis.feature_count();
    let m = batch.noise_dim();
    let cols = f * m;
    let steps = batch.steps();
    let left: Vec<usize> = (0..steps).collect();
    let mut h = vec![0.0; steps * f];
    path_features(batch, i, basis, &left, &mut h)?;
    let noise = batch.noise(i);
    let mut acc = vec![0.0; cols];
    out.fill(0.0);
    let mut next = 0;
    for j in 0..=steps {
        while next < idx.len() && idx[next] == j {
            out[next * cols..(next + 1) * cols].copy_from_slice(&acc);
            next += 1;
        }
        if j == steps {
            break;
        }
        let hj = &h[j * f..(j + 1) * f];
        let dw = &noise[j * m..(j + 1) * m];
        for (r, hr) in hj.iter().enumerate() {
            for (b, w) in dw.iter().enumerate() {
                acc[r * m + b] += hr * w;
            }
        }
    }
    Ok(())
}

pub fn build_martingale_basis(
    batch: &PathBatch,
    basis: &BasisSpec,
    exercise_times: &[f64],
) -> Result<MartingaleBasis> {
    basis.validate()?;
    basis.check_batch(batch)?;
    let idx = grid_indices(batch.times(), exercise_times)?;
    let nd = idx.len();
    let cols = basis.feature_count() * batch.noise_dim();
    let mut values = vec![0.0; batch.n_paths() * nd * cols];
    values
        .par_chunks_mut(nd * cols)
        .enumerate()
        .try_for_each(|(i, out)| path_martingales(batch, i, basis, &idx, out))?;
    Ok(MartingaleBasis {
        n_paths: batch.n_paths(),
        n_dates: nd,
        n_cols: cols,
        values,
    })
}

/// Discounted payoffs at the exercise dates, path-major `M × (N+1)`.
pub fn payoff_at_dates(batch: &PathBatch, exercise_times: &[f64]) -> Result<Vec<f64>> {
    let idx = grid_indices(batch.times(), exercise_times)?;
    Ok((0..batch.n_paths())
        .flat_map(|i| {
            let z = batch.payoff(i);
            idx.iter().map(move |&j| z[j])
        })
        .collect())
}

/// `min (1/M) Σ_i x_i` over `(x, λ)` subject to
/// `x_i ≥ a_{in} − Σ_c λ_c g_{in,c}` for every path `i` and date `n`.
#[derive(Clone, Debug)]
pub struct LpInstance {
    pub n_paths: usize,
    pub n_dates: usize,
    /// `a_{in}`, path-major.
    pub payoff: Vec<f64>,
    /// `g_{in,c}` with row `i·(N+1) + n`.
    pub g: DMatrix<f64>,
}

impl LpInstance {
    pub fn new(n_paths: usize, n_dates: usize, payoff: Vec<f64>, g: DMatrix<f64>) -> Result<Self> {
        let rows = n_paths * n_dates;
        if n_paths == 0 || n_dates == 0 || payoff.len() != rows || g.nrows() != rows {
            return Err(Error::Shape(format!(
                "LP with {n_paths} paths and {n_dates} dates needs {rows} rows, got {} payoffs and {} basis rows",
                payoff.len(),
                g.nrows()
            )));
        }
        if payoff.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical("LP data has non-finite entries".into()));
        }
        Ok(Self {
            n_paths,
            n_dates,
            payoff,
            g,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.g.ncols()
    }

    /// `(1/M) Σ_i max_n (a_{in} − g_{in}·λ)`, the value with `x` eliminated.
    pub fn objective(&self, lambda: &[f64]) -> f64 {
        let nd = self.n_dates;
        let mut total = 0.0;
        for i in 0..self.n_paths {
            let mut best = f64::NEG_INFINITY;
            for n in 0..nd {
                let r = i * nd + n;
                let gl: f64 = lambda
                    .iter()
                    .enumerate()
                    .map(|(c, l)| l * self.g[(r, c)])
                    .sum();
                best = best.max(self.payoff[r] - gl);
            }
            total += best;
        }
        total / self.n_paths as f64
    }

    /// Sparse triplet dump. Variables are `x_1..x_M` then `λ_1..λ_C`, all
    /// free; constraint `r` reads `Σ_c A[r,c]·v_c ≥ rhs[r]` and the goal is
    /// to minimize `Σ_c obj[c]·v_c`. Indices are 0-based.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        let (m, nd, cols) = (self.n_paths, self.n_dates, self.n_cols());
        writeln!(w, "% sigstop-lp 1")?;
        writeln!(
            w,
            "% minimize sum obj[c] v[c] subject to sum A[r,c] v[c] >= rhs[r]; v free"
        )?;
        writeln!(w, "dims {} {}", m * nd, m + cols)?;
        for i in 0..m {
            writeln!(w, "obj {i} {}", 1.0 / m as f64)?;
        }
        for r in 0..m * nd {
            writeln!(w, "A {r} {} 1", r / nd)?;
            for c in 0..cols {
                let v = self.g[(r, c)];
                if v != 0.0 {
                    writeln!(w, "A {r} {} {v}", m + c)?;
                }
            }
            writeln!(w, "rhs {r} {}", self.payoff[r])?;
        }
        Ok(())
    }
}

pub fn assemble_lp(payoff: &[f64], basis: &MartingaleBasis) -> Result<LpInstance> {
    let rows = basis.n_paths * basis.n_dates;
    let g = DMatrix::from_fn(rows, basis.n_cols, |r, c| {
        basis.values[r * basis.n_cols + c]
    });
    LpInstance::new(basis.n_paths, basis.n_dates, payoff.to_vec(), g)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpMethod {
    /// Simplex for small instances, interior point otherwise.
    #[default]
    Auto,
    Simplex,
    Ipm,
}

#[derive(Clone, Debug)]
pub struct LpOptions {
    pub method: LpMethod,
    /// Target accuracy of the objective, relative to `1 + |objective|`.
    pub tol: f64,
    pub max_iter: usize,
    pub ridge: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            method: LpMethod::Auto,
            tol: 1e-7,
            max_iter: 200,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub lambda: Vec<f64>,
    /// Exact objective at `lambda`, a feasible primal value.
    pub objective: f64,
    pub method: LpMethod,
    pub iterations: usize,
    pub converged: bool,
    /// Primal value minus the value of the (normalized) dual multipliers.
    pub gap: f64,
    /// Largest entry of `Σ π g`, which vanishes for dual-feasible multipliers.
    pub dual_residual: f64,
}

const SIMPLEX_MAX_ROWS: usize = 300;
const SIMPLEX_MAX_COLS: usize = 40;

pub fn solve_lp(lp: &LpInstance, opts: &LpOptions) -> Result<LpSolution> {
    let rows = lp.n_paths * lp.n_dates;
    // M^λ vanishes at t_0, so λ = 0 is optimal when no path ever pays more
    // than it does at t_0 (a zero payoff, for instance).
    let nd = lp.n_dates;
    let start_dominates = lp
        .payoff
        .chunks(nd)
        .all(|z| z[1..].iter().all(|&a| a <= z[0]));
    if lp.n_cols() == 0 || start_dominates {
        return Ok(LpSolution {
            lambda: vec![0.0; lp.n_cols()],
            objective: lp.objective(&vec![0.0; lp.n_cols()]),
            method: LpMethod::Auto,
            iterations: 0,
            converged: true,
            gap: 0.0,
            dual_residual: 0.0,
        });
    }
    let method = match opts.method {
        LpMethod::Auto if rows <= SIMPLEX_MAX_ROWS && lp.n_cols() <= SIMPLEX_MAX_COLS => {
            LpMethod::Simplex
        }
        LpMethod::Auto => LpMethod::Ipm,
        m => m,
    };
    match method {
        LpMethod::Simplex => solve_simplex(lp),
        _ => solve_interior(lp, opts),
    }
}

fn solve_simplex(lp: &LpInstance) -> Result<LpSolution> {
    let (m, nd, cols) = (lp.n_paths, lp.n_dates, lp.n_cols());
    let rows = m * nd;
    // columns: x⁺, x⁻, λ⁺, λ⁻, surplus
    let n = 2 * m + 2 * cols + rows;
    let mut a = DMatrix::zeros(rows, n);
    for r in 0..rows {
        let i = r / nd;
        a[(r, i)] = 1.0;
        a[(r, m + i)] = -1.0;
        for c in 0..cols {
            a[(r, 2 * m + c)] = lp.g[(r, c)];
            a[(r, 2 * m + cols + c)] = -lp.g[(r, c)];
        }
        a[(r, 2 * m + 2 * cols + r)] = -1.0;
    }
    let mut cost = vec![0.0; n];
    for i in 0..m {
        cost[i] = 1.0 / m as f64;
        cost[m + i] = -1.0 / m as f64;
    }
    let sol = simplex::solve_standard_form(&a, &lp.payoff, &cost, 50 * n + 1000)?;
    let lambda: Vec<f64> = (0..cols)
        .map(|c| sol.x[2 * m + c] - sol.x[2 * m + cols + c])
        .collect();
    let objective = lp.objective(&lambda);
    Ok(LpSolution {
        lambda,
        objective,
        method: LpMethod::Simplex,
        iterations: sol.iterations,
        converged: true,
        gap: (objective - sol.objective).abs(),
        dual_residual: 0.0,
    })
}

fn solve_interior(lp: &LpInstance, opts: &LpOptions) -> Result<LpSolution> {
    let (m, nd, cols) = (lp.n_paths, lp.n_dates, lp.n_cols());
    let rows = m * nd;
    let scales: Vec<f64> = (0..cols)
        .map(|c| {
            let rms = (lp.g.column(c).norm_squared() / rows as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let mut g = lp.g.clone();
    for (c, s) in scales.iter().enumerate() {
        g.column_mut(c).unscale_mut(*s);
    }
    let ridge: Vec<f64> = scales.iter().map(|s| opts.ridge / (s * s)).collect();
    let problem = ipm::IpmProblem {
        n_paths: m,
        n_dates: nd,
        rhs: &lp.payoff,
        g: &g,
        ridge: &ridge,
    };
    let out = ipm::solve(&problem, 0.1 * opts.tol, opts.max_iter)?;
    let lambda: Vec<f64> = out.lambda.iter().zip(&scales).map(|(l, s)| l / s).collect();
    let objective = lp.objective(&lambda);
    // normalize the multipliers per path to get a dual value and residual
    let mut pi = out.multipliers;
    for chunk in pi.chunks_mut(nd) {
        let total: f64 = chunk.iter().sum();
        chunk.iter_mut().for_each(|p| *p /= total * m as f64);
    }
    let dual_value: f64 = pi.iter().zip(&lp.payoff).map(|(p, a)| p * a).sum();
    let pv = nalgebra::DVector::from_column_slice(&pi);
    let dual_residual = lp.g.tr_mul(&pv).amax();
    let gap = objective - dual_value;
    if !out.converged {
        log::warn!("LP returned without convergence: gap {gap:e}, dual residual {dual_residual:e}");
    }
    Ok(LpSolution {
        lambda,
        objective,
        method: LpMethod::Ipm,
        iterations: out.iterations,
        converged: out.converged,
        gap,
        dual_residual,
    })
}

/// Frozen dual martingale: coefficients over the basis columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualCoefficients {
    pub format: String,
    pub version: u32,
    pub basis: BasisSpec,
    pub noise_dim: usize,
    pub exercise_times: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective_train: f64,
    pub converged: bool,
}

impl DualCoefficients {
    pub fn new(
        basis: BasisSpec,
        noise_dim: usize,
        exercise_times: Vec<f64>,
        solution: &LpSolution,
    ) -> Self {
        Self {
            format: COEFF_FORMAT.into(),
            version: COEFF_VERSION,
            basis,
            noise_dim,
            exercise_times,
            lambda: solution.lambda.clone(),
            objective_train: solution.objective,
            converged: solution.converged,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("coefficients serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        if c.format != COEFF_FORMAT || c.version != COEFF_VERSION {
            return Err(Error::Format(format!(
                "unsupported coefficient file {} v{}",
                c.format, c.version
            )));
        }
        if c.lambda.len() != c.basis.feature_count() * c.noise_dim {
            return Err(Error::Format(
                "coefficient count does not match the basis".into(),
            ));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fits dual coefficients on a training batch.
pub fn train_dual(
    batch: &PathBatch,
    basis: &BasisSpec,
    exercise_times: &[f64],
    opts: &LpOptions,
) -> Result<(DualCoefficients, LpSolution)> {
    train_dual_dumping(batch, basis, exercise_times, opts, None)
}

/// `train_dual` that also writes the LP in triplet form to `lp_dump`.
pub fn train_dual_dumping(
    batch: &PathBatch,
    basis: &BasisSpec,
    exercise_times: &[f64],
    opts: &LpOptions,
    lp_dump: Option<&Path>,
) -> Result<(DualCoefficients, LpSolution)> {
    let mb = build_martingale_basis(batch, basis, exercise_times)?;
    let lp = assemble_lp(&payoff_at_dates(batch, exercise_times)?, &mb)?;
    drop(mb);
    if let Some(path) = lp_dump {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        lp.write_triplets(&mut w)?;
        w.flush()?;
    }
    let sol = solve_lp(&lp, opts)?;
    let coeffs = DualCoefficients::new(
        basis.clone(),
        batch.noise_dim(),
        exercise_times.to_vec(),
        &sol,
    );
    Ok((coeffs, sol))
}

#[derive(Clone, Debug)]
pub struct UpperBoundResult {
    pub estimate: f64,
    pub stderr: f64,
    pub pathwise_max: Vec<f64>,
}

/// `(1/M̃) Σ_i max_n (Z_{t_n} − M^λ_{t_n})` on an independent batch.
pub fn evaluate_upper(coeffs: &DualCoefficients, batch: &PathBatch) -> Result<UpperBoundResult> {
    let basis = &coeffs.basis;
    basis.validate()?;
    basis.check_batch(batch)?;
    if batch.noise_dim() != coeffs.noise_dim
        || coeffs.lambda.len() != basis.feature_count() * coeffs.noise_dim
    {
        return Err(Error::BasisMismatch(format!(
            "coefficients for {} Brownian components and {} columns, batch has {} components",
            coeffs.noise_dim,
            coeffs.lambda.len(),
            batch.noise_dim()
        )));
    }
    if batch.n_paths() == 0 {
        return Err(Error::Parameter("cannot evaluate on zero paths".into()));
    }
    let idx = grid_indices(batch.times(), &coeffs.exercise_times)?;
    let nd = idx.len();
    let cols = coeffs.lambda.len();
    let pathwise_max: Vec<f64> = (0..batch.n_paths())
        .into_par_iter()
        .map(|i| {
            let mut mart = vec![0.0; nd * cols];
            path_martingales(batch, i, basis, &idx, &mut mart)?;
            let z = batch.payoff(i);
            Ok(idx
                .iter()
                .enumerate()
                .map(|(n, &j)| {
                    let ml: f64 = mart[n * cols..(n + 1) * cols]
                        .iter()
                        .zip(&coeffs.lambda)
                        .map(|(a, b)| a * b)
                        .sum();
                    z[j] - ml
                })
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<_>>()?;
    let s = summarize(&pathwise_max);
    Ok(UpperBoundResult {
        estimate: s.mean,
        stderr: s.stderr(),
        pathwise_max,
    })
}
