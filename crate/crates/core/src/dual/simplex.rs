//! Dense two-phase tableau simplex with Bland's rule.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-11;

pub struct SimplexSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct Tableau {
    t: DMatrix<f64>,
    basis: Vec<usize>,
    rows: usize,
    rhs: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        let ncols = self.t.ncols();
        for c in 0..ncols {
            self.t[(row, c)] /= p;
        }
        for r in 0..self.t.nrows() {
            if r == row {
                continue;
            }
            let f = self.t[(r, col)];
            if f != 0.0 {
                for c in 0..ncols {
                    let v = self.t[(row, c)];
                    self.t[(r, c)] -= f * v;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Minimizes the objective held in the last row over columns `< allowed`.
    fn run(&mut self, allowed: usize, max_iter: usize, iters: &mut usize) -> Result<()> {
        let obj = self.rows;
        loop {
            let entering = (0..allowed).find(|&c| self.t[(obj, c)] < -PIVOT_TOL);
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.t[(r, col)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(r, self.rhs)] / a;
                    let better = match leave {
                        None => true,
                        Some((lr, best)) => {
                            ratio < best - 1e-13
                                || (ratio <= best + 1e-13 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::Numerical(
                    "linear program is unbounded; the instance is malformed".into(),
                ));
            };
            self.pivot(row, col);
            *iters += 1;
            if *iters > max_iter {
                return Err(Error::Numerical(format!(
                    "simplex exceeded {max_iter} pivots"
                )));
            }
        }
    }
}

/// Minimizes `c·x` subject to `A x = b`, `x ≥ 0`.
pub fn solve_standard_form(
    a: &DMatrix<f64>,
    b: &[f64],
    c: &[f64],
    max_iter: usize,
) -> Result<SimplexSolution> {
    let (m, n) = a.shape();
    if b.len() != m || c.len() != n {
        return Err(Error::Shape("simplex data has inconsistent sizes".into()));
    }
    let rhs = n + m;
    let mut t = DMatrix::zeros(m + 1, n + m + 1);
    for r in 0..m {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for col in 0..n {
            t[(r, col)] = sign * a[(r, col)];
        }
        t[(r, n + r)] = 1.0;
        t[(r, rhs)] = sign * b[r];
    }
    // phase one: minimize the sum of artificials, priced out against the basis
    for col in 0..n {
        t[(m, col)] = -(0..m).map(|r| t[(r, col)]).sum::<f64>();
    }
    t[(m, rhs)] = -(0..m).map(|r| t[(r, rhs)]).sum::<f64>();
    let mut tab = Tableau {
        t,
        basis: (n..n + m).collect(),
        rows: m,
        rhs,
    };
    let mut iters = 0;
    tab.run(n, max_iter, &mut iters)?;
    let scale = 1.0 + b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if -tab.t[(m, rhs)] > 1e-9 * scale {
        return Err(Error::Numerical("linear program is infeasible".into()));
    }
    // drive artificials at level zero out of the basis where possible
    for r in 0..m {
        if tab.basis[r] >= n {
            if let Some(col) = (0..n).find(|&col| tab.t[(r, col)].abs() > 1e-9) {
                tab.pivot(r, col);
            }
        }
    }
    // phase two
    for col in 0..=rhs {
        tab.t[(m, col)] = 0.0;
    }
    for col in 0..n {
        tab.t[(m, col)] = c[col];
    }
    for r in 0..m {
        let bc = tab.basis[r];
        if bc < n && c[bc] != 0.0 {
            let f = c[bc];
            for col in 0..=rhs {
                let v = tab.t[(r, col)];
                tab.t[(m, col)] -= f * v;
            }
        }
    }
    tab.run(n, max_iter, &mut iters)?;
    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.t[(r, rhs)];
        }
    }
    let objective = x.iter().zip(c).map(|(x, c)| x * c).sum();
    Ok(SimplexSolution {
        x,
        objective,
        iterations: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // min −3x − 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), −36
        let a = DMatrix::from_row_slice(
            3,
            5,
            &[
                1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 3.0, 2.0, 0.0, 0.0, 1.0,
            ],
        );
        let sol =
            solve_standard_form(&a, &[4.0, 12.0, 18.0], &[-3.0, -5.0, 0.0, 0.0, 0.0], 100).unwrap();
        assert!((sol.objective + 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // x + y = 2, −x − y = −2 (redundant), min x − y → (0, 2)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, -1.0]);
        let sol = solve_standard_form(&a, &[2.0, -2.0], &[1.0, -1.0], 100).unwrap();
        assert!((sol.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_unbounded_and_infeasible() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert!(solve_standard_form(&a, &[1.0], &[0.0, -1.0], 100).is_err());
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(solve_standard_form(&a, &[-1.0], &[1.0], 100).is_err());
    }
}
