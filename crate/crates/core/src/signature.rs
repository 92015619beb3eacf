//! Signature streams of piecewise-linear sample paths.
//!
//! A path sampled on `s_0 = 0 < s_1 < … < s_J = T` is interpolated linearly;
//! its truncated signature over `[0, s_{j+1}]` follows from the one over
//! `[0, s_j]` by Chen's relation, `S_{j+1} = S_j ⋆ exp(x_{j+1} − x_j)`.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor_algebra::{
    all_words, exp_into, mul_into, normalize_in_place, tensor_dim, TruncatedTensor,
};

/// Samples of a `d`-dimensional path on a strictly increasing time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrid {
    times: Arc<[f64]>,
    values: Vec<f64>,
    dim: usize,
}

impl PathGrid {
    /// `values` is row-major: `times.len()` rows of `dim` columns.
    pub fn new(times: Arc<[f64]>, values: Vec<f64>, dim: usize) -> Result<Self> {
        validate_times(&times)?;
        if dim == 0 {
            return Err(Error::Shape("path dimension must be positive".into()));
        }
        if values.len() != times.len() * dim {
            return Err(Error::Shape(format!(
                "{} values for {} times of dimension {dim}",
                values.len(),
                times.len()
            )));
        }
        Ok(Self { times, values, dim })
    }

    /// Scalar path from one value per grid time.
    pub fn scalar(times: Arc<[f64]>, values: Vec<f64>) -> Result<Self> {
        Self::new(times, values, 1)
    }

    pub fn times(&self) -> &Arc<[f64]> {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of segments `J`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.dim)
            .copied()
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The path with column `c` removed.
    pub fn without_column(&self, c: usize) -> Result<Self> {
        if c >= self.dim || self.dim == 1 {
            return Err(Error::Shape(format!(
                "cannot drop column {c} of a {}-dimensional path",
                self.dim
            )));
        }
        let values = self
            .values
            .chunks(self.dim)
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .filter(move |(i, _)| *i != c)
                    .map(|(_, x)| *x)
            })
            .collect();
        Self::new(self.times.clone(), values, self.dim - 1)
    }

    fn with_extra_column(&self, front: bool, column: &[f64]) -> Self {
        let dim = self.dim + 1;
        let mut values = Vec::with_capacity(self.times.len() * dim);
        for (row, &x) in self.values.chunks(self.dim).zip(column) {
            if front {
                values.push(x);
                values.extend_from_slice(row);
            } else {
                values.extend_from_slice(row);
                values.push(x);
            }
        }
        Self {
            times: self.times.clone(),
            values,
            dim,
        }
    }
}

pub(crate) fn validate_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Grid("a grid needs at least two points".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::Grid(format!(
            "grid must start at 0, starts at {}",
            times[0]
        )));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::Grid(format!(
            "times must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Uniform grid `s_j = j·T/J`, `j = 0..=J`.
pub fn uniform_grid(horizon: f64, steps: usize) -> Result<Arc<[f64]>> {
    if !(horizon > 0.0) || steps == 0 {
        return Err(Error::Grid(format!(
            "need a positive horizon and at least one step (T={horizon}, J={steps})"
        )));
    }
    let dt = horizon / steps as f64;
    let mut times: Vec<f64> = (0..=steps).map(|j| j as f64 * dt).collect();
    times[steps] = horizon;
    Ok(times.into())
}

/// Prepends time as the first coordinate, so letter 1 always means time.
pub fn lift_time_augmented(path: &PathGrid) -> PathGrid {
    let times = path.times.clone();
    path.with_extra_column(true, &times)
}

/// Appends a payoff path as the last coordinate.
pub fn lift_payoff_augmented(path: &PathGrid, payoff: &[f64]) -> Result<PathGrid> {
    if payoff.len() != path.times.len() {
        return Err(Error::Shape(format!(
            "payoff has {} samples, path has {}",
            payoff.len(),
            path.times.len()
        )));
    }
    Ok(path.with_extra_column(false, payoff))
}

/// Truncated signatures `X^{≤K}_{0,s_j}` for every grid point of one path.
#[derive(Clone, Debug)]
pub struct SignatureStream {
    level: usize,
    alphabet: usize,
    times: Arc<[f64]>,
    data: Vec<f64>,
    normalized: Option<f64>,
}

impl SignatureStream {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn times(&self) -> &Arc<[f64]> {
        &self.times
    }

    /// Radius used for robust normalization of the stored entries, if any.
    pub fn normalized(&self) -> Option<f64> {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Coordinate count `D` of each entry.
    pub fn width(&self) -> usize {
        tensor_dim(self.alphabet, self.level)
    }

    pub fn coords(&self, j: usize) -> &[f64] {
        let w = self.width();
        &self.data[j * w..(j + 1) * w]
    }

    pub fn get(&self, j: usize) -> TruncatedTensor {
        TruncatedTensor::from_coords(self.alphabet, self.level, self.coords(j).to_vec())
            .expect("stream entries have the stream's shape")
    }

    /// CSV matrix with one row per grid time and one column per word.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time");
        for w in all_words(self.alphabet, self.level) {
            let _ = write!(s, ",{w}");
        }
        s.push('\n');
        for (j, t) in self.times.iter().enumerate() {
            let _ = write!(s, "{t}");
            for x in self.coords(j) {
                let _ = write!(s, ",{x:e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Signature stream of the piecewise-linear interpolation of `path`.
///
/// With `normalize_radius` set, each stored entry is passed through robust
/// normalization; the recursion itself always runs on raw signatures so
/// Chen's relation holds between consecutive raw entries.
pub fn signature_stream(
    path: &PathGrid,
    level: usize,
    normalize_radius: Option<f64>,
) -> Result<SignatureStream> {
    if level == 0 {
        return Err(Error::Parameter(
            "signature level must be at least 1".into(),
        ));
    }
    validate_times(&path.times)?;
    let e = path.dim;
    let width = tensor_dim(e, level);
    let n = path.times.len();
    let mut data = vec![0.0; n * width];
    let mut raw = vec![0.0; width];
    raw[0] = 1.0;
    let mut step = vec![0.0; width];
    let mut next = vec![0.0; width];
    let mut delta = vec![0.0; e];
    data[..width].copy_from_slice(&raw);
    for j in 0..n - 1 {
        for ((d, a), b) in delta.iter_mut().zip(path.row(j)).zip(path.row(j + 1)) {
            *d = b - a;
        }
        exp_into(&delta, level, &mut step);
        mul_into(&raw, &step, e, level, &mut next);
        std::mem::swap(&mut raw, &mut next);
        let slot = &mut data[(j + 1) * width..(j + 2) * width];
        slot.copy_from_slice(&raw);
        if let Some(r) = normalize_radius {
            normalize_in_place(slot, e, level, r)?;
        }
    }
    if let Some(r) = normalize_radius {
        // level 0 is a no-op for the unit, but this also validates the radius
        normalize_in_place(&mut data[..width], e, level, r)?;
    }
    Ok(SignatureStream {
        level,
        alphabet: e,
        times: path.times.clone(),
        data,
        normalized: normalize_radius,
    })
}

/// Grid indices of `targets`; every target must be a grid point.
///
/// A target matches a grid time when they agree to `1e-12` relative to the
/// horizon, which absorbs the rounding of `n·T/N` against `j·T/J`.
pub fn grid_indices(times: &[f64], targets: &[f64]) -> Result<Vec<usize>> {
    let horizon = times.last().copied().unwrap_or(1.0).abs().max(1.0);
    targets
        .iter()
        .map(|&t| {
            let pos = times.partition_point(|&s| s < t);
            [pos.wrapping_sub(1), pos]
                .into_iter()
                .filter(|&i| i < times.len())
                .find(|&i| (times[i] - t).abs() <= 1e-12 * horizon)
                .ok_or(Error::Alignment(t))
        })
        .collect()
}

/// Stream entries at the given exercise times.
pub fn sample_at(stream: &SignatureStream, exercise_times: &[f64]) -> Result<Vec<TruncatedTensor>> {
    Ok(grid_indices(&stream.times, exercise_times)?
        .into_iter()
        .map(|j| stream.get(j))
        .collect())
}
