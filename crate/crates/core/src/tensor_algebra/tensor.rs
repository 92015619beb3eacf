use std::fmt::Write as _;

use super::word::{LinearFunctional, Word};
use crate::error::{Error, Result};

/// Number of coordinates `Σ_{k=0}^{K} e^k` of a level-`K` tensor over `e` letters.
pub fn tensor_dim(alphabet: usize, level: usize) -> usize {
    let mut total = 0usize;
    let mut block = 1usize;
    for _ in 0..=level {
        total += block;
        block *= alphabet;
    }
    total
}

/// Start offset of each level block, plus the total length as the last entry.
pub(crate) fn level_offsets(alphabet: usize, level: usize) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(level + 2);
    let mut at = 0usize;
    let mut block = 1usize;
    for _ in 0..=level {
        offsets.push(at);
        at += block;
        block *= alphabet;
    }
    offsets.push(at);
    offsets
}

/// Element of the truncated tensor algebra `T^{≤K}(ℝ^e)`.
///
/// Coordinates are stored densely, level by level; inside level `k` the word
/// `i_1 … i_k` sits at offset `Σ (i_j − 1)·e^{k−j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedTensor {
    alphabet: usize,
    level: usize,
    data: Vec<f64>,
}

impl TruncatedTensor {
    pub fn zeros(alphabet: usize, level: usize) -> Self {
        assert!(alphabet >= 1, "alphabet must contain at least one letter");
        Self {
            alphabet,
            level,
            data: vec![0.0; tensor_dim(alphabet, level)],
        }
    }

    /// The unit `(1, 0, …, 0)` of the concatenation product.
    pub fn unit(alphabet: usize, level: usize) -> Self {
        let mut t = Self::zeros(alphabet, level);
        t.data[0] = 1.0;
        t
    }

    pub fn from_coords(alphabet: usize, level: usize, data: Vec<f64>) -> Result<Self> {
        if alphabet == 0 {
            return Err(Error::Parameter("alphabet must be non-empty".into()));
        }
        let want = tensor_dim(alphabet, level);
        if data.len() != want {
            return Err(Error::Shape(format!(
                "expected {want} coordinates for e={alphabet}, K={level}, got {}",
                data.len()
            )));
        }
        Ok(Self {
            alphabet,
            level,
            data,
        })
    }

    pub fn from_blocks(alphabet: usize, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Shape("at least the scalar block is required".into()));
        }
        let level = blocks.len() - 1;
        let mut expected = 1usize;
        for (k, b) in blocks.iter().enumerate() {
            if b.len() != expected {
                return Err(Error::Shape(format!(
                    "level {k} block has {} entries, expected {expected}",
                    b.len()
                )));
            }
            expected *= alphabet;
        }
        Self::from_coords(alphabet, level, blocks.concat())
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn coords(&self) -> &[f64] {
        &self.data
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let (start, len) = self.block_range(k);
        &self.data[start..start + len]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        let (start, len) = self.block_range(k);
        &mut self.data[start..start + len]
    }

    fn block_range(&self, k: usize) -> (usize, usize) {
        assert!(k <= self.level, "level {k} above truncation {}", self.level);
        let len = self.alphabet.pow(k as u32);
        (tensor_dim(self.alphabet, k) - len, len)
    }

    /// Flat position of a word, after checking degree and alphabet.
    pub fn position(&self, w: &Word) -> Result<usize> {
        if w.degree() > self.level {
            return Err(Error::Degree {
                degree: w.degree(),
                level: self.level,
            });
        }
        if w.max_letter() > self.alphabet {
            return Err(Error::Shape(format!(
                "word {w} uses a letter outside the alphabet of size {}",
                self.alphabet
            )));
        }
        let k = w.degree();
        Ok(tensor_dim(self.alphabet, k) - self.alphabet.pow(k as u32) + w.index(self.alphabet))
    }

    pub fn get(&self, w: &Word) -> Result<f64> {
        Ok(self.data[self.position(w)?])
    }

    /// The pairing `⟨a, l⟩` extended linearly over the terms of `l`.
    pub fn inner(&self, l: &LinearFunctional) -> Result<f64> {
        l.terms().map(|(w, c)| self.get(w).map(|x| c * x)).sum()
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.alphabet != other.alphabet || self.level != other.level {
            return Err(Error::Shape(format!(
                "tensor shapes differ: (e={}, K={}) vs (e={}, K={})",
                self.alphabet, self.level, other.alphabet, other.level
            )));
        }
        Ok(())
    }

    /// Truncated concatenation product `a ⋆ b`.
    pub fn concat_product(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let mut out = vec![0.0; self.data.len()];
        mul_into(&self.data, &other.data, self.alphabet, self.level, &mut out);
        Ok(Self {
            alphabet: self.alphabet,
            level: self.level,
            data: out,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self { data, ..*self })
    }

    /// Tensor exponential of a straight segment: level `k` is `Δ^{⊗k}/k!`.
    pub fn exp(increment: &[f64], level: usize) -> Self {
        let alphabet = increment.len();
        let mut t = Self::zeros(alphabet, level);
        exp_into(increment, level, &mut t.data);
        t
    }

    pub fn level_norms_sq(&self) -> Vec<f64> {
        level_norms_sq(&self.data, self.alphabet, self.level)
    }

    /// Euclidean norm over all coordinates.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Dilation `δ_c`: level `k` is multiplied by `c^k`.
    pub fn dilate(&self, c: f64) -> Self {
        let mut out = self.clone();
        dilate_in_place(&mut out.data, self.alphabet, self.level, c);
        out
    }

    /// Maps a group-like tensor into the closed ball of radius `radius`.
    ///
    /// Tensors already inside the ball are returned unchanged; otherwise the
    /// result is `δ_c a` with `c ∈ (0, 1)` solving `‖δ_c a‖ = radius`.
    pub fn normalize(&self, radius: f64) -> Result<Self> {
        let mut out = self.clone();
        normalize_in_place(&mut out.data, self.alphabet, self.level, radius)?;
        Ok(out)
    }

    /// CSV rows `level,word,coefficient`, one per coordinate.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,word,coefficient\n");
        let offsets = level_offsets(self.alphabet, self.level);
        for k in 0..=self.level {
            for (i, x) in self.data[offsets[k]..offsets[k + 1]].iter().enumerate() {
                let w = Word::from_index(k, i, self.alphabet);
                let _ = writeln!(s, "{k},{w},{x:e}");
            }
        }
        s
    }
}

/// `out = a ⋆ b` on raw coordinate slices of identical shape.
pub(crate) fn mul_into(a: &[f64], b: &[f64], alphabet: usize, level: usize, out: &mut [f64]) {
    let offsets = level_offsets(alphabet, level);
    out.fill(0.0);
    for k in 0..=level {
        let (ok, ok1) = (offsets[k], offsets[k + 1]);
        for i in 0..=k {
            let j = k - i;
            let a_i = &a[offsets[i]..offsets[i + 1]];
            let b_j = &b[offsets[j]..offsets[j + 1]];
            let width = b_j.len();
            let out_k = &mut out[ok..ok1];
            for (u, &au) in a_i.iter().enumerate() {
                if au == 0.0 {
                    continue;
                }
                let dst = &mut out_k[u * width..(u + 1) * width];
                for (d, &bv) in dst.iter_mut().zip(b_j) {
                    *d += au * bv;
                }
            }
        }
    }
}

/// Writes `exp(Δ)` into `out`, built level by level as `X^{(k)} = X^{(k-1)} ⊗ Δ / k`.
pub(crate) fn exp_into(increment: &[f64], level: usize, out: &mut [f64]) {
    let alphabet = increment.len();
    let offsets = level_offsets(alphabet, level);
    out[0] = 1.0;
    for k in 1..=level {
        let inv_k = 1.0 / k as f64;
        let (prev, cur) = out.split_at_mut(offsets[k]);
        let prev = &prev[offsets[k - 1]..];
        let cur = &mut cur[..offsets[k + 1] - offsets[k]];
        for (u, &p) in prev.iter().enumerate() {
            let dst = &mut cur[u * alphabet..(u + 1) * alphabet];
            let scaled = p * inv_k;
            for (d, &x) in dst.iter_mut().zip(increment) {
                *d = scaled * x;
            }
        }
    }
}

pub(crate) fn level_norms_sq(data: &[f64], alphabet: usize, level: usize) -> Vec<f64> {
    let offsets = level_offsets(alphabet, level);
    (0..=level)
        .map(|k| data[offsets[k]..offsets[k + 1]].iter().map(|x| x * x).sum())
        .collect()
}

pub(crate) fn dilate_in_place(data: &mut [f64], alphabet: usize, level: usize, c: f64) {
    let offsets = level_offsets(alphabet, level);
    let mut factor = 1.0;
    for k in 1..=level {
        factor *= c;
        for x in &mut data[offsets[k]..offsets[k + 1]] {
            *x *= factor;
        }
    }
}

const NORMALIZE_TOL: f64 = 1e-12;
const NORMALIZE_MAX_ITER: usize = 200;

/// Robust normalization on a raw coordinate slice.
///
/// Returns the dilation factor applied (1 when the tensor was already inside
/// the ball). The root of `c ↦ ‖δ_c a‖ − R` is bracketed in `(0, 1]` and found
/// by bisection.
pub(crate) fn normalize_in_place(
    data: &mut [f64],
    alphabet: usize,
    level: usize,
    radius: f64,
) -> Result<f64> {
    if !(radius > 1.0) {
        return Err(Error::Parameter(format!(
            "normalization radius must exceed 1, got {radius}"
        )));
    }
    let norms = level_norms_sq(data, alphabet, level);
    let total: f64 = norms.iter().sum();
    // the tolerance keeps normalization idempotent on its own output
    if total.sqrt() <= radius + NORMALIZE_TOL {
        return Ok(1.0);
    }
    if norms[0].sqrt() >= radius {
        return Err(Error::Parameter(
            "scalar part does not fit in the normalization ball; tensor is not group-like".into(),
        ));
    }
    let dilated_norm = |c: f64| {
        let c2 = c * c;
        let mut f = 1.0;
        let mut s = 0.0;
        for n in &norms {
            s += f * n;
            f *= c2;
        }
        s.sqrt()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut c = lo;
    for _ in 0..NORMALIZE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let residual = dilated_norm(mid) - radius;
        if (-NORMALIZE_TOL..=0.0).contains(&residual) {
            c = mid;
            break;
        }
        if residual > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        c = lo;
    }
    dilate_in_place(data, alphabet, level, c);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(coords: &[f64]) -> TruncatedTensor {
        TruncatedTensor::from_coords(1, coords.len() - 1, coords.to_vec()).unwrap()
    }

    #[test]
    fn dims_and_blocks() {
        assert_eq!(tensor_dim(3, 4), 121);
        assert_eq!(tensor_dim(2, 6), 127);
        let t = TruncatedTensor::zeros(3, 2);
        assert_eq!(t.block(0).len(), 1);
        assert_eq!(t.block(2).len(), 9);
        assert!(TruncatedTensor::from_blocks(2, vec![vec![1.0], vec![0.0; 3]]).is_err());
    }

    #[test]
    fn unit_is_identity() {
        let a = TruncatedTensor::exp(&[0.3, -1.2, 0.5], 3);
        let u = TruncatedTensor::unit(3, 3);
        assert_eq!(a.concat_product(&u).unwrap(), a);
        assert_eq!(u.concat_product(&a).unwrap(), a);
    }

    #[test]
    fn scalar_alphabet_product() {
        let (x, y) = (0.7, -1.9);
        let got = scalar(&[1.0, x, 0.0])
            .concat_product(&scalar(&[1.0, y, 0.0]))
            .unwrap();
        assert_eq!(got.coords(), &[1.0, x + y, x * y]);
    }

    #[test]
    fn product_shape_mismatch() {
        let a = TruncatedTensor::unit(2, 2);
        let b = TruncatedTensor::unit(2, 3);
        assert!(matches!(a.concat_product(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn exp_examples() {
        assert_eq!(
            TruncatedTensor::exp(&[0.0, 0.0], 3),
            TruncatedTensor::unit(2, 3)
        );
        let e = TruncatedTensor::exp(&[2.0], 3);
        assert_relative_eq!(e.coords()[3], 4.0 / 3.0, epsilon = 1e-15);
        assert_eq!(&e.coords()[..3], &[1.0, 2.0, 2.0]);
        let e2 = TruncatedTensor::exp(&[1.0, 1.0], 2);
        assert_eq!(e2.get(&"12".parse().unwrap()).unwrap(), 0.5);
    }

    #[test]
    fn collinear_exponentials_compose() {
        let d1 = [0.4, -0.2, 1.1];
        let d2: Vec<f64> = d1.iter().map(|x| 2.5 * x).collect();
        let sum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        let lhs = TruncatedTensor::exp(&d1, 5)
            .concat_product(&TruncatedTensor::exp(&d2, 5))
            .unwrap();
        let rhs = TruncatedTensor::exp(&sum, 5);
        for (a, b) in lhs.coords().iter().zip(rhs.coords()) {
            assert_relative_eq!(a, b, epsilon = 1e-13, max_relative = 1e-13);
        }
    }

    #[test]
    fn inner_examples() {
        let a = TruncatedTensor::exp(&[0.3, 2.0], 4);
        assert_eq!(a.inner(&Word::empty().into()).unwrap(), 1.0);
        let u = TruncatedTensor::unit(2, 4);
        assert_eq!(u.inner(&"1".parse::<Word>().unwrap().into()).unwrap(), 0.0);
        let t = 0.3;
        assert_relative_eq!(
            a.inner(&"11".parse::<Word>().unwrap().into()).unwrap(),
            t * t / 2.0,
            epsilon = 1e-16
        );
        let too_deep: LinearFunctional = "11111".parse::<Word>().unwrap().into();
        assert!(matches!(
            a.inner(&too_deep),
            Err(Error::Degree {
                degree: 5,
                level: 4
            })
        ));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(TruncatedTensor::unit(3, 2).norm(), 1.0);
        assert_eq!(TruncatedTensor::zeros(3, 2).norm(), 0.0);
        assert_relative_eq!(scalar(&[1.0, 3.0, 4.0]).norm(), 26f64.sqrt());
    }

    #[test]
    fn dilate_examples() {
        let a = scalar(&[1.0, 2.0, 2.0]);
        assert_eq!(a.dilate(1.0), a);
        assert_eq!(a.dilate(0.5).coords(), &[1.0, 1.0, 0.5]);
        let u = TruncatedTensor::unit(2, 3);
        assert_eq!(u.dilate(7.0), u);
    }

    #[test]
    fn normalize_examples() {
        let inside = TruncatedTensor::exp(&[0.1, 0.2], 3);
        assert_eq!(inside.normalize(4.0).unwrap(), inside);

        // 1 + 9c² = 4 gives c* = √3/3, so the level-1 coordinate becomes √3.
        let a = scalar(&[1.0, 3.0]);
        let n = a.normalize(2.0).unwrap();
        assert_eq!(n.coords()[0], 1.0);
        assert_relative_eq!(n.coords()[1], 3f64.sqrt(), epsilon = 1e-11);
        assert!(n.norm() <= 2.0 + 1e-9);

        assert_eq!(n.normalize(2.0).unwrap(), n);
        assert!(matches!(a.normalize(1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn csv_dump_lists_every_coordinate() {
        let t = TruncatedTensor::exp(&[1.0, 2.0], 2);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 7);
        assert_eq!(lines[1], "0,e,1e0");
        assert!(lines[4].starts_with("2,11,"));
    }
}
