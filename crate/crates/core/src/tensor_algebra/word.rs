use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A word over the alphabet `{1, …, e}`, naming one signature coordinate.
///
/// Letters are stored 1-based. The empty word has degree 0 and pairs with
/// the scalar (level-0) coordinate.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    /// Builds a word, checking every letter lies in `[1, alphabet]`.
    pub fn new(letters: &[u8], alphabet: usize) -> Result<Self> {
        if let Some(&bad) = letters.iter().find(|&&l| l == 0 || l as usize > alphabet) {
            return Err(Error::Parameter(format!(
                "letter {bad} outside alphabet 1..={alphabet}"
            )));
        }
        Ok(Word(letters.to_vec()))
    }

    /// Word with the given lexicographic rank among words of length `degree`.
    ///
    /// The rank of `i_1 … i_k` is `Σ (i_j − 1)·e^{k−j}`; this is the offset
    /// of the coordinate inside its level block.
    pub fn from_index(degree: usize, mut index: usize, alphabet: usize) -> Self {
        let mut letters = vec![0u8; degree];
        for slot in letters.iter_mut().rev() {
            *slot = (index % alphabet) as u8 + 1;
            index /= alphabet;
        }
        Word(letters)
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lexicographic rank inside the level block of this word's degree.
    pub fn index(&self, alphabet: usize) -> usize {
        self.0
            .iter()
            .fold(0usize, |acc, &l| acc * alphabet + (l as usize - 1))
    }

    pub fn max_letter(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0) as usize
    }

    fn appended(&self, letter: u8) -> Word {
        let mut letters = Vec::with_capacity(self.0.len() + 1);
        letters.extend_from_slice(&self.0);
        letters.push(letter);
        Word(letters)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "e");
        }
        for l in &self.0 {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    /// Parses the digit rendering used in dumps; `e` (or an empty string) is ∅.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "e" {
            return Ok(Word::empty());
        }
        s.chars()
            .map(|c| match c.to_digit(10) {
                Some(d) if d >= 1 => Ok(d as u8),
                _ => Err(Error::Format(format!("bad letter {c:?} in word {s:?}"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Word)
    }
}

/// All words of degree `≤ level` in storage order: by degree, then lexicographic.
pub fn all_words(alphabet: usize, level: usize) -> Vec<Word> {
    let mut out = Vec::new();
    let mut count = 1usize;
    for k in 0..=level {
        out.extend((0..count).map(|i| Word::from_index(k, i, alphabet)));
        count *= alphabet;
    }
    out
}

/// A finite linear combination of words.
///
/// Zero coefficients are never stored, so the zero functional has no terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearFunctional {
    terms: BTreeMap<Word, f64>,
}

impl LinearFunctional {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn word(w: Word) -> Self {
        Self::term(w, 1.0)
    }

    pub fn term(w: Word, coefficient: f64) -> Self {
        let mut l = Self::zero();
        l.add_term(w, coefficient);
        l
    }

    pub fn add_term(&mut self, w: Word, coefficient: f64) {
        if coefficient == 0.0 {
            return;
        }
        match self.terms.entry(w) {
            Entry::Occupied(mut slot) => {
                *slot.get_mut() += coefficient;
                if *slot.get() == 0.0 {
                    slot.remove();
                }
            }
            Entry::Vacant(slot) => {
                slot.insert(coefficient);
            }
        }
    }

    pub fn add(&self, other: &LinearFunctional) -> LinearFunctional {
        let mut out = self.clone();
        for (w, c) in &other.terms {
            out.add_term(w.clone(), *c);
        }
        out
    }

    pub fn scale(&self, c: f64) -> LinearFunctional {
        let mut out = LinearFunctional::zero();
        for (w, v) in &self.terms {
            out.add_term(w.clone(), v * c);
        }
        out
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, f64)> {
        self.terms.iter().map(|(w, c)| (w, *c))
    }

    pub fn coefficient(&self, w: &Word) -> f64 {
        self.terms.get(w).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest degree among stored words; 0 for the zero functional.
    pub fn degree(&self) -> usize {
        self.terms.keys().map(Word::degree).max().unwrap_or(0)
    }

    /// Sum of all coefficients.
    pub fn mass(&self) -> f64 {
        self.terms.values().sum()
    }
}

impl From<Word> for LinearFunctional {
    fn from(w: Word) -> Self {
        LinearFunctional::word(w)
    }
}

/// Shuffle product of two words.
///
/// Built bottom-up from `wi ⧢ vj = (w ⧢ vj)i + (wi ⧢ v)j` with `w ⧢ ∅ = ∅ ⧢ w = w`;
/// `table[a][b]` holds the shuffle of the length-`a` prefix of `w` with the
/// length-`b` prefix of `v`.
pub fn shuffle(w: &Word, v: &Word) -> LinearFunctional {
    let (p, q) = (w.degree(), v.degree());
    let mut table: Vec<Vec<BTreeMap<Word, f64>>> = vec![vec![BTreeMap::new(); q + 1]; p + 1];
    for a in 0..=p {
        for b in 0..=q {
            let cell = if a == 0 {
                BTreeMap::from([(Word(v.0[..b].to_vec()), 1.0)])
            } else if b == 0 {
                BTreeMap::from([(Word(w.0[..a].to_vec()), 1.0)])
            } else {
                let mut cell = BTreeMap::new();
                for (word, c) in &table[a - 1][b] {
                    *cell.entry(word.appended(w.0[a - 1])).or_insert(0.0) += c;
                }
                for (word, c) in &table[a][b - 1] {
                    *cell.entry(word.appended(v.0[b - 1])).or_insert(0.0) += c;
                }
                cell
            };
            table[a][b] = cell;
        }
    }
    LinearFunctional {
        terms: std::mem::take(&mut table[p][q]),
    }
}

/// Bilinear extension of [`shuffle`] to linear functionals.
pub fn shuffle_lin(l1: &LinearFunctional, l2: &LinearFunctional) -> LinearFunctional {
    let mut out = LinearFunctional::zero();
    for (w, a) in l1.terms() {
        for (v, b) in l2.terms() {
            for (u, c) in shuffle(w, v).terms() {
                out.add_term(u.clone(), a * b * c);
            }
        }
    }
    out
}
