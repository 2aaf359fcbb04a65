//! Finite words over `{1..N}` and finite codes: disjointness, decoding,
//! powers and suffix extensions.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A letter of the base alphabet, always in `1..=N`.
pub type Symbol = u8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("words must be nonempty")]
    EmptyWord,
    #[error("code has no words")]
    EmptyCode,
    #[error("symbol {symbol} outside 1..={n}")]
    SymbolOutOfRange { symbol: Symbol, n: Symbol },
    #[error("duplicate word at index {0}")]
    DuplicateWord(usize),
    #[error("code is not disjoint")]
    NotDisjoint,
    #[error("stream is not codable at position {position}")]
    NotCodable { position: usize },
    #[error("decoding count did not stabilise within a window of {window} symbols")]
    WindowTooSmall { window: usize },
    #[error("code size {size} exceeds cap {cap}")]
    SizeOverflow { size: u128, cap: u128 },
    #[error("expected {expected} suffixes, got {got}")]
    SuffixCount { expected: usize, got: usize },
    #[error("periodic parts of a stream must be nonempty")]
    EmptyPeriod,
}

/// Nonempty finite word.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Symbol>", into = "Vec<Symbol>")]
pub struct Word(Vec<Symbol>);

impl Word {
    pub fn new(symbols: Vec<Symbol>) -> Result<Self, CodeError> {
        if symbols.is_empty() {
            return Err(CodeError::EmptyWord);
        }
        if symbols.contains(&0) {
            return Err(CodeError::SymbolOutOfRange { symbol: 0, n: 0 });
        }
        Ok(Word(symbols))
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_prefix_of(&self, other: &[Symbol]) -> bool {
        other.len() >= self.0.len() && other[..self.0.len()] == self.0[..]
    }

    /// `(self, suffix)`.
    pub fn extended(&self, suffix: &[Symbol]) -> Word {
        let mut s = self.0.clone();
        s.extend_from_slice(suffix);
        Word(s)
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Word>) -> Word {
        let mut s = Vec::new();
        for p in parts {
            s.extend_from_slice(&p.0);
        }
        Word(s)
    }
}

impl TryFrom<Vec<Symbol>> for Word {
    type Error = CodeError;
    fn try_from(v: Vec<Symbol>) -> Result<Self, CodeError> {
        Word::new(v)
    }
}

impl From<Word> for Vec<Symbol> {
    fn from(w: Word) -> Self {
        w.0
    }
}

impl AsRef<[Symbol]> for Word {
    fn as_ref(&self) -> &[Symbol] {
        &self.0
    }
}

impl std::ops::Deref for Word {
    type Target = [Symbol];
    fn deref(&self) -> &[Symbol] {
        &self.0
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, ")")
    }
}

#[derive(Serialize, Deserialize)]
struct CodeBookRepr {
    #[serde(rename = "N")]
    n: Symbol,
    words: Vec<Word>,
}

/// Finite collection of distinct words over `{1..N}`.
///
/// Words keep the order they were given in, so code indices are stable.
/// A lexicographically sorted permutation is kept for prefix scans.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CodeBookRepr", into = "CodeBookRepr")]
pub struct CodeBook {
    n_symbols: Symbol,
    words: Vec<Word>,
    sorted: Vec<usize>,
}

impl TryFrom<CodeBookRepr> for CodeBook {
    type Error = CodeError;
    fn try_from(r: CodeBookRepr) -> Result<Self, CodeError> {
        CodeBook::new(r.n, r.words)
    }
}

impl From<CodeBook> for CodeBookRepr {
    fn from(c: CodeBook) -> Self {
        CodeBookRepr { n: c.n_symbols, words: c.words }
    }
}

impl CodeBook {
    pub fn new(n_symbols: Symbol, words: Vec<Word>) -> Result<Self, CodeError> {
        if words.is_empty() {
            return Err(CodeError::EmptyCode);
        }
        for w in &words {
            if let Some(&s) = w.iter().find(|&&s| s == 0 || s > n_symbols) {
                return Err(CodeError::SymbolOutOfRange { symbol: s, n: n_symbols });
            }
        }
        let mut sorted: Vec<usize> = (0..words.len()).collect();
        sorted.sort_by(|&a, &b| words[a].cmp(&words[b]));
        for k in 1..sorted.len() {
            if words[sorted[k]] == words[sorted[k - 1]] {
                return Err(CodeError::DuplicateWord(sorted[k].max(sorted[k - 1])));
            }
        }
        Ok(CodeBook { n_symbols, words, sorted })
    }

    pub fn from_slices(n_symbols: Symbol, words: &[&[Symbol]]) -> Result<Self, CodeError> {
        let words = words
            .iter()
            .map(|w| Word::new(w.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        CodeBook::new(n_symbols, words)
    }

    pub fn n_symbols(&self) -> Symbol {
        self.n_symbols
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &Word {
        &self.words[i]
    }

    /// Cardinality M.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// R, the longest word length.
    pub fn max_len(&self) -> usize {
        self.words.iter().map(|w| w.len()).max().unwrap_or(0)
    }

    pub fn min_len(&self) -> usize {
        self.words.iter().map(|w| w.len()).min().unwrap_or(0)
    }

    /// True iff no word is a prefix of another one.
    pub fn is_disjoint(&self) -> bool {
        // in sorted order a prefix relation always shows up between neighbours
        self.sorted
            .windows(2)
            .all(|p| !self.words[p[0]].is_prefix_of(&self.words[p[1]]))
    }

    fn require_disjoint(&self) -> Result<(), CodeError> {
        if self.is_disjoint() {
            Ok(())
        } else {
            Err(CodeError::NotDisjoint)
        }
    }

    /// Index of the unique word that is a prefix of `s`, if any.
    pub fn match_at(&self, s: &[Symbol]) -> Option<usize> {
        self.words.iter().position(|w| w.is_prefix_of(s))
    }

    fn is_proper_prefix_of_some_word(&self, s: &[Symbol]) -> bool {
        self.words
            .iter()
            .any(|w| w.len() > s.len() && w[..s.len()] == *s)
    }

    /// Concatenation of the words with the given indices.
    pub fn spell(&self, indices: &[usize]) -> Vec<Symbol> {
        let mut out = Vec::new();
        for &i in indices {
            out.extend_from_slice(&self.words[i]);
        }
        out
    }
}

/// Result of a greedy forward decoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoding {
    pub indices: Vec<usize>,
    pub offset: usize,
    /// Unconsumed symbols: a proper prefix of some codeword.
    pub residual: Vec<Symbol>,
}

/// Greedy left-to-right decoding. For a disjoint code the result is the unique
/// decoding of the consumed prefix.
pub fn forward_decode(code: &CodeBook, stream: &[Symbol]) -> Result<Decoding, CodeError> {
    code.require_disjoint()?;
    let mut indices = Vec::new();
    let mut p = 0;
    while p < stream.len() {
        match code.match_at(&stream[p..]) {
            Some(i) => {
                indices.push(i);
                p += code.words[i].len();
            }
            None => {
                if code.is_proper_prefix_of_some_word(&stream[p..]) {
                    break;
                }
                return Err(CodeError::NotCodable { position: p });
            }
        }
    }
    Ok(Decoding { indices, offset: 0, residual: stream[p..].to_vec() })
}

/// Eventually periodic bi-infinite word `(left)^{-N} center | (right)^{N}`.
///
/// Position 0 is the first center symbol; the left period ends at -1 and the
/// right period starts right after the center.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicStream {
    pub left: Vec<Symbol>,
    pub center: Vec<Symbol>,
    pub right: Vec<Symbol>,
}

impl PeriodicStream {
    pub fn new(left: Vec<Symbol>, center: Vec<Symbol>, right: Vec<Symbol>) -> Result<Self, CodeError> {
        if left.is_empty() || right.is_empty() {
            return Err(CodeError::EmptyPeriod);
        }
        Ok(PeriodicStream { left, center, right })
    }

    pub fn at(&self, p: i64) -> Symbol {
        let c = self.center.len() as i64;
        if p < 0 {
            self.left[p.rem_euclid(self.left.len() as i64) as usize]
        } else if p < c {
            self.center[p as usize]
        } else {
            self.right[(p - c).rem_euclid(self.right.len() as i64) as usize]
        }
    }

    fn matches(&self, p: i64, w: &[Symbol]) -> bool {
        w.iter().enumerate().all(|(k, &s)| self.at(p + k as i64) == s)
    }
}

/// Number of decodings of an eventually periodic bi-infinite stream.
///
/// Decodings are counted through their restriction to `[-window, +inf)`:
/// every restriction starts at a boundary in `[-window, -window + R)` that has
/// a left-extendable predecessor and a forward (greedy, hence unique) path
/// that never gets stuck. The count is recomputed on a wider window and
/// `WindowTooSmall` is returned when the two disagree.
pub fn count_decodings(code: &CodeBook, stream: &PeriodicStream, window: usize) -> Result<usize, CodeError> {
    code.require_disjoint()?;
    let r = code.max_len();
    if window < r {
        return Err(CodeError::WindowTooSmall { window });
    }
    let left_valid = left_valid_residues(code, stream);
    let c1 = count_from(code, stream, &left_valid, -(window as i64));
    let wide = 2 * window + stream.left.len() * (r + 1);
    let c2 = count_from(code, stream, &left_valid, -(wide as i64));
    if c1 != c2 {
        return Err(CodeError::WindowTooSmall { window });
    }
    Ok(c1)
}

/// Residues `p mod |left|` (for `p <= 0`) at which some left-infinite
/// decoding ends. Greatest fixed point of "has a valid predecessor".
fn left_valid_residues(code: &CodeBook, stream: &PeriodicStream) -> Vec<bool> {
    let pl = stream.left.len();
    let r = code.max_len();
    let base = -((pl * (r / pl + 2)) as i64);
    // preds[res] = residues q with an edge q -> res
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); pl];
    for (res, pr) in preds.iter_mut().enumerate() {
        let p = base + res as i64;
        for w in code.words() {
            let q = p - w.len() as i64;
            if stream.matches(q, w) {
                pr.push(q.rem_euclid(pl as i64) as usize);
            }
        }
    }
    let mut valid = vec![true; pl];
    loop {
        let mut changed = false;
        for res in 0..pl {
            if valid[res] && !preds[res].iter().any(|&q| valid[q]) {
                valid[res] = false;
                changed = true;
            }
        }
        if !changed {
            return valid;
        }
    }
}

fn right_valid(code: &CodeBook, stream: &PeriodicStream, start: i64) -> bool {
    let c = stream.center.len() as i64;
    let pr = stream.right.len() as i64;
    let mut seen = HashSet::new();
    let mut p = start;
    let mut buf = Vec::with_capacity(code.max_len());
    loop {
        if p >= c && !seen.insert((p - c).rem_euclid(pr)) {
            return true;
        }
        buf.clear();
        buf.extend((0..code.max_len() as i64).map(|k| stream.at(p + k)));
        match code.match_at(&buf) {
            Some(i) => p += code.words[i].len() as i64,
            None => return false,
        }
    }
}

fn count_from(code: &CodeBook, stream: &PeriodicStream, left_valid: &[bool], a: i64) -> usize {
    let r = code.max_len() as i64;
    let pl = stream.left.len() as i64;
    (a..a + r)
        .filter(|&p0| {
            let has_pred = code.words().iter().any(|w| {
                let q = p0 - w.len() as i64;
                q < a && stream.matches(q, w) && left_valid[q.rem_euclid(pl) as usize]
            });
            has_pred && right_valid(code, stream, p0)
        })
        .count()
}

/// All `m`-fold concatenations, index `(i_1..i_m)` at position
/// `sum i_k M^(m-k)`.
pub fn power(code: &CodeBook, m: usize, cap: usize) -> Result<CodeBook, CodeError> {
    code.require_disjoint()?;
    let size = (code.len() as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if m == 0 || size > cap as u128 {
        return Err(CodeError::SizeOverflow { size, cap: cap as u128 });
    }
    let mut words: Vec<Vec<Symbol>> = vec![Vec::new()];
    for _ in 0..m {
        let mut next = Vec::with_capacity(words.len() * code.len());
        for w in &words {
            for c in code.words() {
                let mut s = w.clone();
                s.extend_from_slice(c);
                next.push(s);
            }
        }
        words = next;
    }
    let words = words.into_iter().map(Word).collect();
    CodeBook::new(code.n_symbols, words)
}

/// Replaces each word `w_i` by `(w_i, suffixes[i])`. Empty suffixes are allowed.
pub fn extend_suffix(code: &CodeBook, suffixes: &[Vec<Symbol>]) -> Result<CodeBook, CodeError> {
    code.require_disjoint()?;
    if suffixes.len() != code.len() {
        return Err(CodeError::SuffixCount { expected: code.len(), got: suffixes.len() });
    }
    let words = code
        .words()
        .iter()
        .zip(suffixes)
        .map(|(w, s)| w.extended(s))
        .collect();
    CodeBook::new(code.n_symbols, words)
}
