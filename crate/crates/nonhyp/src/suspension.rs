//! Discrete suspensions over the cascade alphabets: Abramov entropy, column
//! sums, large deviations, floor offsets and tail mass.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blending::Arc;
use crate::cascade::{digits, Cascade, CascadeError};
use crate::codes::Symbol;
use crate::fiber::FiberFamily;
use crate::fiber::KahanSum;
use crate::observable::Observable;
use crate::seed;

#[derive(Debug, Error)]
pub enum SuspensionError {
    #[error("invalid roof profile: {0}")]
    BadProfile(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("address {0:?} is out of range")]
    InvalidAddress(Vec<usize>),
    #[error("window is too short for the address")]
    WindowTooShort,
    #[error(transparent)]
    Cascade(#[from] CascadeError),
}

pub fn log_u128(x: u128) -> f64 {
    (x as f64).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoofProfile {
    pub roof: Vec<u64>,
}

impl RoofProfile {
    pub fn new(roof: Vec<u64>) -> Result<Self, SuspensionError> {
        if roof.is_empty() {
            return Err(SuspensionError::BadProfile("empty alphabet".into()));
        }
        if roof.iter().any(|&r| r == 0) {
            return Err(SuspensionError::BadProfile("roof values must be positive".into()));
        }
        Ok(RoofProfile { roof })
    }

    pub fn size(&self) -> usize {
        self.roof.len()
    }

    /// Exact mean; the integer sum is formed before the single division.
    pub fn mean(&self) -> f64 {
        let s: u128 = self.roof.iter().map(|&r| r as u128).sum();
        s as f64 / self.roof.len() as f64
    }

    pub fn max(&self) -> u64 {
        self.roof.iter().copied().max().unwrap_or(0)
    }

    pub fn min(&self) -> u64 {
        self.roof.iter().copied().min().unwrap_or(0)
    }

    /// `max |R(a) - mean|`.
    pub fn deviation_bound(&self) -> f64 {
        let mu = self.mean();
        self.roof.iter().map(|&r| (r as f64 - mu).abs()).fold(0.0, f64::max)
    }
}

/// `log M / mean R`.
pub fn abramov_entropy(profile: &RoofProfile) -> f64 {
    (profile.size() as f64).ln() / profile.mean()
}

pub fn abramov_entropy_of(size: u128, mean_roof: f64) -> f64 {
    log_u128(size) / mean_roof
}

/// `sum_{k < R(a)} psi(a, k)`.
pub fn delta_psi(profile: &RoofProfile, psi: &dyn Fn(usize, u64) -> f64, symbol: usize) -> f64 {
    let mut s = KahanSum::default();
    for k in 0..profile.roof[symbol] {
        s.add(psi(symbol, k));
    }
    s.value()
}

/// `max_a (max - min)` of the column sum over the cylinder `[a]`, with the
/// extremes over continuations supplied per symbol.
pub fn variation(profile: &RoofProfile, range: &dyn Fn(usize) -> (f64, f64)) -> f64 {
    (0..profile.size()).map(|a| {
        let (lo, hi) = range(a);
        hi - lo
    }).fold(0.0, f64::max)
}

/// Range of the Birkhoff sum of `phi` along `word` started anywhere in `j`:
/// the column sum of the lifted observable over the cylinder of the word.
pub fn lifted_delta_range(family: &FiberFamily, word: &[Symbol], j: &Arc, phi: &Observable) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x0 in j.points(16) {
        let mut x = x0;
        let mut s = 0.0;
        for &sym in word {
            s += phi.eval(sym, x);
            x = family.step(sym, x).0;
        }
        lo = lo.min(s);
        hi = hi.max(s);
    }
    (lo, hi)
}

fn bernstein_term(m: usize, c: f64, eps: f64) -> f64 {
    2.0 * m as f64 * (-3.0 * m as f64 * eps / (2.0 * c)).exp()
}

/// Smallest `N0` with `2m e^{-3 m eps / (2C)} <= eps` for every `m >= N0`.
pub fn bernstein_horizon(c: f64, eps: f64) -> Result<usize, SuspensionError> {
    if !(c > 0.0) || !(eps > 0.0 && eps < 1.0) {
        return Err(SuspensionError::BadParameter(format!("C = {c}, eps = {eps}")));
    }
    // the term decreases past m = 2C / (3 eps)
    let peak = (2.0 * c / (3.0 * eps)).ceil().max(1.0) as usize;
    let mut m = peak;
    while bernstein_term(m, c, eps) > eps {
        m += 1;
    }
    while m > 1 && bernstein_term(m - 1, c, eps) <= eps {
        m -= 1;
    }
    Ok(m)
}

/// Column sums of an observable, for the second large deviation condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSums {
    /// `Delta psi` per symbol (any point of the cylinder range).
    pub values: Vec<f64>,
    pub variation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeDeviationReport {
    pub m: usize,
    pub eps: f64,
    pub trials: usize,
    pub good: usize,
    pub fraction: f64,
    pub sem: f64,
}

/// Whether every window sum `x_i + ... + x_(i+k-1)`, `i < m`, `1 <= k <= m`,
/// has absolute value below `bound`. Prefix sums with sliding extrema.
fn windows_within(xs: impl Iterator<Item = f64>, m: usize, bound: f64) -> bool {
    let mut p = vec![0.0];
    let mut acc = 0.0;
    for x in xs {
        acc += x;
        p.push(acc);
    }
    // window of prefix indices (i, i+m] for i = 0..m
    let (mut hi, mut lo) = (std::collections::VecDeque::new(), std::collections::VecDeque::new());
    let push = |hi: &mut std::collections::VecDeque<usize>, lo: &mut std::collections::VecDeque<usize>, j: usize| {
        while hi.back().is_some_and(|&b| p[b] <= p[j]) {
            hi.pop_back();
        }
        hi.push_back(j);
        while lo.back().is_some_and(|&b| p[b] >= p[j]) {
            lo.pop_back();
        }
        lo.push_back(j);
    };
    for j in 1..=m {
        push(&mut hi, &mut lo, j);
    }
    for i in 0..m {
        if i > 0 {
            push(&mut hi, &mut lo, i + m);
        }
        while hi.front().is_some_and(|&f| f <= i) {
            hi.pop_front();
        }
        while lo.front().is_some_and(|&f| f <= i) {
            lo.pop_front();
        }
        let (mx, mn) = (p[hi[0]] - p[i], p[lo[0]] - p[i]);
        if mx >= bound || -mn >= bound {
            return false;
        }
    }
    true
}

/// Fraction of i.i.d. uniform sequences of length `2m` whose windowed sums
/// `|sum_{j=i}^{i+k-1} (R(a_j) - mean)| < m eps` for all `i < m`, `k <= m`,
/// and likewise for column sums with slack `m (2 var + eps)`.
pub fn large_dev_fraction(
    profile: &RoofProfile,
    psi: Option<&ColumnSums>,
    m: usize,
    eps: f64,
    trials: usize,
    seed_root: u64,
) -> Result<LargeDeviationReport, SuspensionError> {
    if m == 0 || trials == 0 {
        return Err(SuspensionError::BadParameter("m and trials must be positive".into()));
    }
    if let Some(p) = psi {
        if p.values.len() != profile.size() {
            return Err(SuspensionError::BadParameter("column sums do not match the alphabet".into()));
        }
    }
    let mean_r = profile.mean();
    let mean_psi = psi.map(|p| p.values.iter().sum::<f64>() / p.values.len() as f64);
    let bound_r = m as f64 * eps;
    let bound_psi = psi.map(|p| m as f64 * (2.0 * p.variation + eps));
    let good: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed_root, 0x1d, t as u64);
            let seq: Vec<usize> = (0..2 * m).map(|_| rng.gen_range(0..profile.size())).collect();
            let r_ok = windows_within(seq.iter().map(|&a| profile.roof[a] as f64 - mean_r), m, bound_r);
            r_ok && match (psi, mean_psi, bound_psi) {
                (Some(p), Some(mp), Some(bp)) => windows_within(seq.iter().map(|&a| p.values[a] - mp), m, bp),
                _ => true,
            }
        })
        .collect();
    let g = good.iter().filter(|&&b| b).count();
    let f = g as f64 / trials as f64;
    Ok(LargeDeviationReport { m, eps, trials, good: g, fraction: f, sem: (f * (1.0 - f) / trials as f64).sqrt() })
}

/// Alphabet sizes, repetition counts and roofs of a cascade.
pub trait CascadeMeta {
    /// `m_n`; level 0 has no constituents.
    fn m(&self, level: u32) -> usize;
    fn size(&self, level: u32) -> u128;
    fn roof(&self, level: u32, symbol: u128) -> Result<u64, SuspensionError>;

    fn constituents(&self, level: u32, symbol: u128) -> Vec<u128> {
        digits(symbol, self.size(level - 1), self.m(level))
    }
}

impl CascadeMeta for Cascade<'_> {
    fn m(&self, level: u32) -> usize {
        self.levels[level as usize].summary.m
    }
    fn size(&self, level: u32) -> u128 {
        self.levels[level as usize].summary.size
    }
    fn roof(&self, level: u32, symbol: u128) -> Result<u64, SuspensionError> {
        let lev = &self.levels[level as usize];
        if lev.materialized() {
            return Ok(lev.roof.roof[symbol as usize]);
        }
        Ok(self.spell(level, symbol)?.len() as u64)
    }
}

/// `(l, n)`-address `(a_l, ..., a_(n-1))` with `a_k < m_(k+1)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Address {
    pub ell: u32,
    pub digits: Vec<usize>,
}

impl Address {
    pub fn n(&self) -> u32 {
        self.ell + self.digits.len() as u32
    }

    /// `||a||`, the number of steps of the address walk.
    pub fn norm(&self) -> usize {
        self.digits.iter().sum()
    }

    /// Representation with `a_l != 0` (zero digits at the lowest levels dropped).
    pub fn simplified(&self) -> Address {
        let k = self.digits.iter().position(|&a| a != 0).unwrap_or(self.digits.len());
        Address { ell: self.ell + k as u32, digits: self.digits[k..].to_vec() }
    }
}

/// Offset of the level-`l` constituent at `address` inside the word of
/// `window[0]`: each step of the walk adds the roof of one skipped constituent.
pub fn floor_offset(meta: &dyn CascadeMeta, window: &[u128], address: &Address) -> Result<u64, SuspensionError> {
    let &top = window.first().ok_or(SuspensionError::WindowTooShort)?;
    let n = address.n();
    for (i, &a) in address.digits.iter().enumerate() {
        if a >= meta.m(address.ell + i as u32 + 1) {
            return Err(SuspensionError::InvalidAddress(address.digits.clone()));
        }
    }
    let mut cur = top;
    let mut s = 0;
    for k in (address.ell..n).rev() {
        let a = address.digits[(k - address.ell) as usize];
        let cs = meta.constituents(k + 1, cur);
        for &c in &cs[..a] {
            s += meta.roof(k, c)?;
        }
        cur = cs[a];
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMeans {
    pub m: usize,
    pub mean_roof: f64,
    pub mean_tail: f64,
}

/// Fraction of the level-`n` suspension height taken by tails added at levels
/// above `ell`, with `n` the last entry of `levels`.
pub fn tail_mass_estimate(levels: &[LevelMeans], ell: usize) -> Result<f64, SuspensionError> {
    if levels.len() < ell + 2 {
        return Err(SuspensionError::BadParameter(format!("need more than {} levels", ell + 1)));
    }
    let mut mass = 0.0;
    for l in &levels[ell + 1..] {
        mass = l.m as f64 * mass + l.mean_tail;
    }
    Ok(mass / levels.last().unwrap().mean_roof)
}

/// `L2 = 2 max(K e^K, e^K) max R0 / min R0`.
pub fn constant_l2(k: f64, max_r0: u64, min_r0: u64) -> f64 {
    2.0 * (k * k.exp()).max(k.exp()) * max_r0 as f64 / min_r0 as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspensionStats {
    pub n: u32,
    pub size: u128,
    pub entropy: f64,
    pub mean_roof: f64,
    pub mean_roof_sem: f64,
    pub max_roof: u64,
    pub min_roof: u64,
    #[serde(rename = "L2")]
    pub l2: f64,
    /// Tail mass above level 0, with its geometric bound.
    pub tail_mass: Option<f64>,
    pub tail_mass_bound: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abramov_examples() {
        let p = RoofProfile::new(vec![1, 1]).unwrap();
        assert_eq!(abramov_entropy(&p), 2f64.ln());
        let p = RoofProfile::new(vec![2, 4]).unwrap();
        assert!((abramov_entropy(&p) - 2f64.ln() / 3.0).abs() < 1e-16);
        assert!((abramov_entropy(&p) - 0.23105).abs() < 1e-5);
        assert!(RoofProfile::new(vec![0, 1]).is_err());
    }

    #[test]
    fn column_sums() {
        let p = RoofProfile::new(vec![3, 5]).unwrap();
        assert_eq!(delta_psi(&p, &|_, _| 2.5, 0), 7.5);
        assert_eq!(delta_psi(&p, &|_, k| k as f64, 0), 3.0);
        assert_eq!(variation(&p, &|a| { let d = delta_psi(&p, &|_, k| k as f64, a); (d, d) }), 0.0);
    }

    #[test]
    fn bernstein_scan() {
        assert_eq!(bernstein_horizon(1.0, 0.5).unwrap(), 4);
        assert!(bernstein_horizon(0.0, 0.5).is_err());
        assert!(bernstein_horizon(1.0, 1.0).is_err());
        let a = bernstein_horizon(0.1, 0.9).unwrap();
        let b = bernstein_horizon(0.1, 0.99).unwrap();
        assert!(b <= a && a <= 2);
    }

    #[test]
    fn constant_roof_never_deviates() {
        let p = RoofProfile::new(vec![4; 5]).unwrap();
        let r = large_dev_fraction(&p, None, 3, 0.1, 1000, 1).unwrap();
        assert_eq!(r.fraction, 1.0);
    }

    #[test]
    fn sliding_windows_match_brute_force() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let m = rng.gen_range(1..12);
            let xs: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-3i32..=3) as f64 + 0.5).collect();
            let bound = rng.gen_range(0.5..8.0);
            let brute = (0..m).all(|i| (1..=m).all(|k| xs[i..i + k].iter().sum::<f64>().abs() < bound));
            assert_eq!(windows_within(xs.iter().copied(), m, bound), brute, "{xs:?} {bound}");
        }
    }

    #[test]
    fn addresses() {
        let a = Address { ell: 0, digits: vec![0, 0, 1, 2] };
        assert_eq!(a.norm(), 3);
        let s = a.simplified();
        assert_eq!((s.ell, s.digits.clone()), (2, vec![1, 2]));
        assert_eq!((s.n(), s.norm()), (4, 3));
    }

    #[test]
    fn tail_mass() {
        let ls = [LevelMeans { m: 1, mean_roof: 10.0, mean_tail: 0.0 }, LevelMeans { m: 1, mean_roof: 11.0, mean_tail: 1.0 }];
        assert!((tail_mass_estimate(&ls, 0).unwrap() - 1.0 / 11.0).abs() < 1e-15);
        let none = [LevelMeans { m: 2, mean_roof: 3.0, mean_tail: 0.0 }, LevelMeans { m: 2, mean_roof: 6.0, mean_tail: 0.0 }];
        assert_eq!(tail_mass_estimate(&none, 0).unwrap(), 0.0);
        assert!(tail_mass_estimate(&none, 1).is_err());
    }
}
