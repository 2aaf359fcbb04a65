//! Skeletons of a sampled hyperbolic measure and the initial CIFS built from them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blending::{constant_l1, Arc, BlendingError, BlendingInterval, BlendingReport, ConnectLookup};
use crate::cifs::{verify_cifs, CifsCertificate, CifsError, CifsVerification, VerifyOptions};
use crate::codes::{CodeBook, CodeError, Symbol, Word};
use crate::fiber::{circle_dist, FiberFamily};
use crate::seed;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("invalid base measure: {0}")]
    BadMeasure(String),
    #[error("skeleton has {found} entries, at least 2 are needed")]
    SkeletonTooSmall { found: usize },
    #[error("CIFS rejected in clause ({clause}): {witness}")]
    CifsRejected { clause: char, witness: String },
    #[error("log card W0 = {log_card} outside [{lo}, {hi}]")]
    CardinalityOutOfRange { log_card: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Cifs(#[from] CifsError),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Blending(#[from] BlendingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseMeasure {
    Bernoulli { weights: Vec<f64> },
    /// Row-stochastic transition matrix; started from its stationary vector.
    Markov { transition: Vec<Vec<f64>> },
}

fn check_probabilities(p: &[f64], what: &str) -> Result<(), SkeletonError> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(SkeletonError::BadMeasure(format!("{what} {p:?} must be nonnegative and sum to 1")));
    }
    Ok(())
}

fn draw(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSampler {
    pub base: BaseMeasure,
    /// Fiber steps discarded before a sample is taken.
    pub burn_in: usize,
    pub seed: u64,
}

impl MeasureSampler {
    pub fn bernoulli(weights: Vec<f64>, seed: u64) -> Result<Self, SkeletonError> {
        let s = MeasureSampler { base: BaseMeasure::Bernoulli { weights }, burn_in: 64, seed };
        s.validate(None)?;
        Ok(s)
    }

    pub fn n_symbols(&self) -> usize {
        match &self.base {
            BaseMeasure::Bernoulli { weights } => weights.len(),
            BaseMeasure::Markov { transition } => transition.len(),
        }
    }

    pub fn validate(&self, n_symbols: Option<usize>) -> Result<(), SkeletonError> {
        match &self.base {
            BaseMeasure::Bernoulli { weights } => check_probabilities(weights, "weights")?,
            BaseMeasure::Markov { transition } => {
                for row in transition {
                    if row.len() != transition.len() {
                        return Err(SkeletonError::BadMeasure("transition matrix is not square".into()));
                    }
                    check_probabilities(row, "transition row")?;
                }
            }
        }
        if self.n_symbols() == 0 {
            return Err(SkeletonError::BadMeasure("no symbols".into()));
        }
        if let Some(n) = n_symbols {
            if n != self.n_symbols() {
                return Err(SkeletonError::BadMeasure(format!("{} symbols for a family of {n} maps", self.n_symbols())));
            }
        }
        Ok(())
    }

    pub fn stationary(&self) -> Vec<f64> {
        match &self.base {
            BaseMeasure::Bernoulli { weights } => weights.clone(),
            BaseMeasure::Markov { transition } => {
                let n = transition.len();
                let mut p = vec![1.0 / n as f64; n];
                for _ in 0..10_000 {
                    let mut q = vec![0.0; n];
                    for (i, row) in transition.iter().enumerate() {
                        for (j, &t) in row.iter().enumerate() {
                            q[j] += p[i] * t;
                        }
                    }
                    let diff: f64 = q.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
                    p = q;
                    if diff < 1e-15 {
                        break;
                    }
                }
                p
            }
        }
    }

    /// Entropy of the base measure.
    pub fn entropy(&self) -> f64 {
        let h = |p: &[f64]| -> f64 { p.iter().filter(|&&w| w > 0.0).map(|&w| -w * w.ln()).sum() };
        match &self.base {
            BaseMeasure::Bernoulli { weights } => h(weights),
            BaseMeasure::Markov { transition } => {
                let pi = self.stationary();
                pi.iter().zip(transition).map(|(&p, row)| p * h(row)).sum()
            }
        }
    }

    /// Next symbol (1-based) given the previous one.
    pub fn next_symbol(&self, prev: Option<Symbol>, rng: &mut ChaCha8Rng) -> Symbol {
        let i = match (&self.base, prev) {
            (BaseMeasure::Bernoulli { weights }, _) => draw(weights, rng),
            (BaseMeasure::Markov { transition }, Some(s)) => draw(&transition[s as usize - 1], rng),
            (BaseMeasure::Markov { .. }, None) => draw(&self.stationary(), rng),
        };
        (i + 1) as Symbol
    }

    /// A typical pair: fiber point after `burn_in` steps and the next `n` symbols.
    pub fn sample(&self, family: &FiberFamily, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Symbol>, f64) {
        let mut x: f64 = rng.gen();
        let mut prev = None;
        for _ in 0..self.burn_in {
            let s = self.next_symbol(prev, rng);
            x = family.step(s, x).0;
            prev = Some(s);
        }
        let mut word = Vec::with_capacity(n);
        for _ in 0..n {
            let s = self.next_symbol(prev, rng);
            word.push(s);
            prev = Some(s);
        }
        (word, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureStats {
    pub alpha_hat: f64,
    pub alpha_sem: f64,
    pub h_hat: f64,
    pub trials: usize,
    pub horizon: usize,
}

pub fn estimate_measure_stats(sampler: &MeasureSampler, family: &FiberFamily, horizon: usize, trials: usize) -> MeasureStats {
    let trials = trials.max(1);
    let per: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(sampler.seed, 0xa1fa, t as u64);
            let (word, x) = sampler.sample(family, horizon, &mut rng);
            family.apply(&word, x).1 / horizon as f64
        })
        .collect();
    let mean = per.iter().sum::<f64>() / trials as f64;
    let var = if trials > 1 { per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64 } else { 0.0 };
    MeasureStats { alpha_hat: mean, alpha_sem: (var / trials as f64).sqrt(), h_hat: sampler.entropy(), trials, horizon }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonEntry {
    pub word: Vec<Symbol>,
    pub x: f64,
    /// Index of the sample that produced the entry.
    pub sample: usize,
    /// Smallest `log K0` for which this entry satisfies the sandwich.
    pub log_k0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonParams {
    pub n: usize,
    pub eps_e: f64,
    pub eps_h: f64,
    pub k0_cap: f64,
    /// Maximal number of entries kept.
    pub budget: usize,
    /// Maximal number of samples drawn.
    pub max_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub n: usize,
    pub alpha: f64,
    pub h: f64,
    pub eps_e: f64,
    pub eps_h: f64,
    /// Entries in sample order.
    pub entries: Vec<SkeletonEntry>,
    #[serde(rename = "K0")]
    pub k0: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
    pub samples_drawn: usize,
    pub rejected: usize,
    pub duplicates: usize,
    pub warning: Option<String>,
}

/// Smallest `log K0 >= 0` with `K0^-1 e^{k(alpha-tol)} <= |(f^k)'(x)| <= K0 e^{k(alpha+tol)}`, `k <= |word|`.
pub fn sandwich_log_k0(family: &FiberFamily, word: &[Symbol], x: f64, alpha: f64, tol: f64) -> f64 {
    let (mut y, mut l, mut need) = (x, 0.0, 0.0f64);
    for (k, &s) in word.iter().enumerate() {
        let (z, d) = family.step(s, y);
        y = z;
        l += d;
        let kk = (k + 1) as f64;
        need = need.max(kk * (alpha - tol) - l).max(l - kk * (alpha + tol));
    }
    need
}

pub fn extract_skeleton(
    sampler: &MeasureSampler,
    family: &FiberFamily,
    alpha: f64,
    params: &SkeletonParams,
) -> Result<Skeleton, SkeletonError> {
    // no segment can sandwich a nonnegative exponent; isometries leave round-off of order 1e-16
    if !(alpha < -1e-12) {
        return Err(SkeletonError::SkeletonTooSmall { found: 0 });
    }
    let n = params.n.max(1);
    let cap = params.k0_cap.ln();
    let batch = 4096;
    let mut entries: Vec<SkeletonEntry> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let (mut drawn, mut rejected, mut duplicates) = (0, 0, 0);
    'outer: while drawn < params.max_samples && entries.len() < params.budget {
        let hi = (drawn + batch).min(params.max_samples);
        let got: Vec<(Vec<Symbol>, f64, f64)> = (drawn..hi)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::rng(sampler.seed, 0x5ce1, i as u64);
                let (word, x) = sampler.sample(family, n, &mut rng);
                let lk = sandwich_log_k0(family, &word, x, alpha, params.eps_e / 4.0);
                (word, x, lk)
            })
            .collect();
        for (i, (word, x, lk)) in got.into_iter().enumerate() {
            drawn += 1;
            if lk > cap {
                rejected += 1;
            } else if !seen.insert(word.clone()) {
                duplicates += 1;
            } else {
                entries.push(SkeletonEntry { word, x, sample: drawn - 1, log_k0: lk });
                if entries.len() >= params.budget {
                    let _ = i;
                    break 'outer;
                }
            }
        }
    }
    if entries.len() < 2 {
        return Err(SkeletonError::SkeletonTooSmall { found: entries.len() });
    }
    let h = sampler.entropy();
    let card = entries.len() as f64;
    let k0 = entries.iter().map(|e| e.log_k0).fold(0.0, f64::max).exp();
    let l0 = [1.0, card / (n as f64 * (h + params.eps_h / 2.0)).exp(), (n as f64 * (h - params.eps_h / 2.0)).exp() / card]
        .into_iter()
        .fold(1.0, f64::max);
    let warning = (rejected as f64 > 0.9 * drawn as f64)
        .then(|| format!("{rejected} of {drawn} samples violate the sandwich; n may be too small"));
    Ok(Skeleton {
        n,
        alpha,
        h,
        eps_e: params.eps_e,
        eps_h: params.eps_h,
        entries,
        k0,
        l0,
        samples_drawn: drawn,
        rejected,
        duplicates,
        warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCifsParams {
    /// Maximal number of words in W0.
    pub w0_budget: usize,
    /// Grid of the fine connecting-word table.
    pub connect_grid: usize,
    pub connect_depth: usize,
    pub verify: VerifyOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl Inequality {
    /// `lhs <= rhs`.
    pub fn le(lhs: f64, rhs: f64) -> Inequality {
        Inequality { lhs, rhs, margin: rhs - lhs, holds: lhs <= rhs }
    }
    /// `lhs < rhs`.
    pub fn lt(lhs: f64, rhs: f64) -> Inequality {
        Inequality { lhs, rhs, margin: rhs - lhs, holds: lhs < rhs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCifs {
    pub code: CodeBook,
    /// Skeleton entry behind each word.
    pub entries: Vec<usize>,
    pub interval: BlendingInterval,
    pub base_points_in_j: usize,
    pub cert: CifsCertificate,
    #[serde(rename = "K0")]
    pub k0: f64,
    pub dropped: usize,
    pub card_lower: Inequality,
    pub card_upper: Inequality,
    pub verification: CifsVerification,
}

fn count_in(entries: &[SkeletonEntry], j: &Arc) -> usize {
    entries.iter().filter(|e| j.contains(e.x)).count()
}

/// The interval of the cover containing the most base points and the fine
/// connecting table for it; `m_c` and `L1` are raised to cover the table.
pub fn choose_interval(
    family: &FiberFamily,
    skeleton: &Skeleton,
    blending: &BlendingReport,
    connect_grid: usize,
    connect_depth: usize,
) -> Result<(BlendingInterval, usize, ConnectLookup), SkeletonError> {
    let mut best = (0, blending.centers[0]);
    for &c in &blending.centers {
        let cnt = count_in(&skeleton.entries, &blending.interval(c).j());
        if cnt > best.0 {
            best = (cnt, c);
        }
    }
    let mut interval = blending.interval(best.1);
    let lookup = ConnectLookup::build(family, &interval, connect_grid, connect_depth)?;
    if lookup.m_c > interval.m_c {
        interval.m_c = lookup.m_c;
        interval.l1 = constant_l1(interval.k2, interval.k3, interval.delta, interval.m_c);
    }
    Ok((interval, best.0, lookup))
}

pub fn build_initial_cifs(
    skeleton: &Skeleton,
    family: &FiberFamily,
    blending: &BlendingReport,
    params: &InitialCifsParams,
) -> Result<(InitialCifs, ConnectLookup), SkeletonError> {
    let (interval, in_j, lookup) = choose_interval(family, skeleton, blending, params.connect_grid, params.connect_depth)?;
    let j = interval.j();
    let alpha = skeleton.alpha;
    let eps = skeleton.eps_e;
    let grid = j.points(crate::blending::INTERIOR_SAMPLES + 1);
    let candidates: Vec<(usize, &SkeletonEntry)> =
        skeleton.entries.iter().enumerate().filter(|(_, e)| j.contains(e.x)).collect();
    let built: Vec<Option<(Vec<Symbol>, f64)>> = candidates
        .par_iter()
        .map(|(_, e)| {
            let y = family.apply(&e.word, e.x).0;
            let (beta, _) = lookup.connect(family, y)?;
            let mut w = e.word.clone();
            w.extend_from_slice(&beta);
            let mut lk0 = 0.0f64;
            for &g in &grid {
                let (z, l) = family.apply(&w, g);
                let ex = l / w.len() as f64;
                if !j.contains(z) || (ex - alpha).abs() >= eps {
                    return None;
                }
                lk0 = lk0.max(sandwich_log_k0(family, &e.word, g, alpha, eps / 2.0));
            }
            Some((w, lk0.max(e.log_k0)))
        })
        .collect();
    let mut words = Vec::new();
    let mut idx = Vec::new();
    let mut log_k0 = 0.0f64;
    let mut dropped = 0;
    for ((i, _), b) in candidates.iter().zip(built) {
        match b {
            Some((w, lk)) if words.len() < params.w0_budget => {
                words.push(Word::new(w)?);
                idx.push(*i);
                log_k0 = log_k0.max(lk);
            }
            Some(_) => {}
            None => dropped += 1,
        }
    }
    if words.len() < 2 {
        return Err(SkeletonError::SkeletonTooSmall { found: words.len() });
    }
    let code = CodeBook::new(family.n_symbols() as Symbol, words)?;
    if !code.is_disjoint() {
        return Err(SkeletonError::Code(CodeError::NotDisjoint));
    }
    let m_c = interval.m_c as f64;
    let log_k = log_k0 + m_c * family.norm_bound().ln() - m_c * (alpha + eps / 2.0);
    let cert = CifsCertificate::new(j, log_k.exp(), alpha + eps, alpha, eps)?;
    let verification = verify_cifs(family, code.words(), &cert, &params.verify)?;
    if let Some(v) = &verification.violation {
        return Err(SkeletonError::CifsRejected {
            clause: v.clause,
            witness: format!("word {:?} at x = {}: {} vs {}", v.words, v.point, v.lhs, v.rhs),
        });
    }
    let h = skeleton.h;
    let log_card = (code.len() as f64).ln();
    let card_lower = Inequality::le(code.min_len() as f64 * (h - skeleton.eps_h), log_card);
    let card_upper = Inequality::le(log_card, code.max_len() as f64 * (h + skeleton.eps_h));
    if !card_lower.holds || !card_upper.holds {
        return Err(SkeletonError::CardinalityOutOfRange { log_card, lo: card_lower.lhs, hi: card_upper.rhs });
    }
    Ok((
        InitialCifs {
            code,
            entries: idx,
            interval,
            base_points_in_j: in_j,
            cert,
            k0: log_k0.exp(),
            dropped,
            card_lower,
            card_upper,
            verification,
        },
        lookup,
    ))
}

/// Distance from `x` to the nearest skeleton base point.
pub fn nearest_base_point(skeleton: &Skeleton, x: f64) -> f64 {
    skeleton.entries.iter().map(|e| circle_dist(e.x, x)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{FiberMap, NorthSouth};

    fn contracting() -> FiberFamily {
        // both maps contract to 1/2 with derivative 1/2 there
        let m = FiberMap::NorthSouth(NorthSouth::new(0.5).unwrap());
        FiberFamily::new(vec![m.clone(), m]).unwrap()
    }

    #[test]
    fn uniform_entropy_and_constant_exponent() {
        let s = MeasureSampler::bernoulli(vec![0.5, 0.5], 3).unwrap();
        assert_eq!(s.entropy(), 2f64.ln());
        let st = estimate_measure_stats(&s, &contracting(), 50, 20);
        assert!((st.alpha_hat - 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn bad_weights() {
        assert!(MeasureSampler::bernoulli(vec![0.5, 0.6], 0).is_err());
        assert!(MeasureSampler::bernoulli(vec![-0.5, 1.5], 0).is_err());
    }

    #[test]
    fn markov_entropy() {
        let s = MeasureSampler { base: BaseMeasure::Markov { transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]] }, burn_in: 8, seed: 0 };
        assert!((s.entropy() - 2f64.ln()).abs() < 1e-12);
        let s = MeasureSampler { base: BaseMeasure::Markov { transition: vec![vec![0.0, 1.0], vec![1.0, 0.0]] }, burn_in: 8, seed: 0 };
        assert_eq!(s.entropy(), 0.0);
        let pi = s.stationary();
        assert!((pi[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_contraction_keeps_every_distinct_word() {
        let s = MeasureSampler::bernoulli(vec![0.5, 0.5], 1).unwrap();
        let params = SkeletonParams { n: 6, eps_e: 0.1, eps_h: 0.5, k0_cap: 1.0 + 1e-9, budget: 1000, max_samples: 500 };
        let sk = extract_skeleton(&s, &contracting(), 0.5f64.ln(), &params).unwrap();
        assert_eq!(sk.rejected, 0);
        assert_eq!(sk.entries.len() + sk.duplicates, 500);
        let distinct: std::collections::HashSet<_> = sk.entries.iter().map(|e| e.word.clone()).collect();
        assert_eq!(distinct.len(), sk.entries.len());
        // every entry re-verifies from scratch
        for e in &sk.entries {
            assert!(sandwich_log_k0(&contracting(), &e.word, e.x, sk.alpha, 0.025) <= 1e-9);
        }
    }

    #[test]
    fn rotations_have_no_skeleton() {
        use crate::fiber::Rotation;
        let f = FiberFamily::new(vec![FiberMap::Rotation(Rotation { shift: 0.1 }), FiberMap::Rotation(Rotation { shift: 0.3 })]).unwrap();
        let s = MeasureSampler::bernoulli(vec![0.5, 0.5], 1).unwrap();
        let st = estimate_measure_stats(&s, &f, 100, 10);
        assert_eq!(st.alpha_hat, 0.0);
        let params = SkeletonParams { n: 4, eps_e: 0.1, eps_h: 0.5, k0_cap: 2.0, budget: 10, max_samples: 100 };
        assert!(matches!(extract_skeleton(&s, &f, st.alpha_hat, &params), Err(SkeletonError::SkeletonTooSmall { found: 0 })));
    }

    #[test]
    fn one_step_sandwich() {
        let f = contracting();
        // n = 1: a single derivative bound at the fixed point
        assert!(sandwich_log_k0(&f, &[1], 0.5, 0.5f64.ln(), 0.0).abs() < 1e-12);
        let lk = sandwich_log_k0(&f, &[1], 0.5, 0.5f64.ln() - 1.0, 0.0);
        assert!((lk - 1.0).abs() < 1e-12);
    }
}
