//! Contracting IFS with quantifiers `(J, K, alpha0, alpha, eps)`: verification,
//! attractor points, exponent spectra and distortion control.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blending::{Arc, INTERIOR_SAMPLES};
use crate::codes::Symbol;
use crate::fiber::{circle_dist, CircleMap, FiberFamily};
use crate::observable::Observable;
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum CifsError {
    #[error("invalid certificate: {0}")]
    BadCertificate(String),
    #[error("certificate violated in clause ({clause}): {witness}")]
    CertificateViolated { clause: char, witness: String },
    #[error("attractor iteration did not converge after {words} words")]
    NoConvergence { words: usize },
    #[error("no horizon up to {cap} meets the distortion bound")]
    HorizonCapExceeded { cap: usize },
    #[error("base orbit violates its own sandwich at k = {k}")]
    HypothesisFails { k: usize },
    #[error("code is empty")]
    EmptyCode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CifsCertificate {
    #[serde(rename = "J")]
    pub j: Arc,
    #[serde(rename = "K")]
    pub k: f64,
    pub alpha0: f64,
    pub alpha: f64,
    pub eps: f64,
}

impl CifsCertificate {
    pub fn new(j: Arc, k: f64, alpha0: f64, alpha: f64, eps: f64) -> Result<Self, CifsError> {
        if !(k >= 1.0) {
            return Err(CifsError::BadCertificate(format!("K = {k} < 1")));
        }
        if !(alpha0 < 0.0 && alpha < 0.0) {
            return Err(CifsError::BadCertificate(format!("alpha0 = {alpha0}, alpha = {alpha} must be negative")));
        }
        if !(eps > 0.0 && eps < alpha.abs()) {
            return Err(CifsError::BadCertificate(format!("eps = {eps} not in (0, |alpha|)")));
        }
        Ok(CifsCertificate { j, k, alpha0, alpha, eps })
    }

    /// Quantifiers after `n` halvings: `(K, 2^-n alpha0, 2^-n alpha, 2^-n eps)`.
    pub fn halved(&self, n: u32) -> CifsCertificate {
        let s = 2f64.powi(-(n as i32));
        CifsCertificate { j: self.j, k: self.k, alpha0: self.alpha0 * s, alpha: self.alpha * s, eps: self.eps * s }
    }

    pub fn band(&self) -> (f64, f64) {
        (self.alpha - self.eps, self.alpha + self.eps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub grid_pts: usize,
    pub m_check: usize,
    pub tuples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { grid_pts: INTERIOR_SAMPLES + 2, m_check: 6, tuples: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub clause: char,
    pub words: Vec<usize>,
    pub point: f64,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CifsVerification {
    pub words_checked: usize,
    /// Smallest distance from an image `f_[w](J)` to the complement of `J`.
    pub margin_a: f64,
    /// Smallest `log K + k alpha0 - log |(f^k)'|` over all checks.
    pub margin_b: f64,
    /// Smallest distance of a per-word exponent to the band edges.
    pub margin_c: f64,
    pub min_exponent: f64,
    pub max_exponent: f64,
    pub m_check: usize,
    pub tuples_per_m: usize,
    pub note: String,
    pub violation: Option<Violation>,
}

impl CifsVerification {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }

    pub fn into_result(self) -> Result<CifsVerification, CifsError> {
        match &self.violation {
            None => Ok(self),
            Some(v) => Err(CifsError::CertificateViolated {
                clause: v.clause,
                witness: format!("words {:?} at x = {} k = {}: {} vs {}", v.words, v.point, v.k, v.lhs, v.rhs),
            }),
        }
    }
}

struct WordCheck {
    margin_a: f64,
    margin_b: f64,
    min_e: f64,
    max_e: f64,
    violation: Option<Violation>,
}

fn check_word(family: &FiberFamily, word: &[Symbol], idx: usize, cert: &CifsCertificate, grid: &[f64]) -> WordCheck {
    let lk = cert.k.ln();
    let (lo, hi) = cert.band();
    let mut images = Vec::with_capacity(grid.len());
    let mut margin_b = f64::INFINITY;
    let mut min_e = f64::INFINITY;
    let mut max_e = f64::NEG_INFINITY;
    let mut violation = None;
    for &x in grid {
        let (mut y, mut l) = (x, 0.0);
        for (k, &s) in word.iter().enumerate() {
            let (z, d) = family.step(s, y);
            y = z;
            l += d;
            let m = lk + (k + 1) as f64 * cert.alpha0 - l;
            if m < margin_b {
                margin_b = m;
                if m < 0.0 && violation.is_none() {
                    violation = Some(Violation { clause: 'b', words: vec![idx], point: x, k: k + 1, lhs: l, rhs: lk + (k + 1) as f64 * cert.alpha0 });
                }
            }
        }
        images.push(y);
        let e = l / word.len() as f64;
        min_e = min_e.min(e);
        max_e = max_e.max(e);
        if !(e > lo && e < hi) && violation.is_none() {
            violation = Some(Violation { clause: 'c', words: vec![idx], point: x, k: word.len(), lhs: e, rhs: if e <= lo { lo } else { hi } });
        }
    }
    let mut len = 0.0;
    for p in images.windows(2) {
        len += (p[1] - p[0]).rem_euclid(1.0);
    }
    let img = Arc { lo: images[0], len };
    let j = cert.j;
    let margin_a = if len >= 1.0 - 1e-12 || !j.contains_arc(&img) {
        -1.0
    } else {
        let off = (img.lo - j.lo).rem_euclid(1.0);
        off.min(j.len - off - img.len)
    };
    if margin_a < 0.0 {
        violation = Some(Violation { clause: 'a', words: vec![idx], point: img.lo, k: word.len(), lhs: img.len, rhs: j.len });
    }
    WordCheck { margin_a, margin_b, min_e, max_e, violation }
}

/// Checks clauses (a) and (c) for every word on a grid of `J`, clause (b) for
/// every prefix of every word and for random concatenations of up to
/// `m_check` words. The all-`m` statement of clause (b) is not checkable;
/// per-word control plus this finite check is what the report certifies.
pub fn verify_cifs<W: AsRef<[Symbol]> + Sync>(
    family: &FiberFamily,
    words: &[W],
    cert: &CifsCertificate,
    opts: &VerifyOptions,
) -> Result<CifsVerification, CifsError> {
    if words.is_empty() {
        return Err(CifsError::EmptyCode);
    }
    let grid = cert.j.points(opts.grid_pts.max(2) - 1);
    let checks: Vec<WordCheck> = words
        .par_iter()
        .enumerate()
        .map(|(i, w)| check_word(family, w.as_ref(), i, cert, &grid))
        .collect();
    let mut out = CifsVerification {
        words_checked: words.len(),
        margin_a: f64::INFINITY,
        margin_b: f64::INFINITY,
        margin_c: f64::INFINITY,
        min_exponent: f64::INFINITY,
        max_exponent: f64::NEG_INFINITY,
        m_check: opts.m_check,
        tuples_per_m: opts.tuples,
        note: format!(
            "clause (b) checked for single words and {} random tuples per m <= {}",
            opts.tuples, opts.m_check
        ),
        violation: None,
    };
    for c in checks {
        out.margin_a = out.margin_a.min(c.margin_a);
        out.margin_b = out.margin_b.min(c.margin_b);
        out.min_exponent = out.min_exponent.min(c.min_e);
        out.max_exponent = out.max_exponent.max(c.max_e);
        if out.violation.is_none() {
            out.violation = c.violation;
        }
    }
    let (lo, hi) = cert.band();
    out.margin_c = (out.min_exponent - lo).min(hi - out.max_exponent);

    let coarse = cert.j.points(4);
    let jobs: Vec<(usize, usize)> = (2..=opts.m_check).flat_map(|m| (0..opts.tuples).map(move |t| (m, t))).collect();
    let tuple_checks: Vec<(f64, Option<Violation>)> = jobs
        .par_iter()
        .map(|&(m, t)| {
            let mut rng = seed::rng(opts.seed, 0xb0b, (m * 1_000_003 + t) as u64);
            let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..words.len())).collect();
            let mut w = Vec::new();
            for &i in &idx {
                w.extend_from_slice(words[i].as_ref());
            }
            let mut margin = f64::INFINITY;
            let mut viol = None;
            let lk = cert.k.ln();
            for &x in &coarse {
                let (mut y, mut l) = (x, 0.0);
                for (k, &s) in w.iter().enumerate() {
                    let (z, d) = family.step(s, y);
                    y = z;
                    l += d;
                    let rhs = lk + (k + 1) as f64 * cert.alpha0;
                    if rhs - l < margin {
                        margin = rhs - l;
                        if margin < 0.0 && viol.is_none() {
                            viol = Some(Violation { clause: 'b', words: idx.clone(), point: x, k: k + 1, lhs: l, rhs });
                        }
                    }
                }
            }
            (margin, viol)
        })
        .collect();
    for (m, v) in tuple_checks {
        out.margin_b = out.margin_b.min(m);
        if out.violation.is_none() {
            out.violation = v;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorPoint {
    pub window: Vec<usize>,
    pub x: f64,
    pub words_used: usize,
    pub residual: f64,
}

/// `lim f_[w_-1] o ... o f_[w_-n](x0)`; `window[0]` is `w_-1`.
pub fn attractor_point<W: AsRef<[Symbol]>>(
    family: &FiberFamily,
    words: &[W],
    cert: &CifsCertificate,
    window: &[usize],
    x0: f64,
    tol: f64,
) -> Result<AttractorPoint, CifsError> {
    let min_len = words.iter().map(|w| w.as_ref().len()).min().ok_or(CifsError::EmptyCode)?;
    let symbols_needed = ((tol.ln() - cert.j.len.ln() - cert.k.ln()) / cert.alpha0).ceil().max(0.0);
    let predicted = (symbols_needed / min_len as f64).ceil() as usize + 2;
    let limit = predicted.min(window.len());
    let eval = |n: usize| -> (f64, usize) {
        let mut x = x0;
        let mut len = 0;
        for &i in window[..n].iter().rev() {
            x = family.apply(words[i].as_ref(), x).0;
            len += words[i].as_ref().len();
        }
        (x, len)
    };
    let mut prev = eval(1).0;
    for n in 2..=limit {
        let (x, len) = eval(n);
        if circle_dist(x, prev) < tol {
            return Ok(AttractorPoint {
                window: window[..n].to_vec(),
                x,
                words_used: n,
                residual: cert.j.len * cert.k * (len as f64 * cert.alpha0).exp(),
            });
        }
        prev = x;
    }
    Err(CifsError::NoConvergence { words: limit })
}

/// Source of random codewords.
pub trait WordSource: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Symbol>;
}

/// Uniform choice among the words of a finite code.
pub struct UniformWords<'a, W>(pub &'a [W]);

impl<W: AsRef<[Symbol]> + Sync> WordSource for UniformWords<'_, W> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Symbol> {
        self.0[rng.gen_range(0..self.0.len())].as_ref().to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub trials: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub samples: Vec<f64>,
}

/// Per-symbol exponents along orbits of random concatenations, started at
/// (approximate) attractor points reached through `back_words` random words.
pub fn exponent_spectrum(
    family: &FiberFamily,
    source: &dyn WordSource,
    start: f64,
    trials: usize,
    words_per_trial: usize,
    back_words: usize,
    seed_root: u64,
) -> SpectrumReport {
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed_root, 0x5bec, t as u64);
            let mut x = start;
            for _ in 0..back_words {
                x = family.apply(&source.sample(&mut rng), x).0;
            }
            let (mut l, mut n) = (0.0, 0usize);
            for _ in 0..words_per_trial {
                let w = source.sample(&mut rng);
                let (y, d) = family.apply(&w, x);
                x = y;
                l += d;
                n += w.len();
            }
            l / n as f64
        })
        .collect();
    summarize_spectrum(samples)
}

pub fn summarize_spectrum(samples: Vec<f64>) -> SpectrumReport {
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
    SpectrumReport { trials: samples.len(), min, max, mean, samples }
}

/// Smallest number of concatenated words after which Birkhoff sums of `phi`
/// started anywhere in `J` agree up to `tau` per step.
#[allow(clippy::too_many_arguments)]
pub fn distortion_horizon(
    family: &FiberFamily,
    source: &dyn WordSource,
    j: &Arc,
    phi: &Observable,
    tau: f64,
    cap: usize,
    samples: usize,
    seed_root: u64,
) -> Result<usize, CifsError> {
    let grid = j.points(8);
    for m in 1..=cap {
        let ok = (0..samples).into_par_iter().all(|t| {
            let mut rng = seed::rng(seed_root, 0xd157, (m * 100_003 + t) as u64);
            let mut w = Vec::new();
            for _ in 0..m {
                w.extend(source.sample(&mut rng));
            }
            let sums: Vec<f64> = grid
                .iter()
                .map(|&x0| {
                    let mut x = x0;
                    let mut s = 0.0;
                    for &sym in &w {
                        s += phi.eval(sym, x);
                        x = family.map(sym).eval_log_deriv(x).0;
                    }
                    s
                })
                .collect();
            let lo = sums.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo < tau * w.len() as f64
        });
        if ok {
            return Ok(m);
        }
    }
    Err(CifsError::HorizonCapExceeded { cap })
}

/// Largest dyadic radius `r <= r_cap` such that the log-derivative modulus at
/// scale `K0 r` is at most `eps/4` and the sandwich widened to `eps/2` holds
/// on sampled points of `B(x, r)`.
pub fn distortion_radius(
    family: &FiberFamily,
    xi: &[Symbol],
    x: f64,
    k0: f64,
    alpha: f64,
    eps: f64,
    r_cap: f64,
) -> Result<f64, CifsError> {
    let lk = k0.ln();
    let ladder_ok = |y: f64, widen: f64| -> Option<usize> {
        let (mut z, mut l) = (y, 0.0);
        for (k, &s) in xi.iter().enumerate() {
            let (a, d) = family.step(s, z);
            z = a;
            l += d;
            let kk = (k + 1) as f64;
            if (l - kk * alpha).abs() > lk + kk * widen + 1e-12 {
                return Some(k + 1);
            }
        }
        None
    };
    if let Some(k) = ladder_ok(x, eps / 4.0) {
        return Err(CifsError::HypothesisFails { k });
    }
    let mut r = r_cap;
    while r > 1e-12 {
        if family.log_deriv_modulus(k0 * r, 512) <= eps / 4.0 {
            let ok = (0..=32).all(|i| ladder_ok(x - r + 2.0 * r * i as f64 / 32.0, eps / 2.0).is_none());
            if ok {
                return Ok(r);
            }
        }
        r /= 2.0;
    }
    Ok(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{FiberMap, NorthSouth, Rotation};

    // symbol 1 contracts towards 1/2 with derivative 1 - a there
    fn ns_family(a: f64) -> FiberFamily {
        FiberFamily::new(vec![
            FiberMap::NorthSouth(NorthSouth::new(a).unwrap()),
            FiberMap::Rotation(Rotation { shift: 0.25 }),
        ])
        .unwrap()
    }

    fn ns_cert(k: f64) -> CifsCertificate {
        let alpha = (1.0 - 0.5f64).ln();
        CifsCertificate::new(Arc::centered(0.5, 0.01), k, alpha + 0.01, alpha, 0.01).unwrap()
    }

    #[test]
    fn single_contraction_passes() {
        let f = ns_family(0.5);
        let words = vec![vec![1u8]];
        let v = verify_cifs(&f, &words, &ns_cert(1.1), &VerifyOptions::default()).unwrap();
        assert!(v.passed(), "{v:?}");
        assert!(v.margin_a > 0.0);
    }

    #[test]
    fn small_k_fails_clause_b() {
        let f = ns_family(0.5);
        let words = vec![vec![1u8, 1]];
        // near the edge of J the derivative is larger than at 1/2
        let alpha = 0.5f64.ln();
        let cert = CifsCertificate::new(Arc::centered(0.5, 0.05), 1.0, alpha + 0.005, alpha, 0.1).unwrap();
        let v = verify_cifs(&f, &words, &cert, &VerifyOptions::default()).unwrap();
        assert_eq!(v.violation.as_ref().map(|v| v.clause), Some('b'));
        assert!(v.into_result().is_err());
    }

    #[test]
    fn bad_certificates() {
        let j = Arc::centered(0.5, 0.1);
        assert!(CifsCertificate::new(j, 0.5, -1.0, -1.0, 0.1).is_err());
        assert!(CifsCertificate::new(j, 1.0, -1.0, -1.0, 2.0).is_err());
        assert!(CifsCertificate::new(j, 1.0, 0.1, -1.0, 0.1).is_err());
    }

    #[test]
    fn fixed_point_attractor() {
        let f = ns_family(0.5);
        let words = vec![vec![1u8]];
        let cert = ns_cert(1.1);
        let window = vec![0; 80];
        let a = attractor_point(&f, &words, &cert, &window, 0.505, 1e-10).unwrap();
        assert!(circle_dist(a.x, 0.5) < 1e-9);
        let b = attractor_point(&f, &words, &cert, &window, 0.495, 1e-10).unwrap();
        assert!(circle_dist(a.x, b.x) < 2e-10);
    }

    #[test]
    fn single_word_spectrum() {
        let f = ns_family(0.5);
        let words = vec![vec![1u8]];
        let s = exponent_spectrum(&f, &UniformWords(&words), 0.5, 10, 5, 3, 1);
        assert!((s.min - 0.5f64.ln()).abs() < 1e-12 && (s.max - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn horizons() {
        let f = ns_family(0.5);
        let words = vec![vec![1u8], vec![1u8, 1]];
        let j = Arc::centered(0.5, 0.01);
        let c = Observable::Constant { value: 3.0 };
        assert_eq!(distortion_horizon(&f, &UniformWords(&words), &j, &c, 1e-9, 5, 20, 1).unwrap(), 1);
        let ind = Observable::SymbolIndicator { symbol: 1 };
        assert_eq!(distortion_horizon(&f, &UniformWords(&words), &j, &ind, 1e-9, 5, 20, 1).unwrap(), 1);
    }

    #[test]
    fn isometric_radius_is_cap() {
        let f = FiberFamily::new(vec![
            FiberMap::Rotation(Rotation { shift: 0.1 }),
            FiberMap::Rotation(Rotation { shift: 0.2 }),
        ])
        .unwrap();
        // isometries have exponent 0, so use alpha = 0 in the sandwich
        let r = distortion_radius(&f, &[1, 2, 1], 0.3, 1.0, 0.0, 0.1, 0.25).unwrap();
        assert_eq!(r, 0.25);
    }
}
