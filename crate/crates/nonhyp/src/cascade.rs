//! Repeat-and-tail cascade: tailing maps, codes `W_n`, roofs and the
//! quantifier and entropy checks across levels.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blending::{BlendingInterval, ConnectLookup};
use crate::cifs::{exponent_spectrum, verify_cifs, CifsCertificate, CifsError, CifsVerification, SpectrumReport, UniformWords, VerifyOptions};
use crate::codes::{extend_suffix, power, CodeBook, CodeError, Symbol};
use crate::fiber::FiberFamily;
use crate::seed;
use crate::skeleton::Inequality;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("level {level}: tail of length {len} for symbol {symbol} exceeds the bound {bound}")]
    TailTooLong { level: u32, symbol: u128, len: usize, bound: f64 },
    #[error("level {level}: no tail found for symbol {symbol} within depth {depth}")]
    SearchExhausted { level: u32, symbol: u128, depth: usize },
    #[error("level {level}: alphabet size overflows")]
    SizeOverflow { level: u32 },
    #[error("level {level}: certificate violated in clause ({clause}): {witness}")]
    CertificateViolated { level: u32, clause: char, witness: String },
    #[error("invalid cascade parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Cifs(#[from] CifsError),
    #[error(transparent)]
    Code(#[from] CodeError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    pub beam: usize,
    pub depth_cap: usize,
}

impl Default for TailParams {
    fn default() -> Self {
        TailParams { beam: 64, depth_cap: 160 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub word: Vec<Symbol>,
    /// Length of the expanding part; the rest connects back into `I`.
    pub eta_len: usize,
    /// Per-symbol exponent of body plus tail at the centre of `J`.
    pub exponent: f64,
}

/// Context for tail searches: the fiber family, the interval and its fast
/// connecting words.
pub struct TailSearch<'a> {
    pub family: &'a FiberFamily,
    pub lookup: &'a ConnectLookup,
    pub interval: &'a BlendingInterval,
    pub params: TailParams,
}

impl TailSearch<'_> {
    /// Tail for `body` (the concatenated constituents): a beam over expanding
    /// continuations `eta` ordered by accumulated log-derivative; at each depth
    /// every node is connected back into `I` and the candidate whose total
    /// exponent is closest to `target` within `tol` wins. Smallest depth first.
    pub fn find(&self, body: &[Symbol], target: f64, tol: f64) -> Option<Tail> {
        let family = self.family;
        let (y0, l0) = family.apply(body, self.interval.center);
        let n0 = body.len();
        // beam entries (arena index, point, log-derivative); the arena holds (parent, symbol)
        let mut arena: Vec<(usize, Symbol)> = vec![(usize::MAX, 0)];
        let mut beam: Vec<(usize, f64, f64)> = vec![(0, y0, l0)];
        let mut next = Vec::with_capacity(self.params.beam * family.n_symbols());
        for depth in 1..=self.params.depth_cap {
            next.clear();
            for &(node, y, l) in &beam {
                for s in 1..=family.n_symbols() as Symbol {
                    let (z, d) = family.step(s, y);
                    next.push((node, s, z, l + d));
                }
            }
            next.sort_by(|a, b| b.3.total_cmp(&a.3));
            next.truncate(self.params.beam);
            let n_pre = (n0 + depth) as f64;
            let mut best: Option<(f64, usize, Vec<Symbol>)> = None;
            for (k, &(_, _, y, l)) in next.iter().enumerate() {
                let (len_est, lb_est) = self.lookup.estimate(y);
                if ((l + lb_est) / (n_pre + len_est as f64) - target).abs() > tol + PREFILTER_SLACK {
                    continue;
                }
                let Some((beta, lb)) = self.lookup.connect(family, y) else { continue };
                let e = (l + lb) / (n_pre + beta.len() as f64);
                let d = (e - target).abs();
                if d <= tol && best.as_ref().map_or(true, |b| d < b.0) {
                    best = Some((d, k, beta));
                }
            }
            if let Some((_, k, beta)) = best {
                let (mut node, s, _, _) = next[k];
                let mut word = vec![s];
                while node != 0 {
                    word.push(arena[node].1);
                    node = arena[node].0;
                }
                word.reverse();
                word.extend_from_slice(&beta);
                let exponent = family.apply(&word, y0).1 + l0;
                return Some(Tail { exponent: exponent / (n0 + word.len()) as f64, word, eta_len: depth });
            }
            beam.clear();
            for &(parent, s, y, l) in &next {
                arena.push((parent, s));
                beam.push((arena.len() - 1, y, l));
            }
        }
        None
    }
}

/// Exponent slack of the table estimate used to skip exact connections.
const PREFILTER_SLACK: f64 = 0.05;

/// Tails for every `m`-tuple of a materialized code, in tuple index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailingMap {
    pub m: usize,
    pub tails: Vec<Vec<Symbol>>,
}

impl TailingMap {
    pub fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.tails.iter().map(|t| t.len())
    }
}

/// Digits of `idx` in base `base`, most significant first.
pub fn digits(mut idx: u128, base: u128, m: usize) -> Vec<u128> {
    let mut out = vec![0; m];
    for k in (0..m).rev() {
        out[k] = idx % base;
        idx /= base;
    }
    out
}

pub fn build_tailing(
    search: &TailSearch,
    code: &CodeBook,
    m: usize,
    cert: &CifsCertificate,
    l1: f64,
    level: u32,
) -> Result<TailingMap, CascadeError> {
    let size = (code.len() as u128).checked_pow(m as u32).ok_or(CascadeError::SizeOverflow { level })?;
    if size > usize::MAX as u128 {
        return Err(CascadeError::SizeOverflow { level });
    }
    let results: Vec<Result<Vec<Symbol>, CascadeError>> = (0..size as usize)
        .into_par_iter()
        .map(|i| {
            let body: Vec<Symbol> = digits(i as u128, code.len() as u128, m)
                .into_iter()
                .flat_map(|d| code.word(d as usize).symbols().to_vec())
                .collect();
            tail_for(search, &body, cert, l1, level, i as u128).map(|t| t.word)
        })
        .collect();
    let tails = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(TailingMap { m, tails })
}

fn tail_for(
    search: &TailSearch,
    body: &[Symbol],
    cert: &CifsCertificate,
    l1: f64,
    level: u32,
    symbol: u128,
) -> Result<Tail, CascadeError> {
    let t = search
        .find(body, cert.alpha / 2.0, cert.eps / 4.0)
        .ok_or(CascadeError::SearchExhausted { level, symbol, depth: search.params.depth_cap })?;
    let bound = l1 * body.len() as f64 * cert.alpha.abs();
    if t.word.len() as f64 > bound {
        return Err(CascadeError::TailTooLong { level, symbol, len: t.word.len(), bound });
    }
    Ok(t)
}

/// `(W^m)_t`.
pub fn repeat_and_tail(code: &CodeBook, m: usize, tailing: &TailingMap, cap: usize) -> Result<CodeBook, CascadeError> {
    if tailing.m != m {
        return Err(CascadeError::BadParameter(format!("tailing map for m = {} used with m = {m}", tailing.m)));
    }
    let p = power(code, m, cap)?;
    Ok(extend_suffix(&p, &tailing.tails)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    pub schedule: Vec<usize>,
    pub tail: TailParams,
    /// Largest alphabet whose tails are all computed.
    pub materialize_cap: u128,
    /// Symbols sampled at larger levels.
    pub sample_symbols: usize,
    pub verify: VerifyOptions,
    pub spectrum_trials: usize,
    pub spectrum_back_words: usize,
    pub seed: u64,
}

impl Default for CascadeParams {
    fn default() -> Self {
        CascadeParams {
            schedule: vec![4, 4],
            tail: TailParams::default(),
            materialize_cap: 100_000,
            sample_symbols: 10_000,
            verify: VerifyOptions::default(),
            spectrum_trials: 1000,
            spectrum_back_words: 4,
            seed: 0,
        }
    }
}

/// Roof values and tail lengths of (a sample of) the symbols of a level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoofTable {
    pub exact: bool,
    /// Symbol indices when sampled; empty when every symbol is listed.
    pub symbols: Vec<u128>,
    pub roof: Vec<u64>,
    pub tail: Vec<u64>,
    /// Extreme tuples (all constituents longest / shortest), not part of the sample.
    pub extremes: Vec<(u128, u64, u64)>,
}

impl RoofTable {
    pub fn mean(&self) -> f64 {
        let s: u64 = self.roof.iter().sum();
        s as f64 / self.roof.len() as f64
    }
    pub fn sem(&self) -> f64 {
        if self.exact || self.roof.len() < 2 {
            return 0.0;
        }
        let mu = self.mean();
        let v = self.roof.iter().map(|&r| (r as f64 - mu).powi(2)).sum::<f64>() / (self.roof.len() - 1) as f64;
        (v / self.roof.len() as f64).sqrt()
    }
    pub fn max(&self) -> u64 {
        self.roof.iter().copied().chain(self.extremes.iter().map(|e| e.1)).max().unwrap_or(0)
    }
    pub fn min(&self) -> u64 {
        self.roof.iter().copied().chain(self.extremes.iter().map(|e| e.1)).min().unwrap_or(0)
    }
    pub fn max_tail(&self) -> u64 {
        self.tail.iter().copied().chain(self.extremes.iter().map(|e| e.2)).max().unwrap_or(0)
    }
    /// `(roof, tail)` pairs including extremes.
    pub fn pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.roof.iter().copied().zip(self.tail.iter().copied()).chain(self.extremes.iter().map(|e| (e.1, e.2)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub n: u32,
    pub m: usize,
    pub size: u128,
    pub cert: CifsCertificate,
    pub mean_roof: f64,
    pub mean_roof_sem: f64,
    pub max_roof: u64,
    pub min_roof: u64,
    pub max_tail: u64,
    /// Largest `|t| - L1 sum|w_j| |alpha_(n-1)|`; nonpositive when every tail is within the bound.
    /// Absent at level 0.
    pub tail_bound_excess: Option<f64>,
    pub verified_fraction: f64,
    pub verification: CifsVerification,
    pub spectrum: SpectrumReport,
    pub spectrum_violations: usize,
    pub warnings: Vec<String>,
}

pub struct CascadeLevel {
    pub summary: LevelSummary,
    pub roof: RoofTable,
    /// Every word when materialized, otherwise the sampled pool.
    pub words: Vec<Vec<Symbol>>,
    pub code: Option<CodeBook>,
}

impl CascadeLevel {
    pub fn n(&self) -> u32 {
        self.summary.n
    }
    pub fn materialized(&self) -> bool {
        self.roof.exact
    }
}

pub struct Cascade<'a> {
    pub search: TailSearch<'a>,
    pub params: CascadeParams,
    pub l1: f64,
    pub levels: Vec<CascadeLevel>,
}

fn level_spectrum(family: &FiberFamily, words: &[Vec<Symbol>], cert: &CifsCertificate, start: f64, params: &CascadeParams, n: u32) -> (SpectrumReport, usize) {
    let s = exponent_spectrum(family, &UniformWords(words), start, params.spectrum_trials, 1, params.spectrum_back_words, seed::derive(params.seed, 0x5e, n as u64));
    let (lo, hi) = cert.band();
    let v = s.samples.iter().filter(|&&e| !(e > lo && e < hi)).count();
    (s, v)
}

fn check_verification(v: &CifsVerification, level: u32) -> Result<(), CascadeError> {
    match &v.violation {
        None => Ok(()),
        Some(w) => Err(CascadeError::CertificateViolated {
            level,
            clause: w.clause,
            witness: format!("words {:?} at x = {} k = {}: {} vs {}", w.words, w.point, w.k, w.lhs, w.rhs),
        }),
    }
}

impl<'a> Cascade<'a> {
    /// Level 0 from the initial code and its certificate.
    pub fn new(search: TailSearch<'a>, w0: &CodeBook, cert: CifsCertificate, params: CascadeParams) -> Result<Self, CascadeError> {
        let l1 = search.interval.l1;
        let words: Vec<Vec<Symbol>> = w0.words().iter().map(|w| w.symbols().to_vec()).collect();
        let verification = verify_cifs(search.family, &words, &cert, &params.verify)?;
        check_verification(&verification, 0)?;
        let (spectrum, spectrum_violations) = level_spectrum(search.family, &words, &cert, search.interval.center, &params, 0);
        let roof = RoofTable {
            exact: true,
            symbols: Vec::new(),
            roof: words.iter().map(|w| w.len() as u64).collect(),
            tail: vec![0; words.len()],
            extremes: Vec::new(),
        };
        let summary = LevelSummary {
            n: 0,
            m: 1,
            size: words.len() as u128,
            cert,
            mean_roof: roof.mean(),
            mean_roof_sem: 0.0,
            max_roof: roof.max(),
            min_roof: roof.min(),
            max_tail: 0,
            tail_bound_excess: None,
            verified_fraction: 1.0,
            verification,
            spectrum,
            spectrum_violations,
            warnings: Vec::new(),
        };
        Ok(Cascade { search, params, l1, levels: vec![CascadeLevel { summary, roof, words, code: Some(w0.clone()) }] })
    }

    pub fn family(&self) -> &FiberFamily {
        self.search.family
    }

    /// Spelling of symbol `idx` of level `n`; tails of sampled levels are recomputed.
    pub fn spell(&self, n: u32, idx: u128) -> Result<Vec<Symbol>, CascadeError> {
        let lev = &self.levels[n as usize];
        if lev.materialized() {
            return Ok(lev.words[idx as usize].clone());
        }
        if let Some(p) = lev.roof.symbols.iter().position(|&s| s == idx) {
            return Ok(lev.words[p].clone());
        }
        let (body, _) = self.body(n, idx)?;
        let prev = &self.levels[n as usize - 1].summary.cert;
        let t = tail_for(&self.search, &body, prev, self.l1, n, idx)?;
        Ok([body, t.word].concat())
    }

    fn body(&self, n: u32, idx: u128) -> Result<(Vec<Symbol>, Vec<u128>), CascadeError> {
        self.body_with(n, self.levels[n as usize].summary.m, idx)
    }

    /// Concatenated constituents of a level-`n` symbol built with repetition `m`.
    fn body_with(&self, n: u32, m: usize, idx: u128) -> Result<(Vec<Symbol>, Vec<u128>), CascadeError> {
        let base = self.levels[n as usize - 1].summary.size;
        let ds = digits(idx, base, m);
        let mut body = Vec::new();
        for &d in &ds {
            body.extend(self.spell(n - 1, d)?);
        }
        Ok((body, ds))
    }

    /// Level-0 indices whose concatenation is the tail-stripped word of `idx`.
    pub fn level0_path(&self, n: u32, idx: u128) -> Vec<u128> {
        if n == 0 {
            return vec![idx];
        }
        let base = self.levels[n as usize - 1].summary.size;
        digits(idx, base, self.levels[n as usize].summary.m)
            .into_iter()
            .flat_map(|d| self.level0_path(n - 1, d))
            .collect()
    }

    /// Tail lengths added at each level `1..=n` inside the word of `idx`, in spelling order.
    pub fn tail_lengths(&self, n: u32, idx: u128) -> Result<Vec<(u32, usize)>, CascadeError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let (body, ds) = self.body(n, idx)?;
        let mut out = Vec::new();
        for &d in &ds {
            out.extend(self.tail_lengths(n - 1, d)?);
        }
        let full = self.spell(n, idx)?;
        out.push((n, full.len() - body.len()));
        Ok(out)
    }

    pub fn advance_level(&mut self, m: usize) -> Result<(), CascadeError> {
        if m == 0 {
            return Err(CascadeError::BadParameter("m = 0".into()));
        }
        let n = self.levels.len() as u32;
        let prev = &self.levels[n as usize - 1];
        let prev_cert = prev.summary.cert;
        let size = prev.summary.size.checked_pow(m as u32).ok_or(CascadeError::SizeOverflow { level: n })?;
        let cert = self.levels[0].summary.cert.halved(n);
        let family = self.search.family;
        let mut warnings = Vec::new();
        if (m as f64) * prev_cert.alpha.abs() < 1.0 {
            warnings.push(format!("m |alpha| = {} < 1", m as f64 * prev_cert.alpha.abs()));
        }
        let lhs = (1.0 + self.search.lookup.m_c as f64) * family.norm_bound().ln() / m as f64;
        if lhs >= prev_cert.eps / 8.0 {
            warnings.push(format!("(1/m) log |F|^(1+m_c) = {lhs} >= eps/8 = {}", prev_cert.eps / 8.0));
        }
        let (roof, words, code) = if size <= self.params.materialize_cap && prev.materialized() {
            let prev_code = match &prev.code {
                Some(c) => c.clone(),
                None => CodeBook::new(family.n_symbols() as Symbol, prev.words.iter().map(|w| crate::codes::Word::new(w.clone())).collect::<Result<_, _>>()?)?,
            };
            let tailing = build_tailing(&self.search, &prev_code, m, &prev_cert, self.l1, n)?;
            let code = repeat_and_tail(&prev_code, m, &tailing, self.params.materialize_cap as usize)?;
            let words: Vec<Vec<Symbol>> = code.words().iter().map(|w| w.symbols().to_vec()).collect();
            let roof = RoofTable {
                exact: true,
                symbols: Vec::new(),
                roof: words.iter().map(|w| w.len() as u64).collect(),
                tail: tailing.lengths().map(|l| l as u64).collect(),
                extremes: Vec::new(),
            };
            (roof, words, Some(code))
        } else {
            let pm = prev.summary.size;
            let mut symbols: Vec<u128> = (0..self.params.sample_symbols)
                .map(|i| {
                    let mut rng = seed::rng(self.params.seed, 0x1e7e1 + n as u64, i as u64);
                    digits_to_index(&(0..m).map(|_| rng.gen_range(0..pm)).collect::<Vec<_>>(), pm)
                })
                .collect();
            // longest and shortest constituents repeated m times
            let longest = (0..prev.roof.roof.len()).max_by_key(|&i| prev.roof.roof[i]).unwrap_or(0);
            let shortest = (0..prev.roof.roof.len()).min_by_key(|&i| prev.roof.roof[i]).unwrap_or(0);
            let sym_of = |i: usize| if prev.roof.symbols.is_empty() { i as u128 } else { prev.roof.symbols[i] };
            let extremes_sym: Vec<u128> = [longest, shortest].iter().map(|&i| digits_to_index(&vec![sym_of(i); m], pm)).collect();
            let n_sample = symbols.len();
            symbols.extend(&extremes_sym);
            let built: Vec<Result<(Vec<Symbol>, usize), CascadeError>> = symbols
                .par_iter()
                .map(|&s| {
                    let (body, _) = self.body_with(n, m, s)?;
                    let t = tail_for(&self.search, &body, &prev_cert, self.l1, n, s)?;
                    let tl = t.word.len();
                    Ok(([body, t.word].concat(), tl))
                })
                .collect();
            let mut words = Vec::with_capacity(symbols.len());
            let mut tails = Vec::with_capacity(symbols.len());
            for b in built {
                let (w, t) = b?;
                words.push(w);
                tails.push(t as u64);
            }
            let extremes = (n_sample..symbols.len()).map(|i| (symbols[i], words[i].len() as u64, tails[i])).collect();
            symbols.truncate(n_sample);
            words.truncate(n_sample);
            tails.truncate(n_sample);
            let roof = RoofTable { exact: false, symbols, roof: words.iter().map(|w| w.len() as u64).collect(), tail: tails, extremes };
            (roof, words, None)
        };
        let verification = verify_cifs(family, &words, &cert, &self.params.verify)?;
        check_verification(&verification, n)?;
        let (spectrum, spectrum_violations) = level_spectrum(family, &words, &cert, self.search.interval.center, &self.params, n);
        let tail_bound_excess = roof
            .pairs()
            .map(|(r, t)| t as f64 - self.l1 * (r - t) as f64 * prev_cert.alpha.abs())
            .fold(f64::NEG_INFINITY, f64::max);
        let summary = LevelSummary {
            n,
            m,
            size,
            cert,
            mean_roof: roof.mean(),
            mean_roof_sem: roof.sem(),
            max_roof: roof.max(),
            min_roof: roof.min(),
            max_tail: roof.max_tail(),
            tail_bound_excess: Some(tail_bound_excess),
            verified_fraction: words.len() as f64 / size as f64,
            verification,
            spectrum,
            spectrum_violations,
            warnings,
        };
        self.levels.push(CascadeLevel { summary, roof, words, code });
        Ok(())
    }

    pub fn run(&mut self) -> Result<(), CascadeError> {
        for m in self.params.schedule.clone() {
            self.advance_level(m)?;
        }
        Ok(())
    }

    pub fn summaries(&self) -> Vec<LevelSummary> {
        self.levels.iter().map(|l| l.summary.clone()).collect()
    }
}

fn digits_to_index(ds: &[u128], base: u128) -> u128 {
    ds.iter().fold(0, |acc, &d| acc * base + d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoofLevelCheck {
    pub n: u32,
    pub checked: usize,
    /// Symbols with `R_n(b) <= sum R_(n-1)`.
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub min_upper_margin: f64,
    pub item1: Inequality,
    pub item2: Inequality,
    pub item3_lower: Inequality,
    pub item3_upper: Inequality,
    pub item4: Inequality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoofReport {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
    pub levels: Vec<RoofLevelCheck>,
}

impl RoofReport {
    pub fn passed(&self) -> bool {
        self.levels.iter().all(|l| {
            l.lower_violations == 0
                && l.upper_violations == 0
                && l.item1.holds
                && l.item2.holds
                && l.item3_lower.holds
                && l.item3_upper.holds
                && l.item4.holds
        })
    }
}

/// Roof assumption `sum R_(n-1) < R_n <= (1 + K 2^-(n-1)) sum R_(n-1)` with
/// `K = L1 |alpha|` on every listed symbol, plus the four roof estimates.
pub fn roof_assumption_check(levels: &[(usize, &RoofTable)], l1: f64, alpha: f64) -> RoofReport {
    let k = l1 * alpha.abs();
    let r0 = levels[0].1;
    let l2 = 2.0 * (k * k.exp()).max(k.exp()) * r0.max() as f64 / r0.min() as f64;
    let mut out = Vec::new();
    let mut ratio_bound = r0.max() as f64 / r0.min() as f64;
    for n in 1..levels.len() {
        let (m, table) = levels[n];
        let prev = levels[n - 1].1;
        let factor = 1.0 + k * 2f64.powi(-(n as i32 - 1));
        ratio_bound *= factor;
        let (mut lower, mut upper, mut margin, mut checked) = (0, 0, f64::INFINITY, 0);
        for (r, t) in table.pairs() {
            let s = (r - t) as f64;
            checked += 1;
            if r as f64 <= s {
                lower += 1;
            }
            let mg = factor * s - r as f64;
            margin = margin.min(mg);
            if mg < 0.0 {
                upper += 1;
            }
        }
        let (max_n, min_n) = (table.max() as f64, table.min() as f64);
        let mean_n = table.mean();
        let mean_p = prev.mean();
        let scale = 2f64.powi(-(n as i32));
        out.push(RoofLevelCheck {
            n: n as u32,
            checked,
            lower_violations: lower,
            upper_violations: upper,
            min_upper_margin: margin,
            item1: Inequality::lt(m as f64 * prev.max() as f64, max_n),
            item2: Inequality::le(max_n / min_n, ratio_bound.min(l2)),
            item3_lower: Inequality::lt(1.0, mean_n / (m as f64 * mean_p)),
            item3_upper: Inequality::lt(mean_n / (m as f64 * mean_p), 1.0 + l2 * scale),
            item4: Inequality::le(table.max_tail() as f64, l2 * scale * mean_n),
        });
    }
    RoofReport { k, l2, levels: out }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBound {
    pub n: u32,
    /// Abramov entropy `log M_n / mean R_n`.
    pub h_n: f64,
    /// `e^{-L1 (1 - 2^-n) |alpha|} (h0 - eps_H)`.
    pub bound: f64,
    pub check: Inequality,
    /// Same with the exponent doubled, which is what the product of the
    /// per-level roof factors `1 + L1 2^-k |alpha|` actually guarantees.
    pub product_bound: f64,
    pub product_check: Inequality,
}

/// `log M_n / mean R_n >= e^{-L1 (1 - 2^-n) |alpha|} (h0 - eps_H)` per level.
pub fn entropy_lower_bound(levels: &[(u128, f64)], h0: f64, eps_h: f64, l1: f64, alpha: f64) -> Vec<EntropyBound> {
    levels
        .iter()
        .enumerate()
        .map(|(n, &(size, mean_roof))| {
            let h_n = crate::suspension::log_u128(size) / mean_roof;
            let e = l1 * (1.0 - 2f64.powi(-(n as i32))) * alpha.abs();
            let bound = (-e).exp() * (h0 - eps_h);
            let product_bound = (-2.0 * e).exp() * (h0 - eps_h);
            EntropyBound {
                n: n as u32,
                h_n,
                bound,
                check: Inequality::le(bound, h_n),
                product_bound,
                product_check: Inequality::le(product_bound, h_n),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::Word;

    #[test]
    fn digits_round_trip() {
        assert_eq!(digits(0b1101, 2, 4), vec![1, 1, 0, 1]);
        assert_eq!(digits_to_index(&[3, 0, 2], 5), 3 * 25 + 2);
        for i in 0..125 {
            assert_eq!(digits_to_index(&digits(i, 5, 3), 5), i);
        }
    }

    #[test]
    fn empty_tails_give_power() {
        let c = CodeBook::from_slices(2, &[&[1], &[2, 1]]).unwrap();
        let t = TailingMap { m: 2, tails: vec![Vec::new(); 4] };
        assert_eq!(repeat_and_tail(&c, 2, &t, 100).unwrap(), power(&c, 2, 100).unwrap());
    }

    #[test]
    fn small_repeat_and_tail() {
        let c = CodeBook::from_slices(2, &[&[1], &[2]]).unwrap();
        let t = TailingMap { m: 1, tails: vec![vec![2], vec![]] };
        let r = repeat_and_tail(&c, 1, &t, 10).unwrap();
        assert_eq!(r.words(), &[Word::new(vec![1, 2]).unwrap(), Word::new(vec![2]).unwrap()]);
        assert!(r.is_disjoint());
    }

    fn table(roof: Vec<u64>, tail: Vec<u64>) -> RoofTable {
        RoofTable { exact: true, symbols: Vec::new(), roof, tail, extremes: Vec::new() }
    }

    #[test]
    fn empty_tails_fail_roof_assumption() {
        let r0 = table(vec![10, 10], vec![0, 0]);
        let r1 = table(vec![20; 4], vec![0; 4]);
        let rep = roof_assumption_check(&[(1, &r0), (2, &r1)], 1.0, 0.1);
        assert_eq!(rep.levels[0].lower_violations, 4);
        assert!(!rep.passed());
    }

    #[test]
    fn unit_tails_on_constant_roofs() {
        // R0 = 10, m = 1, tails of length 1: needs K >= 0.1
        let r0 = table(vec![10, 10], vec![0, 0]);
        let r1 = table(vec![11, 11], vec![1, 1]);
        let ok = roof_assumption_check(&[(1, &r0), (1, &r1)], 1.0, 0.1);
        assert_eq!(ok.levels[0].lower_violations + ok.levels[0].upper_violations, 0);
        let bad = roof_assumption_check(&[(1, &r0), (1, &r1)], 1.0, 0.09);
        assert_eq!(bad.levels[0].upper_violations, 2);
    }

    #[test]
    fn entropy_bound_at_level_zero_is_trivial() {
        let b = entropy_lower_bound(&[(4, 2.0)], 4f64.ln() / 2.0, 0.01, 5.0, 0.3);
        assert!(b[0].check.holds);
        assert!((b[0].bound - (b[0].h_n - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn synthetic_entropy_chain() {
        // M0 = 4, R0 = 2, L1 |alpha| = 0.1; tails as long as the roof bound allows
        let h0 = 4f64.ln() / 2.0;
        let full = [(4u128, 2.0), (16, 4.0 * 1.1), (256, 4.4 * 2.0 * 1.05)];
        let b = entropy_lower_bound(&full, h0, 0.0, 0.1, 1.0);
        assert!(b.iter().all(|b| b.product_check.holds));
        // h1 = h0 / 1.1 < e^{-0.05} h0
        assert!(!b[1].check.holds);
        assert!((b[1].h_n - h0 / 1.1).abs() < 1e-12);
        // tails of 4% stay above both bounds
        let short = [(4u128, 2.0), (16, 4.0 * 1.04), (256, 4.16 * 2.0 * 1.02)];
        for b in entropy_lower_bound(&short, h0, 0.0, 0.1, 1.0) {
            assert!(b.check.holds && b.product_check.holds, "{b:?}");
        }
    }
}
