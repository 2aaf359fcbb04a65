//! Empirical blending certificates: controlled expanding coverings, connecting
//! words, and the constants K1..K6, m_c, L1.
//!
//! All constants here are found by bounded search. They certify that *some*
//! choice of constants works up to the depth cap and grid used, nothing more.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::Symbol;
use crate::fiber::{circle_dist, wrap, CircleMap, FiberFamily};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlendingError {
    #[error("interval H does not meet J")]
    DisjointFromJ,
    #[error("search exhausted at depth {depth}")]
    SearchExhausted { depth: usize },
    #[error("no connecting word from {x} within depth {depth}")]
    NoConnection { x: f64, depth: usize },
    #[error("invalid blending parameter: {0}")]
    BadParameter(String),
}

/// Closed arc `[lo, lo+len]` of the circle `[0,1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub lo: f64,
    pub len: f64,
}

impl Arc {
    pub fn new(lo: f64, len: f64) -> Arc {
        Arc { lo: wrap(lo), len: len.clamp(0.0, 1.0) }
    }

    pub fn centered(c: f64, radius: f64) -> Arc {
        Arc::new(c - radius, 2.0 * radius)
    }

    pub fn full() -> Arc {
        Arc { lo: 0.0, len: 1.0 }
    }

    pub fn hi(&self) -> f64 {
        wrap(self.lo + self.len)
    }

    pub fn center(&self) -> f64 {
        wrap(self.lo + self.len / 2.0)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.len >= 1.0 || (x - self.lo).rem_euclid(1.0) <= self.len
    }

    pub fn contains_arc(&self, o: &Arc) -> bool {
        if self.len >= 1.0 {
            return true;
        }
        if o.len >= 1.0 {
            return false;
        }
        (o.lo - self.lo).rem_euclid(1.0) + o.len <= self.len
    }

    pub fn intersects(&self, o: &Arc) -> bool {
        self.contains(o.lo) || o.contains(self.lo)
    }

    /// `k+1` equally spaced points from `lo` to `hi`.
    pub fn points(&self, k: usize) -> Vec<f64> {
        (0..=k)
            .map(|i| wrap(self.lo + self.len * i as f64 / k as f64))
            .collect()
    }
}

/// Number of interior sample points used to resolve wrap-around.
pub const INTERIOR_SAMPLES: usize = 17;

/// Arc spanned by the images of ordered sample points of an arc under an
/// orientation preserving map. `None` when the images look like they cover
/// the whole circle.
fn arc_from_images(images: &[f64]) -> Option<Arc> {
    let mut len = 0.0;
    for p in images.windows(2) {
        len += (p[1] - p[0]).rem_euclid(1.0);
    }
    if len >= 1.0 - 1e-12 {
        None
    } else {
        Some(Arc { lo: images[0], len })
    }
}

/// Image of an arc under `f_[word]`, from endpoint images and orientation.
pub fn image_arc(family: &FiberFamily, word: &[Symbol], arc: &Arc) -> Arc {
    let pts: Vec<f64> = arc
        .points(INTERIOR_SAMPLES + 1)
        .into_iter()
        .map(|x| family.apply(word, x).0)
        .collect();
    if let Some(a) = arc_from_images(&pts) {
        return a;
    }
    let dense: Vec<f64> = arc
        .points(256)
        .into_iter()
        .map(|x| family.apply(word, x).0)
        .collect();
    arc_from_images(&dense).unwrap_or_else(Arc::full)
}

/// Common blending interval `J = [x-2d, x+2d]` with `I = [x-d, x+d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendingInterval {
    pub center: f64,
    pub delta: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub m_c: usize,
    pub l1: f64,
}

impl BlendingInterval {
    pub fn j(&self) -> Arc {
        Arc::centered(self.center, 2.0 * self.delta)
    }
    pub fn i(&self) -> Arc {
        Arc::centered(self.center, self.delta)
    }
    /// Landing zone used by connecting words, half of `I`.
    pub fn landing(&self) -> Arc {
        Arc::centered(self.center, self.delta / 2.0)
    }
}

/// `L1 = K2 (2 + |log 4 delta| + K3) + m_c`.
pub fn constant_l1(k2: f64, k3: f64, delta: f64, m_c: usize) -> f64 {
    k2 * (2.0 + (4.0 * delta).ln().abs() + k3) + m_c as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCertificate {
    pub word: Vec<Symbol>,
    pub h: Arc,
    pub image: Arc,
    /// Minimum over a grid of `H` of `log |(f_[word])'|`.
    pub min_log_deriv: f64,
}

impl ExpansionCertificate {
    pub fn len(&self) -> usize {
        self.word.len()
    }
    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }
    /// Re-evaluates covering and per-point expansion from scratch.
    pub fn recheck(&self, family: &FiberFamily, target: &Arc, k5: f64) -> bool {
        let img = image_arc(family, &self.word, &self.h);
        let expands = self
            .h
            .points(INTERIOR_SAMPLES + 1)
            .into_iter()
            .all(|x| family.apply(&self.word, x).1 >= self.word.len() as f64 * k5 - 1e-9);
        img.contains_arc(target) && expands
    }
}

#[derive(Clone)]
struct Node {
    word: Vec<Symbol>,
    pts: Vec<f64>,
    logd: Vec<f64>,
    image: Option<Arc>,
}

impl Node {
    fn image_len(&self) -> f64 {
        self.image.map_or(1.0, |a| a.len)
    }
    fn min_logd(&self) -> f64 {
        self.logd.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Beam search for a word whose image of `h` covers `target`, keeping the
/// `beam` nodes with the largest images (ties by accumulated expansion).
pub fn cec_search(
    family: &FiberFamily,
    h: &Arc,
    j: &Arc,
    target: &Arc,
    depth_cap: usize,
    beam: usize,
) -> Result<ExpansionCertificate, BlendingError> {
    if !h.intersects(j) {
        return Err(BlendingError::DisjointFromJ);
    }
    let pts = h.points(INTERIOR_SAMPLES + 1);
    let n = pts.len();
    let mut frontier = vec![Node { word: Vec::new(), pts, logd: vec![0.0; n], image: Some(*h) }];
    for depth in 1..=depth_cap {
        let mut children = Vec::with_capacity(frontier.len() * family.n_symbols());
        for node in &frontier {
            for s in 1..=family.n_symbols() as Symbol {
                let mut c = node.clone();
                for (p, l) in c.pts.iter_mut().zip(c.logd.iter_mut()) {
                    let (y, d) = family.step(s, *p);
                    *p = y;
                    *l += d;
                }
                c.word.push(s);
                c.image = arc_from_images(&c.pts);
                children.push(c);
            }
        }
        let best = children
            .iter()
            .filter(|c| c.image.map_or(true, |a| a.contains_arc(target)))
            .max_by(|a, b| a.min_logd().total_cmp(&b.min_logd()));
        if let Some(c) = best {
            let image = image_arc(family, &c.word, h);
            if image.contains_arc(target) {
                return Ok(ExpansionCertificate {
                    word: c.word.clone(),
                    h: *h,
                    image,
                    min_log_deriv: c.min_logd(),
                });
            }
        }
        // stable sort keeps generation order on ties
        children.sort_by(|a, b| {
            b.image_len()
                .total_cmp(&a.image_len())
                .then(b.min_logd().total_cmp(&a.min_logd()))
        });
        children.truncate(beam);
        frontier = children;
        let _ = depth;
    }
    Err(BlendingError::SearchExhausted { depth: depth_cap })
}

/// Shortest word (BFS, symbols in increasing order) moving `x` into `target`;
/// with `inverse` the inverse maps are used. Frontiers above 4096 nodes are
/// thinned to one node per 1/65536 cell.
pub fn connect_word(
    family: &FiberFamily,
    x: f64,
    target: &Arc,
    depth_cap: usize,
    inverse: bool,
) -> Option<Vec<Symbol>> {
    if target.contains(x) {
        return Some(Vec::new());
    }
    let mut frontier: Vec<(Vec<Symbol>, f64)> = vec![(Vec::new(), x)];
    for _ in 0..depth_cap {
        let mut next = Vec::with_capacity(frontier.len() * family.n_symbols());
        for (w, y) in &frontier {
            for s in 1..=family.n_symbols() as Symbol {
                let z = if inverse { family.apply_inverse(s, *y) } else { family.map(s).eval(*y) };
                let mut w2 = w.clone();
                w2.push(s);
                if target.contains(z) {
                    return Some(w2);
                }
                next.push((w2, z));
            }
        }
        if next.len() > 4096 {
            let mut seen = std::collections::HashSet::new();
            next.retain(|(_, z)| seen.insert((z * 65536.0) as u32));
        }
        frontier = next;
    }
    None
}

/// Forward and backward connecting words from a grid of the circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectTable {
    pub target: Arc,
    pub grid: usize,
    pub forward: Vec<Vec<Symbol>>,
    pub backward: Vec<Vec<Symbol>>,
    pub m_c: usize,
}

pub fn connect_table(
    family: &FiberFamily,
    target: &Arc,
    grid: usize,
    depth_cap: usize,
) -> Result<ConnectTable, BlendingError> {
    let rows: Vec<Result<(Vec<Symbol>, Vec<Symbol>), BlendingError>> = (0..grid)
        .into_par_iter()
        .map(|k| {
            let x = k as f64 / grid as f64;
            let f = connect_word(family, x, target, depth_cap, false)
                .ok_or(BlendingError::NoConnection { x, depth: depth_cap })?;
            let b = connect_word(family, x, target, depth_cap, true)
                .ok_or(BlendingError::NoConnection { x, depth: depth_cap })?;
            Ok((f, b))
        })
        .collect();
    let mut forward = Vec::with_capacity(grid);
    let mut backward = Vec::with_capacity(grid);
    for r in rows {
        let (f, b) = r?;
        forward.push(f);
        backward.push(b);
    }
    let m_c = forward.iter().chain(&backward).map(|w| w.len()).max().unwrap_or(0);
    Ok(ConnectTable { target: *target, grid, forward, backward, m_c })
}

/// Fast forward connection into `I` for arbitrary points: the words of the two
/// neighbouring grid points of a fine table are tried first (landing must be
/// re-verified), then a direct search.
#[derive(Clone, Debug)]
pub struct ConnectLookup {
    accept: Arc,
    landing: Arc,
    grid: usize,
    words: Vec<Vec<Symbol>>,
    /// Log-derivative of each word at its grid point.
    logd: Vec<f64>,
    depth_cap: usize,
    pub m_c: usize,
}

impl ConnectLookup {
    pub fn build(family: &FiberFamily, blending: &BlendingInterval, grid: usize, depth_cap: usize) -> Result<Self, BlendingError> {
        let landing = blending.landing();
        let words: Vec<Option<Vec<Symbol>>> = (0..grid)
            .into_par_iter()
            .map(|k| connect_word(family, k as f64 / grid as f64, &landing, depth_cap, false))
            .collect();
        let mut out = Vec::with_capacity(grid);
        for (k, w) in words.into_iter().enumerate() {
            out.push(w.ok_or(BlendingError::NoConnection { x: k as f64 / grid as f64, depth: depth_cap })?);
        }
        let m_c = out.iter().map(|w| w.len()).max().unwrap_or(0);
        let logd = out.iter().enumerate().map(|(k, w)| family.apply(w, k as f64 / grid as f64).1).collect();
        Ok(ConnectLookup { accept: blending.i(), landing, grid, words: out, logd, depth_cap, m_c })
    }

    /// Length and log-derivative of the table word at the grid point below `y`.
    pub fn estimate(&self, y: f64) -> (usize, f64) {
        if self.landing.contains(y) {
            return (0, 0.0);
        }
        let k = ((y * self.grid as f64).floor() as usize) % self.grid;
        (self.words[k].len(), self.logd[k])
    }

    /// Connecting word for `y` and the log-derivative it contributes.
    pub fn connect(&self, family: &FiberFamily, y: f64) -> Option<(Vec<Symbol>, f64)> {
        if self.landing.contains(y) {
            return Some((Vec::new(), 0.0));
        }
        let c = self.landing.center();
        let g = y * self.grid as f64;
        let lo = (g.floor() as usize) % self.grid;
        let hi = (lo + 1) % self.grid;
        let mut best: Option<(f64, usize, f64)> = None;
        for k in [lo, hi] {
            let (z, l) = family.apply(&self.words[k], y);
            if self.accept.contains(z) {
                let d = circle_dist(z, c);
                if best.map_or(true, |b| d < b.0) {
                    best = Some((d, k, l));
                }
            }
        }
        if let Some((_, k, l)) = best {
            return Some((self.words[k].clone(), l));
        }
        let w = connect_word(family, y, &self.landing, self.depth_cap, false)?;
        let l = family.apply(&w, y).1;
        Some((w, l))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendingConfig {
    /// Fixed delta; when absent the `deltas` list is scanned for the smallest L1.
    pub delta: Option<f64>,
    pub deltas: Vec<f64>,
    pub depth_cap: usize,
    pub beam: usize,
    pub grid: usize,
    pub connect_depth: usize,
    /// Lengths `|H| = |J| 2^-j` probed for each centre.
    pub h_levels: Vec<u32>,
}

impl Default for BlendingConfig {
    fn default() -> Self {
        BlendingConfig {
            delta: None,
            deltas: (4..=8).map(|k| 2f64.powi(-k)).collect(),
            depth_cap: 64,
            beam: 16,
            grid: 256,
            connect_depth: 16,
            h_levels: vec![1, 4, 8, 12, 16, 20],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub center: f64,
    pub h_len: f64,
    pub length: usize,
    pub min_log_deriv: f64,
}

/// Blending constants common to a cover of the circle by intervals `J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendingReport {
    pub label: String,
    pub delta: f64,
    pub centers: Vec<f64>,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    #[serde(rename = "K4")]
    pub k4: f64,
    #[serde(rename = "K5")]
    pub k5: f64,
    #[serde(rename = "K6")]
    pub k6: f64,
    pub m_c: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    pub norm_bound: f64,
    pub scanned: Vec<(f64, f64)>,
    pub certificates: Vec<CertificateSummary>,
}

impl BlendingReport {
    /// The interval of the cover at `center` with the common constants.
    pub fn interval(&self, center: f64) -> BlendingInterval {
        BlendingInterval {
            center,
            delta: self.delta,
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            k4: self.k4,
            k5: self.k5,
            k6: self.k6,
            m_c: self.m_c,
            l1: self.l1,
        }
    }
}

/// Smallest L1 over `K2` among the slopes of the upper hull of the
/// `(|log|H||, l)` points, with `K3 = max(l - K2 |log|H||, 0)`.
pub fn fit_k2_k3(points: &[(f64, usize)], delta: f64, m_c: usize) -> (f64, f64) {
    let mut by_a: Vec<(f64, f64)> = Vec::new();
    for &(a, l) in points {
        match by_a.iter_mut().find(|p| (p.0 - a).abs() < 1e-12) {
            Some(p) => p.1 = p.1.max(l as f64),
            None => by_a.push((a, l as f64)),
        }
    }
    let mut slopes: Vec<f64> = by_a
        .iter()
        .filter(|p| p.0 > 0.0)
        .map(|p| p.1 / p.0)
        .collect();
    for (i, p) in by_a.iter().enumerate() {
        for q in &by_a[i + 1..] {
            if (p.0 - q.0).abs() > 1e-12 {
                let s = (p.1 - q.1) / (p.0 - q.0);
                if s > 0.0 {
                    slopes.push(s);
                }
            }
        }
    }
    slopes.sort_by(f64::total_cmp);
    let mut best = (f64::INFINITY, 1.0, 0.0);
    for k2 in slopes {
        let k3 = by_a.iter().map(|p| p.1 - k2 * p.0).fold(0.0, f64::max);
        let l1 = constant_l1(k2, k3, delta, m_c);
        if l1 < best.0 - 1e-12 {
            best = (l1, k2, k3);
        }
    }
    (best.1, best.2)
}

fn cover_centers(delta: f64) -> Vec<f64> {
    let count = (1.0 / (2.0 * delta)).round().max(1.0) as usize;
    (0..count).map(|k| k as f64 / count as f64).collect()
}

fn certify_delta(family: &FiberFamily, cfg: &BlendingConfig, delta: f64) -> Result<BlendingReport, BlendingError> {
    if !(delta > 0.0 && delta < 0.125) {
        return Err(BlendingError::BadParameter(format!("delta {delta}")));
    }
    let centers = cover_centers(delta);
    let k4 = delta / 2.0;
    let jobs: Vec<(f64, Arc)> = centers
        .iter()
        .flat_map(|&c| {
            let j = Arc::centered(c, 2.0 * delta);
            cfg.h_levels.iter().flat_map(move |&lev| {
                let len = j.len * 2f64.powi(-(lev as i32));
                [
                    (c, Arc::new(j.lo, len)),
                    (c, Arc::centered(c, len / 2.0)),
                    (c, Arc::new(j.lo + j.len - len, len)),
                ]
            })
        })
        .collect();
    let certs: Vec<Result<(f64, ExpansionCertificate), BlendingError>> = jobs
        .par_iter()
        .map(|(c, h)| {
            let j = Arc::centered(*c, 2.0 * delta);
            let target = Arc::centered(*c, 2.0 * delta + k4);
            cec_search(family, h, &j, &target, cfg.depth_cap, cfg.beam).map(|e| (*c, e))
        })
        .collect();
    let mut summaries = Vec::with_capacity(certs.len());
    for r in certs {
        let (c, e) = r?;
        summaries.push(CertificateSummary { center: c, h_len: e.h.len, length: e.len(), min_log_deriv: e.min_log_deriv });
    }
    let tables: Vec<Result<usize, BlendingError>> = centers
        .par_iter()
        .map(|&c| connect_table(family, &Arc::centered(c, delta / 2.0), cfg.grid, cfg.connect_depth).map(|t| t.m_c))
        .collect();
    let mut m_c = 0;
    for t in tables {
        m_c = m_c.max(t?);
    }
    let pts: Vec<(f64, usize)> = summaries.iter().map(|s| (s.h_len.ln().abs(), s.length)).collect();
    let (k2, k3) = fit_k2_k3(&pts, delta, m_c);
    let k5 = summaries
        .iter()
        .map(|s| s.min_log_deriv / s.length as f64)
        .fold(f64::INFINITY, f64::min);
    Ok(BlendingReport {
        label: format!("empirical (depth cap {}, grid {})", cfg.depth_cap, cfg.grid),
        delta,
        centers,
        k1: 4.0 * delta,
        k2,
        k3,
        k4,
        k5,
        k6: 4.0 * delta,
        m_c,
        l1: constant_l1(k2, k3, delta, m_c),
        norm_bound: family.norm_bound(),
        scanned: Vec::new(),
        certificates: summaries,
    })
}

/// Computes common blending constants over a cover of the circle, scanning
/// delta when it is not fixed.
pub fn certify_blending(family: &FiberFamily, cfg: &BlendingConfig) -> Result<BlendingReport, BlendingError> {
    let deltas = match cfg.delta {
        Some(d) => vec![d],
        None => cfg.deltas.clone(),
    };
    let mut best: Option<BlendingReport> = None;
    let mut scanned = Vec::new();
    let mut last_err = None;
    for d in deltas {
        match certify_delta(family, cfg, d) {
            Ok(r) => {
                scanned.push((d, r.l1));
                if best.as_ref().map_or(true, |b| r.l1 < b.l1) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let mut best = match (best, last_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => return Err(BlendingError::BadParameter("no delta to try".into())),
    };
    best.scanned = scanned;
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitivityReport {
    pub horizons: Vec<usize>,
    /// Worst (over sampled points) largest gap of the forward orbit cloud.
    pub forward_mesh: Vec<f64>,
    pub backward_mesh: Vec<f64>,
}

fn largest_gap(mut pts: Vec<f64>) -> f64 {
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.len() < 2 {
        return 1.0;
    }
    let mut g = 1.0 - pts[pts.len() - 1] + pts[0];
    for p in pts.windows(2) {
        g = g.max(p[1] - p[0]);
    }
    g
}

/// Mesh of `{f_w(x) : |w| <= h}` (and of the inverse orbit) for `h = 1..=horizon`.
pub fn transitivity_probe(family: &FiberFamily, samples: &[f64], horizon: usize) -> TransitivityReport {
    let cloud = |x: f64, inverse: bool| -> Vec<f64> {
        let mut meshes = Vec::with_capacity(horizon);
        let mut all = vec![x];
        let mut level = vec![x];
        for _ in 0..horizon {
            let mut next = Vec::with_capacity(level.len() * family.n_symbols());
            for &y in &level {
                for s in 1..=family.n_symbols() as Symbol {
                    next.push(if inverse { family.apply_inverse(s, y) } else { family.map(s).eval(y) });
                }
            }
            if next.len() > 16384 {
                let stride = next.len() / 16384 + 1;
                next = next.into_iter().step_by(stride).collect();
            }
            all.extend_from_slice(&next);
            meshes.push(largest_gap(all.clone()));
            level = next;
        }
        meshes
    };
    let mut forward_mesh = vec![0.0f64; horizon];
    let mut backward_mesh = vec![0.0f64; horizon];
    for &x in samples {
        for (m, v) in forward_mesh.iter_mut().zip(cloud(x, false)) {
            *m = m.max(v);
        }
        for (m, v) in backward_mesh.iter_mut().zip(cloud(x, true)) {
            *m = m.max(v);
        }
    }
    TransitivityReport { horizons: (1..=horizon).collect(), forward_mesh, backward_mesh }
}
