//! Circle fiber maps, word compositions, SL(2,R) cocycles and their exponents.
//!
//! Generic maps act on the circle `[0,1)`. Projective maps act on the angle
//! `theta in [0,pi)` of a line, stored as `t = theta/pi in [0,1)`; since this
//! is a linear rescaling the derivative in `t` equals the derivative in `theta`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codes::Symbol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberError {
    #[error("matrix determinant {det} is not 1")]
    NotSl2 { det: f64 },
    #[error("matrix is not hyperbolic (trace {trace})")]
    NotHyperbolic { trace: f64 },
    #[error("exponent estimate not stable: {at_half} at n/2 vs {at_full} at n")]
    Inconclusive { at_half: f64, at_full: f64 },
    #[error("a family needs at least two maps")]
    TooFewMaps,
    #[error("invalid map parameter: {0}")]
    BadParameter(String),
}

/// Orientation preserving circle diffeomorphism.
pub trait CircleMap {
    fn eval(&self, x: f64) -> f64;
    fn deriv(&self, x: f64) -> f64;
    fn inverse(&self, x: f64) -> f64;
    /// Bound on `|f'|` and `|(f^-1)'|`.
    fn norm_bound(&self) -> f64;
    /// Image and `log f'(x)`.
    fn eval_log_deriv(&self, x: f64) -> (f64, f64) {
        (self.eval(x), self.deriv(x).ln())
    }
}

#[inline]
pub(crate) fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Circle distance on `[0,1)`.
#[inline]
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Matrix2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl From<[f64; 4]> for Matrix2 {
    fn from(e: [f64; 4]) -> Self {
        Matrix2 { a: e[0], b: e[1], c: e[2], d: e[3] }
    }
}

impl From<Matrix2> for [f64; 4] {
    fn from(m: Matrix2) -> Self {
        [m.a, m.b, m.c, m.d]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixClass {
    Hyperbolic,
    Elliptic,
    Parabolic,
}

pub const DET_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;

impl Matrix2 {
    /// Checked SL(2,R) constructor.
    pub fn sl2(a: f64, b: f64, c: f64, d: f64) -> Result<Self, FiberError> {
        let m = Matrix2 { a, b, c, d };
        let det = m.det();
        if (det - 1.0).abs() > DET_TOL {
            return Err(FiberError::NotSl2 { det });
        }
        Ok(m)
    }

    pub fn diag(l: f64) -> Self {
        Matrix2 { a: l, b: 0.0, c: 0.0, d: 1.0 / l }
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Matrix2 { a: c, b: -s, c: s, d: c }
    }

    pub fn identity() -> Self {
        Matrix2 { a: 1.0, b: 0.0, c: 0.0, d: 1.0 }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn mul(&self, o: &Matrix2) -> Matrix2 {
        Matrix2 {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    /// Inverse of a determinant-one matrix.
    pub fn inverse(&self) -> Matrix2 {
        let det = self.det();
        Matrix2 { a: self.d / det, b: -self.b / det, c: -self.c / det, d: self.a / det }
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.c * v[0] + self.d * v[1]]
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }

    pub fn scaled(&self, s: f64) -> Matrix2 {
        Matrix2 { a: self.a * s, b: self.b * s, c: self.c * s, d: self.d * s }
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        let s = self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d;
        let det = self.det();
        let disc = (s * s - 4.0 * det * det).max(0.0);
        ((s + disc.sqrt()) / 2.0).sqrt()
    }

    pub fn classify(&self) -> MatrixClass {
        let t = self.trace().abs();
        if (t - 2.0).abs() <= TRACE_TOL {
            MatrixClass::Parabolic
        } else if t > 2.0 {
            MatrixClass::Hyperbolic
        } else {
            MatrixClass::Elliptic
        }
    }
}

pub fn classify(m: &Matrix2) -> MatrixClass {
    m.classify()
}

/// Unit vector of the line with parameter `t`.
#[inline]
pub fn line_vector(t: f64) -> [f64; 2] {
    let (s, c) = (PI * t).sin_cos();
    [c, s]
}

/// Parameter `t in [0,1)` of the line spanned by `v`.
#[inline]
pub fn line_param(v: [f64; 2]) -> f64 {
    wrap(v[1].atan2(v[0]).rem_euclid(PI) / PI)
}

/// Projective action of an SL(2,R) matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix2", into = "Matrix2")]
pub struct ProjectiveMap {
    pub matrix: Matrix2,
    inv: Matrix2,
}

impl ProjectiveMap {
    pub fn new(matrix: Matrix2) -> Result<Self, FiberError> {
        Matrix2::sl2(matrix.a, matrix.b, matrix.c, matrix.d)?;
        Ok(ProjectiveMap { matrix, inv: matrix.inverse() })
    }
}

impl TryFrom<Matrix2> for ProjectiveMap {
    type Error = FiberError;
    fn try_from(m: Matrix2) -> Result<Self, FiberError> {
        ProjectiveMap::new(m)
    }
}

impl From<ProjectiveMap> for Matrix2 {
    fn from(p: ProjectiveMap) -> Self {
        p.matrix
    }
}

impl CircleMap for ProjectiveMap {
    fn eval(&self, t: f64) -> f64 {
        line_param(self.matrix.apply(line_vector(t)))
    }

    fn deriv(&self, t: f64) -> f64 {
        let w = self.matrix.apply(line_vector(t));
        1.0 / (w[0] * w[0] + w[1] * w[1])
    }

    fn inverse(&self, t: f64) -> f64 {
        line_param(self.inv.apply(line_vector(t)))
    }

    fn norm_bound(&self) -> f64 {
        let s = self.matrix.op_norm();
        s * s
    }

    #[inline]
    fn eval_log_deriv(&self, t: f64) -> (f64, f64) {
        let w = self.matrix.apply(line_vector(t));
        (line_param(w), -(w[0] * w[0] + w[1] * w[1]).ln())
    }
}

/// Rigid rotation `x -> x + shift`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub shift: f64,
}

impl CircleMap for Rotation {
    fn eval(&self, x: f64) -> f64 {
        wrap(x + self.shift)
    }
    fn deriv(&self, _x: f64) -> f64 {
        1.0
    }
    fn inverse(&self, x: f64) -> f64 {
        wrap(x - self.shift)
    }
    fn norm_bound(&self) -> f64 {
        1.0
    }
    fn eval_log_deriv(&self, x: f64) -> (f64, f64) {
        (self.eval(x), 0.0)
    }
}

/// `x -> x + a/(2 pi) sin(2 pi x)`, `|a| < 1`: fixed points 0 and 1/2 with
/// derivatives `1+a` and `1-a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NorthSouth {
    pub a: f64,
}

impl NorthSouth {
    pub fn new(a: f64) -> Result<Self, FiberError> {
        if !(a.abs() < 1.0) {
            return Err(FiberError::BadParameter(format!("north-south parameter {a}")));
        }
        Ok(NorthSouth { a })
    }

    fn lift(&self, x: f64) -> f64 {
        x + self.a / (2.0 * PI) * (2.0 * PI * x).sin()
    }
}

impl CircleMap for NorthSouth {
    fn eval(&self, x: f64) -> f64 {
        wrap(self.lift(x))
    }
    fn deriv(&self, x: f64) -> f64 {
        1.0 + self.a * (2.0 * PI * x).cos()
    }
    fn inverse(&self, y: f64) -> f64 {
        // the lift is increasing and fixes 0, so invert on [0,1) by Newton with bisection guard
        let y = wrap(y);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = y;
        for _ in 0..100 {
            let fx = self.lift(x) - y;
            if fx.abs() < 1e-15 {
                break;
            }
            if fx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let nx = x - fx / self.deriv(x);
            x = if nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
        }
        wrap(x)
    }
    fn norm_bound(&self) -> f64 {
        (1.0 + self.a.abs()).max(1.0 / (1.0 - self.a.abs()))
    }
}

/// One fiber map of a family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FiberMap {
    Projective(ProjectiveMap),
    Rotation(Rotation),
    NorthSouth(NorthSouth),
}

impl CircleMap for FiberMap {
    fn eval(&self, x: f64) -> f64 {
        match self {
            FiberMap::Projective(m) => m.eval(x),
            FiberMap::Rotation(m) => m.eval(x),
            FiberMap::NorthSouth(m) => m.eval(x),
        }
    }
    fn deriv(&self, x: f64) -> f64 {
        match self {
            FiberMap::Projective(m) => m.deriv(x),
            FiberMap::Rotation(m) => m.deriv(x),
            FiberMap::NorthSouth(m) => m.deriv(x),
        }
    }
    fn inverse(&self, x: f64) -> f64 {
        match self {
            FiberMap::Projective(m) => m.inverse(x),
            FiberMap::Rotation(m) => m.inverse(x),
            FiberMap::NorthSouth(m) => m.inverse(x),
        }
    }
    fn norm_bound(&self) -> f64 {
        match self {
            FiberMap::Projective(m) => m.norm_bound(),
            FiberMap::Rotation(m) => m.norm_bound(),
            FiberMap::NorthSouth(m) => m.norm_bound(),
        }
    }
    #[inline]
    fn eval_log_deriv(&self, x: f64) -> (f64, f64) {
        match self {
            FiberMap::Projective(m) => m.eval_log_deriv(x),
            FiberMap::Rotation(m) => m.eval_log_deriv(x),
            FiberMap::NorthSouth(m) => m.eval_log_deriv(x),
        }
    }
}

/// The N fiber maps of a step skew product; symbol `i` uses `maps[i-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiberFamily {
    maps: Vec<FiberMap>,
}

impl FiberFamily {
    pub fn new(maps: Vec<FiberMap>) -> Result<Self, FiberError> {
        if maps.len() < 2 {
            return Err(FiberError::TooFewMaps);
        }
        Ok(FiberFamily { maps })
    }

    /// Projective family of a cocycle.
    pub fn projective(matrices: &[Matrix2]) -> Result<Self, FiberError> {
        let maps = matrices
            .iter()
            .map(|&m| ProjectiveMap::new(m).map(FiberMap::Projective))
            .collect::<Result<Vec<_>, _>>()?;
        FiberFamily::new(maps)
    }

    pub fn maps(&self) -> &[FiberMap] {
        &self.maps
    }

    pub fn n_symbols(&self) -> usize {
        self.maps.len()
    }

    /// `||F||`.
    pub fn norm_bound(&self) -> f64 {
        self.maps.iter().map(|m| m.norm_bound()).fold(1.0, f64::max)
    }

    #[inline]
    pub fn map(&self, s: Symbol) -> &FiberMap {
        &self.maps[s as usize - 1]
    }

    #[inline]
    pub fn step(&self, s: Symbol, x: f64) -> (f64, f64) {
        self.map(s).eval_log_deriv(x)
    }

    /// `f_[w](x)` and `log (f_[w])'(x)`.
    #[inline]
    pub fn apply(&self, word: &[Symbol], x: f64) -> (f64, f64) {
        let mut y = x;
        let mut l = 0.0;
        for &s in word {
            let (z, d) = self.step(s, y);
            y = z;
            l += d;
        }
        (y, l)
    }

    pub fn apply_inverse(&self, s: Symbol, x: f64) -> f64 {
        self.map(s).inverse(x)
    }

    /// Log-Lipschitz modulus of `log f_i'` at scale `rho`, estimated on a grid.
    pub fn log_deriv_modulus(&self, rho: f64, grid: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for m in &self.maps {
            for k in 0..grid {
                let x = k as f64 / grid as f64;
                let a = m.deriv(x).ln();
                for y in [x + rho, x - rho, x + rho / 2.0, x - rho / 2.0] {
                    worst = worst.max((m.deriv(wrap(y)).ln() - a).abs());
                }
            }
        }
        worst
    }
}

/// Orbit of a point under a word with the cumulative log-derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    /// `points[k] = f^k(x)`, `k = 0..=|w|`.
    pub points: Vec<f64>,
    /// `log_derivs[k] = log |(f^k)'(x)|`, starting at 0.
    pub log_derivs: Vec<f64>,
}

impl Composition {
    pub fn image(&self) -> f64 {
        *self.points.last().unwrap()
    }
    pub fn log_deriv(&self) -> f64 {
        *self.log_derivs.last().unwrap()
    }
    pub fn deriv(&self) -> f64 {
        self.log_deriv().exp()
    }
}

pub fn compose_word(family: &FiberFamily, word: &[Symbol], x: f64) -> Composition {
    let mut points = Vec::with_capacity(word.len() + 1);
    let mut log_derivs = Vec::with_capacity(word.len() + 1);
    points.push(x);
    log_derivs.push(0.0);
    let (mut y, mut l) = (x, 0.0);
    for &s in word {
        let (z, d) = family.step(s, y);
        y = z;
        l += d;
        points.push(y);
        log_derivs.push(l);
    }
    Composition { points, log_derivs }
}

/// `(1/|w|) log |(f_[w])'(x)|`.
pub fn finite_time_exponent(family: &FiberFamily, word: &[Symbol], x: f64) -> f64 {
    assert!(!word.is_empty(), "empty word");
    family.apply(word, x).1 / word.len() as f64
}

/// Compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Renormalised product `A_{xi_{n-1}} ... A_{xi_0}`: returns the rescaled
/// matrix and the accumulated log of the scale factors.
pub fn cocycle_product(cocycle: &[Matrix2], xi: impl IntoIterator<Item = Symbol>, n: usize) -> (Matrix2, f64) {
    let mut p = Matrix2::identity();
    let mut acc = KahanSum::default();
    let mut count = 0;
    for s in xi.into_iter().take(n) {
        p = cocycle[s as usize - 1].mul(&p);
        let m = p.max_abs();
        p = p.scaled(1.0 / m);
        acc.add(m.ln());
        count += 1;
    }
    assert_eq!(count, n, "symbol stream shorter than the horizon");
    (p, acc.value())
}

/// `(1/n) log ||A_{xi_{n-1}} ... A_{xi_0}||`.
pub fn lyapunov_upper(cocycle: &[Matrix2], xi: impl IntoIterator<Item = Symbol>, n: usize) -> f64 {
    assert!(n >= 1);
    let (p, acc) = cocycle_product(cocycle, xi, n);
    (p.op_norm().ln() + acc) / n as f64
}

/// Fiber exponent `(1/n) log |(f^n)'(t)|` of the projective cocycle at the
/// line `t`, computed by propagating the vector (rescaled every 16 steps).
pub fn projective_fiber_exponent(cocycle: &[Matrix2], xi: &[Symbol], t: f64) -> f64 {
    let mut v = line_vector(t);
    let mut acc = KahanSum::default();
    for chunk in xi.chunks(16) {
        for &s in chunk {
            v = cocycle[s as usize - 1].apply(v);
        }
        let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
        acc.add(nv.ln());
        v = [v[0] / nv, v[1] / nv];
    }
    -2.0 * acc.value() / xi.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictionaryReport {
    pub n: usize,
    pub lambda1: f64,
    pub lambda1_half: f64,
    /// True when `lambda1` is treated as zero.
    pub zero_exponent: bool,
    /// Most contracted line of the product, where the fiber derivative is maximal.
    pub v0: Option<f64>,
    /// Fiber exponent at `v0`; for SL(2,R) the smallest singular value is the
    /// reciprocal of the largest, so this equals `2 lambda1`.
    pub exponent_at_v0: Option<f64>,
    pub samples: Vec<(f64, f64)>,
    pub max_deviation: f64,
}

/// Checks the exponent dictionary of a projective cocycle along `xi`:
/// with `alpha = lambda1`, the fiber exponent is `2 alpha` at `v0` and
/// `-2 alpha` elsewhere, and all exponents vanish when `alpha = 0`.
pub fn exponent_dictionary_check(
    cocycle: &[Matrix2],
    xi: &[Symbol],
    n: usize,
    v_samples: &[f64],
    tol: f64,
) -> Result<DictionaryReport, FiberError> {
    let lambda1 = lyapunov_upper(cocycle, xi.iter().copied(), n);
    let lambda1_half = lyapunov_upper(cocycle, xi.iter().copied(), (n / 2).max(1));
    if (lambda1 - lambda1_half).abs() > tol {
        return Err(FiberError::Inconclusive { at_half: lambda1_half, at_full: lambda1 });
    }
    let zero_exponent = lambda1.abs() <= tol;
    let samples: Vec<(f64, f64)> = v_samples
        .iter()
        .map(|&t| (t, projective_fiber_exponent(cocycle, &xi[..n], t)))
        .collect();
    let (v0, exponent_at_v0) = if zero_exponent {
        (None, None)
    } else {
        let (p, _) = cocycle_product(cocycle, xi.iter().copied(), n);
        // rows of the rescaled product span the dominant right singular direction
        let r1 = [p.a, p.b];
        let r2 = [p.c, p.d];
        let top = if r1[0].hypot(r1[1]) >= r2[0].hypot(r2[1]) { r1 } else { r2 };
        let v0 = line_param([-top[1], top[0]]);
        (Some(v0), Some(2.0 * lambda1))
    };
    let max_deviation = samples
        .iter()
        .map(|&(_, e)| if zero_exponent { e.abs() } else { (e + 2.0 * lambda1).abs() })
        .fold(0.0, f64::max);
    Ok(DictionaryReport { n, lambda1, lambda1_half, zero_exponent, v0, exponent_at_v0, samples, max_deviation })
}

/// Arcs where the projective derivative is below 1 (`contracting`) and above 1
/// (`expanding`). An arc `(lo, hi)` with `lo > hi` wraps through 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRegions {
    pub contracting: Vec<(f64, f64)>,
    pub expanding: Vec<(f64, f64)>,
}

pub fn expansion_regions(matrix: &Matrix2, grid: usize) -> Result<ExpansionRegions, FiberError> {
    if matrix.classify() != MatrixClass::Hyperbolic {
        return Err(FiberError::NotHyperbolic { trace: matrix.trace() });
    }
    let pm = ProjectiveMap::new(*matrix)?;
    let signs: Vec<bool> = (0..grid)
        .map(|k| pm.deriv((k as f64 + 0.5) / grid as f64) > 1.0)
        .collect();
    // runs of equal sign, merged across the seam
    let mut runs: Vec<(usize, usize, bool)> = Vec::new();
    let mut start = 0;
    for k in 1..=grid {
        if k == grid || signs[k] != signs[start] {
            runs.push((start, k, signs[start]));
            start = k;
        }
    }
    if runs.len() > 1 && runs[0].2 == runs[runs.len() - 1].2 {
        let first = runs.remove(0);
        let last = runs.last_mut().unwrap();
        last.1 = first.1 + grid;
    }
    let mut out = ExpansionRegions { contracting: Vec::new(), expanding: Vec::new() };
    for (s, e, up) in runs {
        let arc = (s as f64 / grid as f64, wrap(e as f64 / grid as f64));
        if up {
            out.expanding.push(arc);
        } else {
            out.contracting.push(arc);
        }
    }
    Ok(out)
}
