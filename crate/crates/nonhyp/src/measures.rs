//! Birkhoff statistics along orbits of cascade levels: exponents,
//! concentration of averages and weak-star diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cifs::WordSource;
use crate::codes::Symbol;
use crate::fiber::{circle_dist, FiberFamily};
use crate::observable::Observable;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSample {
    pub seed: u64,
    /// Point reached through the backward window.
    pub start: f64,
    pub symbols: Vec<Symbol>,
    /// `xs[k]` is the fiber point before reading `symbols[k]`.
    pub xs: Vec<f64>,
    pub log_deriv: f64,
}

impl OrbitSample {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn birkhoff_average(&self, phi: &Observable) -> f64 {
        let s: f64 = self.symbols.iter().zip(&self.xs).map(|(&a, &x)| phi.eval(a, x)).sum();
        s / self.len() as f64
    }

    /// Largest discrepancy between the stored trajectory and a fresh evaluation
    /// at `checks` evenly spaced positions.
    pub fn spot_check(&self, family: &FiberFamily, checks: usize) -> f64 {
        let step = (self.len() / checks.max(1)).max(1);
        (0..self.len().saturating_sub(1))
            .step_by(step)
            .map(|k| circle_dist(family.step(self.symbols[k], self.xs[k]).0, self.xs[k + 1]))
            .fold(0.0, f64::max)
    }
}

/// Orbit of i.i.d. codewords of length `length`, started at the image of `x0`
/// under `back_words` earlier codewords.
pub fn sample_orbit(
    family: &FiberFamily,
    source: &dyn WordSource,
    x0: f64,
    back_words: usize,
    length: usize,
    seed_root: u64,
    index: u64,
) -> OrbitSample {
    let mut rng = seed::rng(seed_root, 0x0b17, index);
    let mut x = x0;
    for _ in 0..back_words {
        x = family.apply(&source.sample(&mut rng), x).0;
    }
    let start = x;
    let mut symbols = Vec::with_capacity(length);
    let mut xs = Vec::with_capacity(length);
    let mut l = 0.0;
    while symbols.len() < length {
        for s in source.sample(&mut rng) {
            if symbols.len() == length {
                break;
            }
            xs.push(x);
            symbols.push(s);
            let (y, d) = family.step(s, x);
            x = y;
            l += d;
        }
    }
    OrbitSample { seed: seed::derive(seed_root, 0x0b17, index), start, symbols, xs, log_deriv: l }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sem: f64,
}

fn mean_sem(v: &[f64]) -> Estimate {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Estimate { mean, sem: (var / n).sqrt() }
}

/// Mean per-step log-derivative over `trials` orbits of length `length`.
pub fn exponent_of_level(
    family: &FiberFamily,
    source: &dyn WordSource,
    x0: f64,
    back_words: usize,
    trials: usize,
    length: usize,
    seed_root: u64,
) -> Estimate {
    let v: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| sample_orbit(family, source, x0, back_words, length, seed_root, t as u64).log_deriv / length as f64)
        .collect();
    mean_sem(&v)
}

fn block_sums(family: &FiberFamily, x: f64, word: &[Symbol], battery: &[Observable]) -> (Vec<f64>, f64) {
    let mut x = x;
    let mut sums = vec![0.0; battery.len()];
    for &s in word {
        for (acc, phi) in sums.iter_mut().zip(battery) {
            *acc += phi.eval(s, x);
        }
        x = family.step(s, x).0;
    }
    (sums, word.len() as f64)
}

fn ratio_estimates(rows: &[(Vec<f64>, f64)], n_obs: usize) -> Vec<Estimate> {
    let den: f64 = rows.iter().map(|r| r.1).sum();
    let mean_len = den / rows.len() as f64;
    (0..n_obs)
        .map(|i| {
            let num: f64 = rows.iter().map(|r| r.0[i]).sum();
            let ratio = num / den;
            // delta method for a ratio of means
            let resid: Vec<f64> = rows.iter().map(|r| (r.0[i] - ratio * r.1) / mean_len).collect();
            Estimate { mean: ratio, sem: mean_sem(&resid).sem }
        })
        .collect()
}

/// Ratio estimate of `int phi dmu` for the measure carried by i.i.d.
/// codewords: sum of `phi` over whole words divided by their total length,
/// one word per block, blocks started after `back_words` words.
pub fn integral_estimate(
    family: &FiberFamily,
    source: &dyn WordSource,
    x0: f64,
    back_words: usize,
    battery: &[Observable],
    blocks: usize,
    seed_root: u64,
) -> Vec<Estimate> {
    let rows: Vec<(Vec<f64>, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed_root, 0x1e6, b as u64);
            let mut x = x0;
            for _ in 0..back_words {
                x = family.apply(&source.sample(&mut rng), x).0;
            }
            block_sums(family, x, &source.sample(&mut rng), battery)
        })
        .collect();
    ratio_estimates(&rows, battery.len())
}

/// As [`integral_estimate`], but every word of `words` (an i.i.d. sample of
/// the code) is measured exactly once, so the error bar covers the sampling
/// of the pool itself.
pub fn integral_over_words(
    family: &FiberFamily,
    source: &dyn WordSource,
    words: &[Vec<Symbol>],
    x0: f64,
    back_words: usize,
    battery: &[Observable],
    seed_root: u64,
) -> Vec<Estimate> {
    let rows: Vec<(Vec<f64>, f64)> = words
        .par_iter()
        .enumerate()
        .map(|(b, w)| {
            let mut rng = seed::rng(seed_root, 0x1e6, b as u64);
            let mut x = x0;
            for _ in 0..back_words {
                x = family.apply(&source.sample(&mut rng), x).0;
            }
            block_sums(family, x, w, battery)
        })
        .collect();
    ratio_estimates(&rows, battery.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffReport {
    pub observable: Observable,
    pub name: String,
    pub horizon: usize,
    pub eps: f64,
    pub reference: Estimate,
    pub averages: Vec<f64>,
    pub within: usize,
    pub fraction: f64,
    pub passed: bool,
}

/// Birkhoff averages over windows of length `horizon` that start at codeword
/// boundaries of the level whose words `source` draws, compared with
/// `reference`. One orbit per trial serves the whole battery.
#[allow(clippy::too_many_arguments)]
pub fn birkhoff_concentration(
    family: &FiberFamily,
    source: &dyn WordSource,
    x0: f64,
    back_words: usize,
    horizon: usize,
    battery: &[Observable],
    reference: &[Estimate],
    eps: f64,
    trials: usize,
    seed_root: u64,
) -> Vec<BirkhoffReport> {
    let avgs: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let o = sample_orbit(family, source, x0, back_words, horizon, seed_root, t as u64);
            battery.iter().map(|phi| o.birkhoff_average(phi)).collect()
        })
        .collect();
    battery
        .iter()
        .enumerate()
        .map(|(i, phi)| {
            let averages: Vec<f64> = avgs.iter().map(|a| a[i]).collect();
            let r = reference[i];
            let within = averages.iter().filter(|&&a| (a - r.mean).abs() < eps).count();
            let fraction = within as f64 / trials as f64;
            BirkhoffReport {
                observable: *phi,
                name: phi.name(),
                horizon,
                eps,
                reference: r,
                averages,
                within,
                fraction,
                passed: fraction > 1.0 - eps,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakStarDiagnostic {
    pub battery: Vec<String>,
    /// `integrals[n][i]` for level `n` and observable `i`.
    pub integrals: Vec<Vec<Estimate>>,
    /// `|int phi_i dmu_n - int phi_i dmu_(n-1)|` with its standard error, for `n >= 1`.
    pub differences: Vec<Vec<Estimate>>,
    /// Per observable: every difference is below the previous one plus three standard errors.
    pub decaying: Vec<bool>,
}

impl WeakStarDiagnostic {
    pub fn passed(&self) -> bool {
        self.decaying.iter().all(|&b| b)
    }
}

pub fn weakstar_diagnostic(integrals: Vec<Vec<Estimate>>, battery: &[Observable]) -> WeakStarDiagnostic {
    let differences: Vec<Vec<Estimate>> = integrals
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| Estimate { mean: (b.mean - a.mean).abs(), sem: (a.sem.powi(2) + b.sem.powi(2)).sqrt() })
                .collect()
        })
        .collect();
    let decaying = (0..battery.len())
        .map(|i| {
            differences.windows(2).all(|d| {
                let (p, q) = (d[0][i], d[1][i]);
                q.mean <= p.mean + 3.0 * (p.sem.powi(2) + q.sem.powi(2)).sqrt()
            })
        })
        .collect();
    WeakStarDiagnostic { battery: battery.iter().map(|p| p.name()).collect(), integrals, differences, decaying }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cifs::UniformWords;
    use crate::fiber::{FiberMap, NorthSouth, Rotation};

    fn rotations() -> FiberFamily {
        FiberFamily::new(vec![FiberMap::Rotation(Rotation { shift: 0.1 }), FiberMap::Rotation(Rotation { shift: 0.3 })]).unwrap()
    }

    #[test]
    fn single_word_orbit_is_periodic() {
        let f = FiberFamily::new(vec![FiberMap::NorthSouth(NorthSouth::new(0.5).unwrap()), FiberMap::Rotation(Rotation { shift: 0.5 })]).unwrap();
        let words = vec![vec![1u8, 2]];
        // the word has an attracting orbit of period two through 0 and 1/2
        let o = sample_orbit(&f, &UniformWords(&words), 0.3, 400, 10, 1, 0);
        assert_eq!(o.symbols, vec![1, 2, 1, 2, 1, 2, 1, 2, 1, 2]);
        assert!(circle_dist(o.start, 0.0).min(circle_dist(o.start, 0.5)) < 1e-9);
        for k in 4..10 {
            assert!(circle_dist(o.xs[k], o.xs[k - 4]) < 1e-9);
        }
        assert!(o.spot_check(&f, 5) < 1e-12);
    }

    #[test]
    fn isometries() {
        let f = rotations();
        let words = vec![vec![1u8], vec![2, 2]];
        let o = sample_orbit(&f, &UniformWords(&words), 0.0, 2, 50, 3, 1);
        for k in 1..o.len() {
            assert!(circle_dist(o.xs[k], o.xs[k - 1]) <= 0.3 + 1e-12);
        }
        let e = exponent_of_level(&f, &UniformWords(&words), 0.0, 2, 10, 50, 3);
        assert_eq!(e.mean, 0.0);
        let again = sample_orbit(&f, &UniformWords(&words), 0.0, 2, 50, 3, 1);
        assert_eq!(o, again);
    }

    #[test]
    fn constant_observable_concentrates() {
        let f = rotations();
        let words = vec![vec![1u8], vec![2, 1]];
        let c = [Observable::Constant { value: 2.0 }];
        let r = integral_estimate(&f, &UniformWords(&words), 0.0, 1, &c, 200, 1);
        assert!((r[0].mean - 2.0).abs() < 1e-12);
        let b = birkhoff_concentration(&f, &UniformWords(&words), 0.0, 1, 7, &c, &r, 0.01, 100, 2);
        assert_eq!(b[0].fraction, 1.0);
        let w = weakstar_diagnostic(vec![r.clone(), r.clone(), r], &c);
        assert!(w.differences.iter().all(|d| d[0].mean == 0.0));
        assert!(w.passed());
    }

    #[test]
    fn indicator_integral() {
        // words (1) and (2,2): the frequency of symbol 1 is 1/3
        let f = rotations();
        let words = vec![vec![1u8], vec![2, 2]];
        let ind = [Observable::SymbolIndicator { symbol: 1 }];
        let r = integral_estimate(&f, &UniformWords(&words), 0.0, 0, &ind, 20_000, 5);
        assert!((r[0].mean - 1.0 / 3.0).abs() < 4.0 * r[0].sem + 1e-9, "{r:?}");
        // each word once: exactly 1/3
        let once = integral_over_words(&f, &UniformWords(&words), &words, 0.0, 1, &ind, 5);
        assert!((once[0].mean - 1.0 / 3.0).abs() < 1e-15);
    }
}
