//! Full run: measure statistics, skeleton, blending, initial CIFS, cascade,
//! suspension and orbit statistics, collected into one report.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::blending::{certify_blending, BlendingError, BlendingReport};
use crate::cascade::{
    entropy_lower_bound, roof_assumption_check, Cascade, CascadeError, EntropyBound, LevelSummary, RoofReport, RoofTable,
    TailSearch,
};
use crate::cifs::UniformWords;
use crate::config::{ConfigError, RunConfig};
use crate::measures::{
    birkhoff_concentration, exponent_of_level, integral_estimate, integral_over_words, weakstar_diagnostic, BirkhoffReport, Estimate,
    WeakStarDiagnostic,
};
use crate::seed;
use crate::skeleton::{build_initial_cifs, estimate_measure_stats, extract_skeleton, InitialCifs, Inequality, MeasureStats, Skeleton, SkeletonError};
use crate::suspension::{
    abramov_entropy_of, bernstein_horizon, large_dev_fraction, tail_mass_estimate, LargeDeviationReport, LevelMeans, RoofProfile,
    SuspensionStats,
};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ASSERTION: i32 = 2;
pub const EXIT_EXHAUSTED: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Measure,
    Skeleton,
    Blending,
    W0,
    Cascade,
    Suspension,
    Measures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub stage: Stage,
    pub name: String,
    #[serde(flatten)]
    pub inequality: Inequality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeLevelReport {
    pub summary: LevelSummary,
    pub roof: RoofTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    #[serde(rename = "L1")]
    pub l1: f64,
    pub levels: Vec<CascadeLevelReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelLargeDeviation {
    pub n: u32,
    /// `max |R - mean R|` over the (sampled) profile.
    #[serde(rename = "C")]
    pub c: f64,
    pub horizon: Option<usize>,
    pub report: Option<LargeDeviationReport>,
    /// The fraction the variance-free Bernstein bound predicts at `horizon`;
    /// reported, not asserted, since roofs with a wide spread violate it.
    pub predicted: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuspensionReport {
    pub levels: Vec<SuspensionStats>,
    pub roof: RoofReport,
    pub entropy: Vec<EntropyBound>,
    pub large_deviation: Vec<LevelLargeDeviation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub n: u32,
    pub length: usize,
    pub estimate: Estimate,
    pub band: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuresReport {
    pub exponents: Vec<ExponentReport>,
    pub weakstar: WeakStarDiagnostic,
    pub ell: usize,
    pub n: usize,
    pub horizon: usize,
    pub concentration: Vec<BirkhoffReport>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub version: String,
    pub config: RunConfig,
    pub measure: Option<MeasureStats>,
    pub skeleton: Option<Skeleton>,
    pub blending: Option<BlendingReport>,
    pub w0: Option<InitialCifs>,
    pub cascade: Option<CascadeReport>,
    pub suspension: Option<SuspensionReport>,
    pub measures: Option<MeasuresReport>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub failure: Option<Failure>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            measure: None,
            skeleton: None,
            blending: None,
            w0: None,
            cascade: None,
            suspension: None,
            measures: None,
            checks: Vec::new(),
            warnings: Vec::new(),
            failure: None,
        }
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.inequality.holds)
    }

    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.failed_checks().next().is_none()
    }

    pub fn exit_code(&self) -> i32 {
        match &self.failure {
            Some(f) => f.exit_code,
            None if self.passed() => EXIT_PASS,
            None => EXIT_ASSERTION,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Streams the JSON to `out` without building the string first.
    pub fn write_json<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(out);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()
    }

    fn check(&mut self, stage: Stage, name: impl Into<String>, inequality: Inequality) {
        self.checks.push(Check { stage, name: name.into(), inequality });
    }
}

fn blending_code(e: &BlendingError) -> i32 {
    match e {
        BlendingError::SearchExhausted { .. } | BlendingError::NoConnection { .. } => EXIT_EXHAUSTED,
        _ => EXIT_ASSERTION,
    }
}

fn skeleton_code(e: &SkeletonError) -> i32 {
    match e {
        SkeletonError::Blending(b) => blending_code(b),
        SkeletonError::BadMeasure(_) => EXIT_CONFIG,
        _ => EXIT_ASSERTION,
    }
}

fn cascade_code(e: &CascadeError) -> i32 {
    match e {
        CascadeError::SearchExhausted { .. } => EXIT_EXHAUSTED,
        CascadeError::BadParameter(_) => EXIT_CONFIG,
        _ => EXIT_ASSERTION,
    }
}

pub fn config_failure(config: RunConfig, e: &ConfigError) -> RunReport {
    let mut r = RunReport::new(config);
    r.failure = Some(Failure { stage: Stage::Measure, message: e.to_string(), exit_code: EXIT_CONFIG });
    r
}

/// Results of earlier runs. Skeleton and blending are reused as given; the
/// initial CIFS and the cascade are rebuilt and must match.
#[derive(Clone, Debug, Default)]
pub struct Prior {
    pub skeleton: Option<Skeleton>,
    pub blending: Option<BlendingReport>,
    pub w0: Option<InitialCifs>,
    pub cascade: Option<CascadeReport>,
}

impl Prior {
    pub fn from_report(r: &RunReport) -> Self {
        Prior { skeleton: r.skeleton.clone(), blending: r.blending.clone(), w0: r.w0.clone(), cascade: r.cascade.clone() }
    }
}

/// The blending stage alone.
pub fn run_blending(config: &RunConfig, prior: &Prior) -> RunReport {
    let mut report = RunReport::new(config.clone());
    if let Err(e) = config.validate() {
        return config_failure(config.clone(), &e);
    }
    let result = match &prior.blending {
        Some(b) => Ok(b.clone()),
        None => config.family.build().map_err(|e| (e.to_string(), EXIT_CONFIG)).and_then(|f| {
            certify_blending(&f, &config.blending.to_config()).map_err(|e| (e.to_string(), blending_code(&e)))
        }),
    };
    match result {
        Ok(b) => report.blending = Some(b),
        Err((message, exit_code)) => report.failure = Some(Failure { stage: Stage::Blending, message, exit_code }),
    }
    report
}

/// Runs every stage.
pub fn run_pipeline(config: &RunConfig) -> RunReport {
    run_until(config, Stage::Measures)
}

/// Runs the stages up to and including `last`. Stops at the first hard error,
/// keeping whatever was computed before it.
pub fn run_until(config: &RunConfig, last: Stage) -> RunReport {
    run_with(config, last, &Prior::default())
}

pub fn run_with(config: &RunConfig, last: Stage, prior: &Prior) -> RunReport {
    let mut report = RunReport::new(config.clone());
    if let Err(e) = config.validate() {
        return config_failure(config.clone(), &e);
    }
    if let Err((stage, message, exit_code)) = stages(config, last, prior, &mut report) {
        report.failure = Some(Failure { stage, message, exit_code });
    }
    report
}

type StageResult = Result<(), (Stage, String, i32)>;

fn stages(cfg: &RunConfig, last: Stage, prior: &Prior, report: &mut RunReport) -> StageResult {
    let fail = |stage: Stage, code: i32| move |e: &dyn std::fmt::Display| (stage, e.to_string(), code);
    let family = cfg.family.build().map_err(|e| fail(Stage::Measure, EXIT_CONFIG)(&e))?;
    let sampler = cfg.sampler().map_err(|e| fail(Stage::Measure, EXIT_CONFIG)(&e))?;

    let stats = estimate_measure_stats(&sampler, &family, cfg.measure.stats_horizon, cfg.measure.stats_trials);
    report.measure = Some(stats.clone());
    if last == Stage::Measure {
        return Ok(());
    }

    let skeleton = match &prior.skeleton {
        Some(s) => s.clone(),
        None => extract_skeleton(&sampler, &family, stats.alpha_hat, &cfg.skeleton.params())
            .map_err(|e| fail(Stage::Skeleton, skeleton_code(&e))(&e))?,
    };
    if let Some(w) = &skeleton.warning {
        report.warnings.push(format!("skeleton: {w}"));
    }
    report.skeleton = Some(skeleton.clone());
    if last == Stage::Skeleton {
        return Ok(());
    }

    let blending = match &prior.blending {
        Some(b) => b.clone(),
        None => certify_blending(&family, &cfg.blending.to_config()).map_err(|e| fail(Stage::Blending, blending_code(&e))(&e))?,
    };
    report.blending = Some(blending.clone());
    if last == Stage::Blending {
        return Ok(());
    }

    let (w0, lookup) = build_initial_cifs(&skeleton, &family, &blending, &cfg.initial_cifs_params())
        .map_err(|e| fail(Stage::W0, skeleton_code(&e))(&e))?;
    report.check(Stage::W0, "log card W0 lower", w0.card_lower.clone());
    report.check(Stage::W0, "log card W0 upper", w0.card_upper.clone());
    for (clause, m) in [('a', w0.verification.margin_a), ('b', w0.verification.margin_b), ('c', w0.verification.margin_c)] {
        report.check(Stage::W0, format!("clause ({clause}) margin"), Inequality::lt(0.0, m));
    }
    report.w0 = Some(w0.clone());
    if prior.w0.as_ref().is_some_and(|p| *p != w0) {
        return Err((Stage::W0, "rebuilt initial CIFS differs from the given one".into(), EXIT_ASSERTION));
    }
    if last == Stage::W0 {
        return Ok(());
    }

    let search = TailSearch { family: &family, lookup: &lookup, interval: &w0.interval, params: cfg.cascade_params().tail };
    let cascade_fail = |e: CascadeError| (Stage::Cascade, e.to_string(), cascade_code(&e));
    let mut cascade = Cascade::new(search, &w0.code, w0.cert, cfg.cascade_params()).map_err(cascade_fail)?;
    let mut run = Ok(());
    for &m in &cfg.cascade.schedule {
        if let Err(e) = cascade.advance_level(m) {
            run = Err(cascade_fail(e));
            break;
        }
    }
    let levels: Vec<CascadeLevelReport> =
        cascade.levels.iter().map(|l| CascadeLevelReport { summary: l.summary.clone(), roof: l.roof.clone() }).collect();
    for l in &levels {
        let s = &l.summary;
        let (lo, hi) = s.cert.band();
        let name = |what: &str| format!("level {} {what}", s.n);
        report.check(Stage::Cascade, name("spectrum min above band"), Inequality::lt(lo, s.spectrum.min));
        report.check(Stage::Cascade, name("spectrum max below band"), Inequality::lt(s.spectrum.max, hi));
        report.check(Stage::Cascade, name("spectrum violations"), Inequality::le(s.spectrum_violations as f64, 0.0));
        if let Some(x) = s.tail_bound_excess {
            report.check(Stage::Cascade, name("tail bound excess"), Inequality::le(x, 0.0));
        }
        for (clause, m) in [('a', s.verification.margin_a), ('b', s.verification.margin_b), ('c', s.verification.margin_c)] {
            report.check(Stage::Cascade, name(&format!("clause ({clause}) margin")), Inequality::lt(0.0, m));
        }
        report.warnings.extend(s.warnings.iter().map(|w| format!("level {}: {w}", s.n)));
    }
    let rebuilt = CascadeReport { l1: cascade.l1, levels };
    let mismatch = prior.cascade.as_ref().is_some_and(|p| *p != rebuilt);
    report.cascade = Some(rebuilt);
    run?;
    if mismatch {
        return Err((Stage::Cascade, "rebuilt cascade differs from the given one".into(), EXIT_ASSERTION));
    }
    if last == Stage::Cascade {
        return Ok(());
    }

    let suspension = suspension_stage(cfg, &cascade, &skeleton, w0.cert.alpha);
    for r in &suspension.roof.levels {
        let name = |what: &str| format!("level {} {what}", r.n);
        report.check(Stage::Suspension, name("roof lower violations"), Inequality::le(r.lower_violations as f64, 0.0));
        report.check(Stage::Suspension, name("roof upper margin"), Inequality::le(0.0, r.min_upper_margin));
        report.check(Stage::Suspension, name("item (1)"), r.item1.clone());
        report.check(Stage::Suspension, name("item (2)"), r.item2.clone());
        report.check(Stage::Suspension, name("item (3) lower"), r.item3_lower.clone());
        report.check(Stage::Suspension, name("item (3) upper"), r.item3_upper.clone());
        report.check(Stage::Suspension, name("item (4)"), r.item4.clone());
    }
    for b in &suspension.entropy {
        report.check(Stage::Suspension, format!("level {} entropy bound", b.n), b.check.clone());
        report.check(Stage::Suspension, format!("level {} entropy product bound", b.n), b.product_check.clone());
    }
    if let Some(s) = suspension.levels.last() {
        if let (Some(t), Some(b)) = (s.tail_mass, s.tail_mass_bound) {
            report.check(Stage::Suspension, format!("level {} tail mass", s.n), Inequality::le(t, b));
        }
    }
    report.suspension = Some(suspension);
    if last == Stage::Suspension {
        return Ok(());
    }

    let measures = measures_stage(cfg, &cascade, w0.interval.center);
    for e in &measures.exponents {
        // band widened by three standard errors
        let slack = 3.0 * e.estimate.sem;
        report.check(Stage::Measures, format!("level {} exponent above band", e.n), Inequality::lt(e.band.0 - slack, e.estimate.mean));
        report.check(Stage::Measures, format!("level {} exponent below band", e.n), Inequality::lt(e.estimate.mean, e.band.1 + slack));
    }
    let w = &measures.weakstar;
    for (i, name) in w.battery.iter().enumerate() {
        for n in 1..w.differences.len() {
            let (p, q) = (w.differences[n - 1][i], w.differences[n][i]);
            let rhs = p.mean + 3.0 * (p.sem.powi(2) + q.sem.powi(2)).sqrt();
            report.check(Stage::Measures, format!("weak-star {name} difference {} to {}", n, n + 1), Inequality::le(q.mean, rhs));
        }
    }
    for b in &measures.concentration {
        report.check(Stage::Measures, format!("concentration {}", b.name), Inequality::lt(1.0 - b.eps, b.fraction));
    }
    report.measures = Some(measures);
    Ok(())
}

fn large_deviation(cfg: &RunConfig, n: u32, roof: &RoofTable) -> LevelLargeDeviation {
    let sp = &cfg.suspension;
    let profile = match RoofProfile::new(roof.roof.clone()) {
        Ok(p) => p,
        Err(e) => return LevelLargeDeviation { n, c: 0.0, horizon: None, report: None, predicted: None, note: Some(e.to_string()) },
    };
    let c = profile.deviation_bound();
    if c == 0.0 {
        return LevelLargeDeviation { n, c, horizon: None, report: None, predicted: None, note: Some("constant roof".into()) };
    }
    let horizon = bernstein_horizon(c, sp.ld_eps).ok();
    let (report, note) = match horizon {
        Some(h) if h <= sp.ld_horizon_cap => {
            (large_dev_fraction(&profile, None, h, sp.ld_eps, sp.ld_trials, seed::derive(sp.seed.unwrap_or(cfg.seed), 0x1d0, n as u64)).ok(), None)
        }
        Some(h) => (None, Some(format!("horizon {h} above cap {}", sp.ld_horizon_cap))),
        None => (None, Some("no horizon".into())),
    };
    let predicted = report.as_ref().map(|r| 1.0 - r.eps);
    LevelLargeDeviation { n, c, horizon, report, predicted, note }
}

fn suspension_stage(cfg: &RunConfig, cascade: &Cascade, skeleton: &Skeleton, alpha: f64) -> SuspensionReport {
    let l1 = cascade.l1;
    let tables: Vec<(usize, &RoofTable)> = cascade.levels.iter().map(|l| (l.summary.m, &l.roof)).collect();
    let roof = roof_assumption_check(&tables, l1, alpha);
    let sizes: Vec<(u128, f64)> = cascade.levels.iter().map(|l| (l.summary.size, l.summary.mean_roof)).collect();
    let entropy = entropy_lower_bound(&sizes, skeleton.h, skeleton.eps_h, l1, alpha);
    let means: Vec<LevelMeans> = cascade
        .levels
        .iter()
        .map(|l| LevelMeans {
            m: l.summary.m,
            mean_roof: l.summary.mean_roof,
            mean_tail: l.roof.tail.iter().sum::<u64>() as f64 / l.roof.tail.len().max(1) as f64,
        })
        .collect();
    let levels = cascade
        .levels
        .iter()
        .enumerate()
        .map(|(n, l)| {
            let s = &l.summary;
            let tail_mass = if n >= 1 { tail_mass_estimate(&means[..=n], 0).ok() } else { None };
            let tail_mass_bound = if n >= 1 { Some((1..=n).map(|k| roof.l2 * 2f64.powi(-(k as i32))).sum()) } else { None };
            SuspensionStats {
                n: n as u32,
                size: s.size,
                entropy: abramov_entropy_of(s.size, s.mean_roof),
                mean_roof: s.mean_roof,
                mean_roof_sem: s.mean_roof_sem,
                max_roof: s.max_roof,
                min_roof: s.min_roof,
                l2: roof.l2,
                tail_mass,
                tail_mass_bound,
            }
        })
        .collect();
    let large_deviation = cascade.levels.iter().map(|l| large_deviation(cfg, l.summary.n, &l.roof)).collect();
    SuspensionReport { levels, roof, entropy, large_deviation }
}

fn measures_stage(cfg: &RunConfig, cascade: &Cascade, x0: f64) -> MeasuresReport {
    let mc = &cfg.measures;
    let root = mc.seed.unwrap_or(cfg.seed);
    let family = cascade.family();
    let battery = &mc.battery;
    let blocks = mc.trials * mc.reference_factor;
    let mut exponents = Vec::new();
    let mut integrals = Vec::new();
    for (n, l) in cascade.levels.iter().enumerate() {
        let source = UniformWords(&l.words);
        let length = (l.summary.mean_roof.round() as usize * mc.exponent_words).max(1);
        let estimate = exponent_of_level(family, &source, x0, mc.back_words, mc.exponent_trials, length, seed::derive(root, 0xe1, n as u64));
        exponents.push(ExponentReport { n: n as u32, length, estimate, band: l.summary.cert.band() });
        let seed_n = seed::derive(root, 0x1a, n as u64);
        integrals.push(if l.materialized() {
            integral_estimate(family, &source, x0, mc.back_words, battery, blocks, seed_n)
        } else {
            integral_over_words(family, &source, &l.words, x0, mc.back_words, battery, seed_n)
        });
    }
    let reference = integrals[0].clone();
    let weakstar = weakstar_diagnostic(integrals, battery);
    let horizon = cascade.levels[mc.ell].summary.mean_roof.round().max(1.0) as usize;
    let concentration = birkhoff_concentration(
        family,
        &UniformWords(&cascade.levels[mc.n].words),
        x0,
        mc.back_words,
        horizon,
        battery,
        &reference,
        mc.eps,
        mc.trials,
        seed::derive(root, 0xc0, mc.n as u64),
    );
    MeasuresReport {
        exponents,
        weakstar,
        ell: mc.ell,
        n: mc.n,
        horizon,
        concentration,
        note: "finite battery: non-refutation of ergodicity only".into(),
    }
}
