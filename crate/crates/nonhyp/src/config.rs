//! Run configuration. TOML or JSON; every field except `seed` has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blending::BlendingConfig;
use crate::cascade::{CascadeParams, TailParams};
use crate::cifs::VerifyOptions;
use crate::fiber::{FiberError, FiberFamily, FiberMap, Matrix2, NorthSouth, ProjectiveMap, Rotation};
use crate::observable::Observable;
use crate::skeleton::{BaseMeasure, InitialCifsParams, MeasureSampler, SkeletonParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Fiber(#[from] FiberError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    /// Projective action of `diag(sigma, 1/sigma)`.
    Diag { sigma: f64 },
    /// Projective action of the rotation matrix by `angle` radians.
    RotationMatrix { angle: f64 },
    /// Projective action of `[[a, b], [c, d]]`.
    Matrix { entries: [f64; 4] },
    Rotation { shift: f64 },
    NorthSouth { a: f64 },
}

impl MapSpec {
    pub fn build(&self) -> Result<FiberMap, FiberError> {
        Ok(match *self {
            MapSpec::Diag { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(FiberError::BadParameter(format!("sigma = {sigma}")));
                }
                FiberMap::Projective(ProjectiveMap::new(Matrix2::diag(sigma))?)
            }
            MapSpec::RotationMatrix { angle } => FiberMap::Projective(ProjectiveMap::new(Matrix2::rotation(angle))?),
            MapSpec::Matrix { entries: [a, b, c, d] } => FiberMap::Projective(ProjectiveMap::new(Matrix2::sl2(a, b, c, d)?)?),
            MapSpec::Rotation { shift } => FiberMap::Rotation(Rotation { shift }),
            MapSpec::NorthSouth { a } => FiberMap::NorthSouth(NorthSouth::new(a)?),
        })
    }
}

/// Either a list of named maps or a bare cocycle `{"matrices": [[a, b, c, d], ...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maps: Vec<MapSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matrices: Vec<[f64; 4]>,
}

impl FamilySpec {
    pub fn specs(&self) -> Result<Vec<MapSpec>, ConfigError> {
        match (self.maps.is_empty(), self.matrices.is_empty()) {
            (false, true) => Ok(self.maps.clone()),
            (true, false) => Ok(self.matrices.iter().map(|&entries| MapSpec::Matrix { entries }).collect()),
            (true, true) => Err(ConfigError::Invalid("family has no maps".into())),
            (false, false) => Err(ConfigError::Invalid("family gives both maps and matrices".into())),
        }
    }

    pub fn build(&self) -> Result<FiberFamily, ConfigError> {
        let maps = self.specs()?.iter().map(|m| m.build()).collect::<Result<Vec<_>, _>>()?;
        Ok(FiberFamily::new(maps)?)
    }

    /// The matrices of a purely projective family.
    pub fn cocycle(&self) -> Result<Vec<Matrix2>, ConfigError> {
        self.specs()?
            .iter()
            .map(|m| match *m {
                MapSpec::Diag { sigma } => Ok(Matrix2::diag(sigma)),
                MapSpec::RotationMatrix { angle } => Ok(Matrix2::rotation(angle)),
                MapSpec::Matrix { entries: [a, b, c, d] } => Ok(Matrix2::sl2(a, b, c, d)?),
                other => Err(ConfigError::Invalid(format!("{other:?} is not a matrix"))),
            })
            .collect()
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        parse(path, &text)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub base: BaseMeasure,
    pub burn_in: usize,
    pub stats_horizon: usize,
    pub stats_trials: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { base: BaseMeasure::Bernoulli { weights: vec![0.4, 0.6] }, burn_in: 64, stats_horizon: 2000, stats_trials: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlendingSection {
    pub delta: Option<f64>,
    pub deltas: Vec<f64>,
    pub depth_cap: usize,
    pub beam: usize,
    pub grid: usize,
    pub connect_depth: usize,
    pub h_levels: Vec<u32>,
}

impl Default for BlendingSection {
    fn default() -> Self {
        let b = BlendingConfig::default();
        BlendingSection {
            delta: b.delta,
            deltas: b.deltas,
            depth_cap: b.depth_cap,
            beam: b.beam,
            grid: b.grid,
            connect_depth: b.connect_depth,
            h_levels: b.h_levels,
        }
    }
}

impl BlendingSection {
    pub fn to_config(&self) -> BlendingConfig {
        BlendingConfig {
            delta: self.delta,
            deltas: self.deltas.clone(),
            depth_cap: self.depth_cap,
            beam: self.beam,
            grid: self.grid,
            connect_depth: self.connect_depth,
            h_levels: self.h_levels.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkeletonSection {
    pub n: usize,
    pub eps_e: f64,
    pub eps_h: f64,
    pub k0_cap: f64,
    pub budget: usize,
    pub max_samples: usize,
}

impl Default for SkeletonSection {
    fn default() -> Self {
        SkeletonSection { n: 12, eps_e: 0.06, eps_h: 0.5, k0_cap: 20.0, budget: 4000, max_samples: 200_000 }
    }
}

impl SkeletonSection {
    pub fn params(&self) -> SkeletonParams {
        SkeletonParams {
            n: self.n,
            eps_e: self.eps_e,
            eps_h: self.eps_h,
            k0_cap: self.k0_cap,
            budget: self.budget,
            max_samples: self.max_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct W0Section {
    pub budget: usize,
    pub connect_grid: usize,
    pub connect_depth: usize,
}

impl Default for W0Section {
    fn default() -> Self {
        W0Section { budget: 16, connect_grid: 1 << 16, connect_depth: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub grid_pts: usize,
    pub m_check: usize,
    pub tuples: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        let v = VerifyOptions::default();
        VerifySection { grid_pts: v.grid_pts, m_check: v.m_check, tuples: v.tuples }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeSection {
    pub schedule: Vec<usize>,
    pub beam: usize,
    pub depth_cap: usize,
    pub materialize_cap: u128,
    pub sample_symbols: usize,
    pub spectrum_trials: usize,
    pub spectrum_back_words: usize,
}

impl Default for CascadeSection {
    fn default() -> Self {
        let c = CascadeParams::default();
        CascadeSection {
            schedule: c.schedule,
            beam: c.tail.beam,
            depth_cap: c.tail.depth_cap,
            materialize_cap: c.materialize_cap,
            sample_symbols: c.sample_symbols,
            spectrum_trials: c.spectrum_trials,
            spectrum_back_words: c.spectrum_back_words,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuspensionSection {
    pub ld_eps: f64,
    pub ld_trials: usize,
    /// Levels whose Bernstein horizon exceeds this are not sampled.
    pub ld_horizon_cap: usize,
    /// Sampling seed for this stage; the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for SuspensionSection {
    fn default() -> Self {
        SuspensionSection { ld_eps: 0.2, ld_trials: 1000, ld_horizon_cap: 20_000, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuresSection {
    pub ell: usize,
    pub n: usize,
    pub eps: f64,
    pub trials: usize,
    /// Blocks per level for the integrals, as a multiple of `trials`.
    pub reference_factor: usize,
    pub back_words: usize,
    pub exponent_trials: usize,
    /// Orbit length for exponents, in mean codewords.
    pub exponent_words: usize,
    pub battery: Vec<Observable>,
    /// Sampling seed for this stage; the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for MeasuresSection {
    fn default() -> Self {
        MeasuresSection {
            ell: 1,
            n: 2,
            eps: 0.25,
            trials: 10_000,
            reference_factor: 10,
            back_words: 2,
            exponent_trials: 1000,
            exponent_words: 4,
            battery: Observable::default_battery(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub family: FamilySpec,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub blending: BlendingSection,
    #[serde(default)]
    pub skeleton: SkeletonSection,
    #[serde(default)]
    pub w0: W0Section,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub cascade: CascadeSection,
    #[serde(default)]
    pub suspension: SuspensionSection,
    #[serde(default)]
    pub measures: MeasuresSection,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

fn check(ok: bool, what: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(what.into()))
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = parse(path, &read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let family = self.family.build()?;
        self.sampler()?.validate(Some(family.n_symbols())).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let b = &self.blending;
        if let Some(d) = b.delta {
            check(d > 0.0 && d < 0.5, "blending.delta must lie in (0, 1/2)")?;
        }
        check(b.delta.is_some() || !b.deltas.is_empty(), "blending needs delta or deltas")?;
        check(b.deltas.iter().all(|&d| d > 0.0 && d < 0.5), "blending.deltas must lie in (0, 1/2)")?;
        check(b.depth_cap > 0 && b.beam > 0 && b.grid > 1 && b.connect_depth > 0, "blending caps must be positive")?;
        let s = &self.skeleton;
        check(s.n > 0, "skeleton.n must be positive")?;
        check(s.eps_e > 0.0 && s.eps_h > 0.0, "skeleton eps values must be positive")?;
        check(s.k0_cap > 1.0, "skeleton.k0_cap must exceed 1")?;
        check(s.budget >= 2 && s.max_samples > 0, "skeleton budget must be at least 2")?;
        check(self.w0.budget >= 2 && self.w0.connect_grid > 1 && self.w0.connect_depth > 0, "w0 parameters out of range")?;
        check(self.verify.grid_pts > 1 && self.verify.m_check > 0 && self.verify.tuples > 0, "verify parameters out of range")?;
        let c = &self.cascade;
        check(c.schedule.iter().all(|&m| m > 0), "cascade.schedule entries must be positive")?;
        check(c.beam > 0 && c.depth_cap > 0 && c.sample_symbols > 0 && c.spectrum_trials > 0, "cascade parameters out of range")?;
        let sp = &self.suspension;
        check(sp.ld_eps > 0.0 && sp.ld_eps < 1.0 && sp.ld_trials > 0, "suspension large deviation parameters out of range")?;
        let m = &self.measures;
        check(m.eps > 0.0 && m.eps < 1.0, "measures.eps must lie in (0, 1)")?;
        check(m.ell < m.n, "measures.ell must be below measures.n")?;
        check(m.n <= c.schedule.len(), "measures.n exceeds the cascade depth")?;
        check(m.trials > 0 && m.reference_factor > 0 && m.exponent_trials > 0 && m.exponent_words > 0, "measures trials must be positive")?;
        check(!m.battery.is_empty(), "measures.battery is empty")?;
        Ok(())
    }

    pub fn sampler(&self) -> Result<MeasureSampler, ConfigError> {
        Ok(MeasureSampler { base: self.measure.base.clone(), burn_in: self.measure.burn_in, seed: self.seed })
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions { grid_pts: self.verify.grid_pts, m_check: self.verify.m_check, tuples: self.verify.tuples, seed: self.seed }
    }

    pub fn initial_cifs_params(&self) -> InitialCifsParams {
        InitialCifsParams {
            w0_budget: self.w0.budget,
            connect_grid: self.w0.connect_grid,
            connect_depth: self.w0.connect_depth,
            verify: self.verify_options(),
        }
    }

    pub fn cascade_params(&self) -> CascadeParams {
        let c = &self.cascade;
        CascadeParams {
            schedule: c.schedule.clone(),
            tail: TailParams { beam: c.beam, depth_cap: c.depth_cap },
            materialize_cap: c.materialize_cap,
            sample_symbols: c.sample_symbols,
            verify: self.verify_options(),
            spectrum_trials: c.spectrum_trials,
            spectrum_back_words: c.spectrum_back_words,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let e = RunConfig::from_toml("[family]\nmaps = [{ kind = \"rotation\", shift = 0.1 }]\n");
        assert!(matches!(e, Err(ConfigError::Parse(_))));
    }

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_toml("seed = 3\n[family]\nmatrices = [[2, 0, 0, 0.5], [0, -1, 1, 0]]\n").unwrap();
        assert_eq!(c.skeleton, SkeletonSection::default());
        assert_eq!(c.family.build().unwrap().n_symbols(), 2);
        assert_eq!(c.family.cocycle().unwrap()[0], Matrix2::diag(2.0));
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let base = "seed = 3\n[family]\nmaps = [{ kind = \"diag\", sigma = 0.5 }, { kind = \"rotation_matrix\", angle = 1.0 }]\n";
        assert!(RunConfig::from_toml(base).is_ok());
        for extra in ["[measures]\neps = 1.5\n", "[measures]\nell = 2\n", "[skeleton]\nn = 0\n", "[blending]\ndelta = 0.7\n", "[cascade]\nschedule = [4, 0]\n", "[measure]\nbase = { kind = \"bernoulli\", weights = [1.0] }\n"] {
            assert!(matches!(RunConfig::from_toml(&format!("{base}{extra}")), Err(ConfigError::Invalid(_))), "{extra}");
        }
        assert!(matches!(RunConfig::from_toml(&format!("{base}bogus = 1\n")), Err(ConfigError::Parse(_))));
        let det = "seed = 3\n[family]\nmatrices = [[2, 0, 0, 1]]\n";
        assert!(RunConfig::from_toml(det).is_err());
    }
}
