use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sim::{EstimatorKind, EstimatorSettings, ScenarioId, SimSettings};

/// Experiment matrix and all module parameters, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub run: RunSettings,
    pub sim: SimSettings,
    pub estimator: EstimatorSettings,
    pub tuning: TuningSettings,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            run: RunSettings::default(),
            sim: SimSettings::default(),
            estimator: EstimatorSettings::default(),
            tuning: TuningSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub scenarios: Vec<ScenarioId>,
    pub estimators: Vec<EstimatorKind>,
    /// Seed indices; each maps to a run seed via `master_seed`.
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    /// Samples before this time (s) are excluded from the metrics.
    pub warmup: f64,
    pub output_dir: PathBuf,
    /// Points in each GP sweep table.
    pub snapshot_resolution: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            scenarios: ScenarioId::ALL.to_vec(),
            estimators: vec![EstimatorKind::RgpDkf, EstimatorKind::RgpB],
            seeds: (0..20).collect(),
            master_seed: 0x5EED,
            warmup: 1.0,
            output_dir: PathBuf::from("out"),
            snapshot_resolution: 301,
        }
    }
}

/// Grid search for the baseline's `sigma_y,GP`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSettings {
    /// Seed index reserved for tuning; never reused for evaluation.
    pub seed: u64,
    /// Smallest and largest candidate, in units of `sigma_K`.
    pub min_factor: f64,
    pub max_factor: f64,
    pub per_decade: usize,
}

impl Default for TuningSettings {
    fn default() -> Self {
        Self {
            seed: 1_000_000,
            min_factor: 1e-3,
            max_factor: 1e1,
            per_decade: 3,
        }
    }
}

impl TuningSettings {
    /// Log-spaced candidates in absolute units.
    pub fn candidates(&self, signal_std: f64) -> Vec<f64> {
        let lo = self.min_factor.log10();
        let hi = self.max_factor.log10();
        let n = ((hi - lo) * self.per_decade as f64).round() as usize;
        (0..=n)
            .map(|i| signal_std * 10f64.powf(lo + (hi - lo) * i as f64 / n.max(1) as f64))
            .collect()
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Config with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.estimator.validate()?;
        if self.run.scenarios.is_empty() {
            return Err(invalid("run.scenarios", "empty"));
        }
        if self.run.estimators.is_empty() {
            return Err(invalid("run.estimators", "empty"));
        }
        if self.run.seeds.is_empty() {
            return Err(invalid("run.seeds", "empty"));
        }
        if self.run.seeds.contains(&self.tuning.seed) {
            return Err(invalid("tuning.seed", "must not coincide with an evaluation seed"));
        }
        if !(self.run.warmup >= 0.0 && self.run.warmup < self.sim.duration) {
            return Err(invalid("run.warmup", "must lie within the run duration"));
        }
        if self.run.snapshot_resolution < 2 {
            return Err(invalid("run.snapshot_resolution", "need at least 2 points"));
        }
        let t = &self.tuning;
        if !(t.min_factor > 0.0 && t.max_factor > t.min_factor && t.per_decade >= 1) {
            return Err(invalid("tuning", "need 0 < min_factor < max_factor and per_decade >= 1"));
        }
        Ok(())
    }

    /// Run seed for a seed index.
    pub fn run_seed(&self, index: u64) -> u64 {
        derive_seed(self.run.master_seed, index)
    }
}

/// SplitMix64 of `master + index * golden`; distinct indices give
/// decorrelated seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parses `N`, `N..M` (exclusive) or `N..=M`.
pub fn parse_seed_range(s: &str) -> Result<Vec<u64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("bad seed `{t}` in `{s}`")))
    };
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        vec![num(s)?]
    };
    if seeds.is_empty() {
        return Err(Error::Config(format!("empty seed range `{s}`")));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = HarnessConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(HarnessConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(HarnessConfig::from_toml("[run]\nwarmup = 1.0\nbogus = 3\n").is_err());
        assert!(HarnessConfig::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = HarnessConfig::from_toml("[run]\nscenarios = [\"S2\"]\nseeds = [4]\n\n[estimator.kernel]\nsignal_std = 5.0\n").unwrap();
        assert_eq!(cfg.run.scenarios, vec![ScenarioId::S2]);
        assert_eq!(cfg.estimator.kernel.length_scale, 1.0);
        assert_eq!(cfg.estimator.kernel.signal_std, 5.0);
        assert_eq!(cfg.sim.sample_time, 0.01);
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("5").unwrap(), vec![5]);
        assert_eq!(parse_seed_range("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seed_range("2..=4").unwrap(), vec![2, 3, 4]);
        assert!(parse_seed_range("3..3").is_err());
        assert!(parse_seed_range("a..b").is_err());
    }

    #[test]
    fn tuning_candidates_span() {
        let c = TuningSettings::default().candidates(20.0);
        assert_eq!(c.len(), 13);
        assert!((c[0] - 0.02).abs() < 1e-12);
        assert!((c[12] - 200.0).abs() < 1e-9);
    }

    #[test]
    fn derived_seeds_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
