//! Experiment configuration (TOML) and its validation.

use crate::grid::GridConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("train and test day sets overlap (day {0})")]
    OverlappingDays(usize),
    #[error("day list empty: {0}")]
    EmptyDays(&'static str),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wind sampling plan: each day gets `samples_per_day` equispaced
/// detections of (speed, direction), held piecewise-linear in between.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindConfig {
    pub train_days: Vec<usize>,
    pub test_days: Vec<usize>,
    pub samples_per_day: usize,
    /// Wind-speed range at the reference height (m/s).
    pub speed_min: f64,
    pub speed_max: f64,
    /// Largest direction change between consecutive samples (rad).
    pub max_turn: f64,
    /// Prevailing wind direction (rad); all detections stay within
    /// `dir_spread` of it, as with a site dominated by one synoptic
    /// regime. Keeping the directions in one cone also keeps the
    /// upwind face pattern stable across the dataset.
    pub prevailing: f64,
    /// Half-width of the direction cone around `prevailing` (rad).
    pub dir_spread: f64,
    pub seed: u64,
}

impl Default for WindConfig {
    fn default() -> Self {
        WindConfig {
            train_days: vec![0, 1, 2, 3, 4],
            test_days: vec![5, 6],
            samples_per_day: 24,
            speed_min: 1.0,
            speed_max: 6.0,
            max_turn: 0.2,
            prevailing: 0.9,
            dir_spread: 0.5,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionConfig {
    /// Knot interval (s).
    pub h: f64,
    pub noise_amp: f64,
    pub n_harmonics: usize,
    pub harmonic_decay: f64,
    pub base_scale: f64,
    pub seed: u64,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        EmissionConfig {
            h: 300.0,
            noise_amp: 0.2,
            n_harmonics: 10,
            harmonic_decay: 0.97,
            base_scale: 1e-6,
            seed: 23,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FomConfig {
    /// Diffusivity (m^2/s).
    pub nu: f64,
    pub dt: f64,
    pub record_every: f64,
    /// Horizon per day (s).
    pub day_seconds: f64,
}

impl Default for FomConfig {
    fn default() -> Self {
        FomConfig { nu: 1.5e-5, dt: 100.0, record_every: 300.0, day_seconds: 86_400.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionConfig {
    pub n_rb: usize,
    pub n_deim: usize,
    pub n_phi: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig { n_rb: 50, n_deim: 20, n_phi: 20 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub relu: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of the wind dataset used for fitting; the rest reports
    /// a held-out loss.
    pub train_split: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![32, 32, 32],
            relu: true,
            learning_rate: 1e-3,
            weight_decay: 1e-8,
            batch_size: 32,
            epochs: 3000,
            seed: 7,
            train_split: 0.7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub wind: WindConfig,
    pub emission: EmissionConfig,
    pub fom: FomConfig,
    pub reduction: ReductionConfig,
    pub net: NetConfig,
}

/// Desk-scale default: 100x100 domain with three obstacle blocks and
/// two crossing roads.
impl Default for ExperimentConfig {
    fn default() -> Self {
        use crate::grid::{Rect, Segment};
        ExperimentConfig {
            grid: GridConfig {
                x0: 0.0,
                y0: 0.0,
                x1: 500.0,
                y1: 500.0,
                nx: 100,
                ny: 100,
                obstacles: vec![
                    Rect { x0: 100.0, y0: 100.0, x1: 180.0, y1: 200.0 },
                    Rect { x0: 300.0, y0: 120.0, x1: 380.0, y1: 230.0 },
                    Rect { x0: 180.0, y0: 330.0, x1: 320.0, y1: 420.0 },
                ],
                roads: vec![
                    Segment { x0: 20.0, y0: 265.0, x1: 480.0, y1: 265.0 },
                    Segment { x0: 245.0, y0: 20.0, x1: 245.0, y1: 480.0 },
                ],
            },
            wind: WindConfig::default(),
            emission: EmissionConfig::default(),
            fom: FomConfig::default(),
            reduction: ReductionConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small fast configuration for integration tests.
    pub fn small() -> Self {
        use crate::grid::Segment;
        let mut cfg = ExperimentConfig::default();
        cfg.grid.nx = 30;
        cfg.grid.ny = 30;
        cfg.grid.obstacles.truncate(1);
        cfg.grid.roads = vec![Segment { x0: 20.0, y0: 265.0, x1: 480.0, y1: 265.0 }];
        cfg.wind.train_days = vec![0, 1];
        cfg.wind.test_days = vec![2];
        cfg.reduction = ReductionConfig { n_rb: 15, n_deim: 8, n_phi: 6 };
        cfg.net.epochs = 400;
        cfg
    }

    pub fn n_days(&self) -> usize {
        self.wind
            .train_days
            .iter()
            .chain(&self.wind.test_days)
            .copied()
            .max()
            .map(|m| m + 1)
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.wind.train_days.is_empty() {
            return Err(ConfigError::EmptyDays("train_days"));
        }
        if self.wind.test_days.is_empty() {
            return Err(ConfigError::EmptyDays("test_days"));
        }
        for d in &self.wind.train_days {
            if self.wind.test_days.contains(d) {
                return Err(ConfigError::OverlappingDays(*d));
            }
        }
        if self.wind.samples_per_day < 2 {
            return Err(ConfigError::Invalid("samples_per_day must be at least 2".into()));
        }
        if !(self.wind.speed_min > 0.0 && self.wind.speed_max >= self.wind.speed_min) {
            return Err(ConfigError::Invalid("wind speed range".into()));
        }
        if !(self.wind.dir_spread > 0.0 && self.wind.dir_spread < std::f64::consts::FRAC_PI_2) {
            return Err(ConfigError::Invalid("dir_spread must lie in (0, pi/2)".into()));
        }
        if self.wind.max_turn <= 0.0 {
            return Err(ConfigError::Invalid("max_turn must be positive".into()));
        }
        if self.reduction.n_rb == 0 || self.reduction.n_deim == 0 || self.reduction.n_phi == 0 {
            return Err(ConfigError::Invalid("reduction sizes must be at least 1".into()));
        }
        if !(self.net.train_split > 0.0 && self.net.train_split < 1.0) {
            return Err(ConfigError::Invalid("train_split must lie in (0, 1)".into()));
        }
        if !(self.fom.dt > 0.0 && self.fom.record_every >= self.fom.dt) {
            return Err(ConfigError::Invalid("time-step settings".into()));
        }
        if self.fom.nu < 0.0 {
            return Err(ConfigError::Invalid("nu must be non-negative".into()));
        }
        if self.emission.h <= 0.0 || self.emission.noise_amp < 0.0 || self.emission.noise_amp > 0.2
        {
            return Err(ConfigError::Invalid("emission settings".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let s = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&s).unwrap();
        assert_eq!(s, back.to_toml());
    }

    #[test]
    fn overlapping_days_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.wind.test_days.push(cfg.wind.train_days[0]);
        assert!(matches!(cfg.validate(), Err(ConfigError::OverlappingDays(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.net.train_split = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.reduction.n_phi = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.emission.noise_amp = 0.3;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.wind.train_days.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn day_count_spans_both_sets() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.n_days(), 7);
        assert_eq!(ExperimentConfig::small().n_days(), 3);
    }
}
