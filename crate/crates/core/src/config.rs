//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#'
//! seed = 42
//! forest.n_trees = 100
//! forest.max_depth = none
//! cat.schemes = periodic, cat, ml-cat
//! ```
//!
//! Unknown keys are rejected. All sub-seeds derive from `seed` through
//! [`crate::seed::derive_seed`].

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cat::{CatConfig, MetricKind};
use crate::dds::{DdsConfig, ResidualSource};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::gpr::{Kernel, DEFAULT_MAX_POINTS};
use crate::seed::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub forest: ForestConfig,
    pub kernel: Option<Kernel>,
    pub max_gpr_points: usize,
    pub residuals: ResidualSource,
    /// Replays per record in validation.
    pub repeats: usize,
    pub cv_folds: usize,
    /// Shared CAT parameters; `metric`, `phi_*` and `seed` are filled per scheme.
    pub cat: CatConfig,
    pub sinr_phi: (f64, f64),
    pub rf_phi: (f64, f64),
    pub schemes: Vec<MetricKind>,
    pub dataset: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            forest: ForestConfig::default(),
            kernel: None,
            max_gpr_points: DEFAULT_MAX_POINTS,
            residuals: ResidualSource::InSample,
            repeats: 1,
            cv_folds: 10,
            cat: CatConfig::default(),
            sinr_phi: (0.0, 30.0),
            rf_phi: (0.0, 30.0),
            schemes: vec![MetricKind::Periodic, MetricKind::Sinr, MetricKind::RfPrediction],
            dataset: None,
            trace: None,
            model: None,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{raw}` for `{key}`")))
}

fn flag(key: &str, raw: &str, line: usize) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: `{key}` expects a boolean, got `{raw}`"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let (mut sv, mut ls, mut nv) = (None, None, None);
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
            let (key, raw) = (key.trim(), raw.trim());
            match key {
                "seed" => cfg.seed = value(key, raw, line)?,
                "forest.n_trees" => cfg.forest.n_trees = value(key, raw, line)?,
                "forest.feature_subset" => cfg.forest.feature_subset = value(key, raw, line)?,
                "forest.min_leaf" => cfg.forest.min_leaf = value(key, raw, line)?,
                "forest.max_depth" => {
                    cfg.forest.max_depth = if raw.eq_ignore_ascii_case("none") {
                        None
                    } else {
                        Some(value(key, raw, line)?)
                    }
                }
                "forest.bootstrap" => cfg.forest.bootstrap = flag(key, raw, line)?,
                "gpr.signal_variance" => sv = Some(value::<f64>(key, raw, line)?),
                "gpr.length_scale" => ls = Some(value::<f64>(key, raw, line)?),
                "gpr.noise_variance" => nv = Some(value::<f64>(key, raw, line)?),
                "gpr.max_points" => cfg.max_gpr_points = value(key, raw, line)?,
                "dds.residuals" => {
                    cfg.residuals = match raw {
                        "in_sample" => ResidualSource::InSample,
                        "out_of_bag" => ResidualSource::OutOfBag,
                        _ => {
                            return Err(Error::Config(format!(
                                "line {line}: dds.residuals must be in_sample or out_of_bag"
                            )))
                        }
                    }
                }
                "dds.repeats" => cfg.repeats = value(key, raw, line)?,
                "cv.folds" => cfg.cv_folds = value(key, raw, line)?,
                "cat.t_min" => cfg.cat.t_min = value(key, raw, line)?,
                "cat.t_max" => cfg.cat.t_max = value(key, raw, line)?,
                "cat.alpha" => cfg.cat.alpha = value(key, raw, line)?,
                "cat.sinr_phi_min" => cfg.sinr_phi.0 = value(key, raw, line)?,
                "cat.sinr_phi_max" => cfg.sinr_phi.1 = value(key, raw, line)?,
                "cat.rf_phi_min" => cfg.rf_phi.0 = value(key, raw, line)?,
                "cat.rf_phi_max" => cfg.rf_phi.1 = value(key, raw, line)?,
                "cat.source_rate" => cfg.cat.source_rate = value(key, raw, line)?,
                "cat.tick" => cfg.cat.tick = value(key, raw, line)?,
                "cat.periodic_interval" => cfg.cat.periodic_interval = value(key, raw, line)?,
                "cat.schemes" => {
                    cfg.schemes = raw
                        .split(',')
                        .map(|s| s.trim())
                        .filter(|s| !s.is_empty())
                        .map(MetricKind::from_str)
                        .collect::<Result<_>>()?;
                }
                "path.dataset" => cfg.dataset = Some(PathBuf::from(raw)),
                "path.trace" => cfg.trace = Some(PathBuf::from(raw)),
                "path.model" => cfg.model = Some(PathBuf::from(raw)),
                _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
            }
        }
        cfg.kernel = match (sv, ls, nv) {
            (None, None, None) => None,
            (Some(sv), Some(ls), Some(nv)) => Some(Kernel::new(sv, ls, nv).map_err(|e| Error::Config(e.to_string()))?),
            _ => {
                return Err(Error::Config(
                    "gpr.signal_variance, gpr.length_scale and gpr.noise_variance must be given together".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.forest.validate(crate::trace::FEATURE_COUNT)?;
        if self.max_gpr_points == 0 {
            return Err(Error::Config("gpr.max_points must be >= 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("dds.repeats must be >= 1".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Config("cv.folds must be >= 2".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("cat.schemes is empty".into()));
        }
        for kind in &self.schemes {
            self.cat_config(*kind, 0).validate()?;
        }
        for p in [&self.dataset, &self.trace, &self.model].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("path does not exist: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            seed: derive_seed(self.seed, stream::FOREST),
            ..self.forest.clone()
        }
    }

    pub fn dds_config(&self) -> DdsConfig {
        DdsConfig {
            forest: self.forest_config(),
            kernel: self.kernel,
            max_gpr_points: self.max_gpr_points,
            residuals: self.residuals,
        }
    }

    pub fn fold_seed(&self) -> u64 {
        derive_seed(self.seed, stream::FOLDS)
    }

    /// Scheme configuration for run number `run` of a study.
    pub fn cat_config(&self, metric: MetricKind, run: usize) -> CatConfig {
        let (phi_min, phi_max) = match metric {
            MetricKind::RfPrediction => self.rf_phi,
            _ => self.sinr_phi,
        };
        CatConfig {
            metric,
            phi_min,
            phi_max,
            seed: derive_seed(derive_seed(self.seed, stream::SIMULATION), run as u64),
            ..self.cat.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_derives_seeds() {
        let cfg = RunConfig::parse(
            "# study\nseed = 9\nforest.n_trees = 12 # small\nforest.max_depth = 7\nforest.bootstrap = off\n\
             gpr.signal_variance = 2\ngpr.length_scale = 0.5\ngpr.noise_variance = 0.1\n\
             cat.alpha = 4\ncat.rf_phi_max = 25\ncat.schemes = periodic, ml-cat\n",
        )
        .unwrap();
        assert_eq!(cfg.forest.n_trees, 12);
        assert_eq!(cfg.forest.max_depth, Some(7));
        assert!(!cfg.forest.bootstrap);
        assert_eq!(cfg.kernel, Some(Kernel::new(2.0, 0.5, 0.1).unwrap()));
        assert_eq!(cfg.schemes, vec![MetricKind::Periodic, MetricKind::RfPrediction]);
        let ml = cfg.cat_config(MetricKind::RfPrediction, 1);
        assert_eq!((ml.alpha, ml.phi_max), (4.0, 25.0));
        assert_ne!(ml.seed, cfg.cat_config(MetricKind::RfPrediction, 2).seed);
        assert_eq!(cfg.forest_config().seed, derive_seed(9, stream::FOREST));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::parse("forest.trees = 3").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("seed = -1").is_err());
        assert!(RunConfig::parse("gpr.signal_variance = 1").is_err());
        assert!(RunConfig::parse("cat.t_min = 200").is_err());
        assert!(RunConfig::parse("cat.schemes = fast").is_err());
        assert!(RunConfig::parse("path.trace = /definitely/not/here.csv").is_err());
        assert!(RunConfig::parse("forest.feature_subset = 0").is_err());
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }
}
