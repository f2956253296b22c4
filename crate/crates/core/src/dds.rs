//! The data-driven simulation model: forest prediction, GP error sampling
//! and clamping to the measured value range.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::forest::{ForestConfig, RandomForest};
use crate::gpr::{default_hyperparameters, ErrorModel, Kernel, DEFAULT_MAX_POINTS};
use crate::metrics::{sorted_quantile_r, summarize, SummaryStats};
use crate::seed::{derive_seed, rng_from_seed, stream};
use crate::trace::{Dataset, FeatureVector};

const FOREST_FILE: &str = "forest.txt";
const GPR_FILE: &str = "gpr.txt";
const RANGE_FILE: &str = "range.txt";

/// Which forest predictions the error model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualSource {
    /// Predictions of the full forest on its own training records.
    #[default]
    InSample,
    /// Out-of-bag predictions (needs bootstrap to differ from in-sample).
    OutOfBag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdsConfig {
    pub forest: ForestConfig,
    /// `None` selects [`default_hyperparameters`].
    pub kernel: Option<Kernel>,
    pub max_gpr_points: usize,
    pub residuals: ResidualSource,
}

impl Default for DdsConfig {
    fn default() -> Self {
        DdsConfig {
            forest: ForestConfig::default(),
            kernel: None,
            max_gpr_points: DEFAULT_MAX_POINTS,
            residuals: ResidualSource::InSample,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DdsModel {
    forest: RandomForest,
    error_model: ErrorModel,
    label_min: f64,
    label_max: f64,
}

/// Trains the forest on `d` and fits the error model on its in-sample
/// predictions.
pub fn build_dds(d: &Dataset, fcfg: &ForestConfig, kernel: Option<Kernel>) -> Result<DdsModel> {
    DdsModel::build(
        d,
        &DdsConfig {
            forest: fcfg.clone(),
            kernel,
            ..DdsConfig::default()
        },
    )
}

impl DdsModel {
    pub fn build(d: &Dataset, cfg: &DdsConfig) -> Result<Self> {
        let rows = d.feature_rows();
        let labels = d.labels();
        let (forest, predictions) = match cfg.residuals {
            ResidualSource::InSample => {
                let forest = RandomForest::fit(&rows, &labels, &cfg.forest)?;
                let predictions = rows.iter().map(|r| forest.predict_row(r)).collect();
                (forest, predictions)
            }
            ResidualSource::OutOfBag => RandomForest::fit_with_oob(&rows, &labels, &cfg.forest)?,
        };
        let kernel = match cfg.kernel {
            Some(k) => k,
            None => default_hyperparameters(&predictions, &labels)?,
        };
        let error_model = ErrorModel::fit_capped(
            &predictions,
            &labels,
            kernel,
            cfg.max_gpr_points,
            derive_seed(cfg.forest.seed, stream::ERROR_MODEL),
        )?;
        Self::from_parts(forest, error_model, d.label_min(), d.label_max())
    }

    pub fn from_parts(forest: RandomForest, error_model: ErrorModel, label_min: f64, label_max: f64) -> Result<Self> {
        if !(label_min.is_finite() && label_max.is_finite() && label_min <= label_max) {
            return Err(Error::Argument(format!("invalid label range [{label_min}, {label_max}]")));
        }
        Ok(DdsModel {
            forest,
            error_model,
            label_min,
            label_max,
        })
    }

    pub fn forest(&self) -> &RandomForest {
        &self.forest
    }

    pub fn error_model(&self) -> &ErrorModel {
        &self.error_model
    }

    pub fn label_min(&self) -> f64 {
        self.label_min
    }

    pub fn label_max(&self) -> f64 {
        self.label_max
    }

    /// Clamps `v` into the measured label range.
    pub fn shape(&self, v: f64) -> f64 {
        shape(v, self.label_min, self.label_max)
    }

    /// Forest prediction, GP error sample, then clamping.
    pub fn predict<R: Rng + ?Sized>(&self, x: &FeatureVector, rng: &mut R) -> f64 {
        let predicted = self.forest.predict(x);
        self.shape(self.error_model.sample(predicted, rng))
    }

    /// Clamped forest prediction without the stochastic error component.
    pub fn predict_mean(&self, x: &FeatureVector) -> f64 {
        self.shape(self.forest.predict(x))
    }

    /// Writes `forest.txt`, `gpr.txt` and `range.txt` into `dir`, creating it
    /// if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.forest.save(dir.join(FOREST_FILE))?;
        self.error_model.save(dir.join(GPR_FILE))?;
        let range = dir.join(RANGE_FILE);
        std::fs::write(&range, format!("RANGE {} {}\n", self.label_min, self.label_max))
            .map_err(|e| Error::io(&range, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "model bundle directory not found"),
            ));
        }
        let forest = RandomForest::load(dir.join(FOREST_FILE))?;
        let error_model = ErrorModel::load(dir.join(GPR_FILE))?;
        let range_path = dir.join(RANGE_FILE);
        let text = std::fs::read_to_string(&range_path).map_err(|e| Error::io(&range_path, e))?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        let (min, max) = match fields.as_slice() {
            ["RANGE", min, max] => (
                min.parse::<f64>().map_err(|_| range_err())?,
                max.parse::<f64>().map_err(|_| range_err())?,
            ),
            _ => return Err(range_err()),
        };
        Self::from_parts(forest, error_model, min, max)
    }
}

fn range_err() -> Error {
    Error::Parse {
        line: 1,
        message: "expected `RANGE <min> <max>`".into(),
    }
}

pub fn shape(v: f64, label_min: f64, label_max: f64) -> f64 {
    if v < label_min {
        label_min
    } else if v > label_max {
        label_max
    } else {
        v
    }
}

pub fn dds_predict<R: Rng + ?Sized>(model: &DdsModel, x: &FeatureVector, rng: &mut R) -> f64 {
    model.predict(x, rng)
}

pub fn dds_predict_mean(model: &DdsModel, x: &FeatureVector) -> f64 {
    model.predict_mean(x)
}

/// Every record of a dataset replayed through the model, four ways.
#[derive(Debug, Clone)]
pub struct ValidationSamples {
    pub measured: Vec<f64>,
    /// Forest prediction only.
    pub rf_only: Vec<f64>,
    /// GP sample before clamping; may leave the label range.
    pub raw_gpr: Vec<f64>,
    /// Clamped GP sample.
    pub dds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub measured: SummaryStats,
    pub rf_only: SummaryStats,
    pub raw_gpr: SummaryStats,
    pub dds: SummaryStats,
    /// Pearson r between sorted measured and sorted DDS samples.
    pub quantile_r: f64,
    /// Raw GP samples outside `[label_min, label_max]`.
    pub raw_out_of_range: usize,
    pub samples: ValidationSamples,
}

/// Replays each record of `d` `repeats` times. Measured values are repeated
/// alongside so the samples stay aligned.
pub fn validate(model: &DdsModel, d: &Dataset, repeats: usize, seed: u64) -> Result<ValidationReport> {
    if repeats == 0 {
        return Err(Error::Argument("repeats must be >= 1".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, stream::VALIDATION));
    let cap = d.len() * repeats;
    let mut s = ValidationSamples {
        measured: Vec::with_capacity(cap),
        rf_only: Vec::with_capacity(cap),
        raw_gpr: Vec::with_capacity(cap),
        dds: Vec::with_capacity(cap),
    };
    for _ in 0..repeats {
        for r in d.records() {
            let predicted = model.forest.predict(&r.features);
            let raw = model.error_model.sample(predicted, &mut rng);
            s.measured.push(r.datarate);
            s.rf_only.push(predicted);
            s.raw_gpr.push(raw);
            s.dds.push(model.shape(raw));
        }
    }
    let raw_out_of_range = s
        .raw_gpr
        .iter()
        .filter(|&&v| v < model.label_min || v > model.label_max)
        .count();
    Ok(ValidationReport {
        measured: summarize(&s.measured)?,
        rf_only: summarize(&s.rf_only)?,
        raw_gpr: summarize(&s.raw_gpr)?,
        dds: summarize(&s.dds)?,
        quantile_r: sorted_quantile_r(&s.measured, &s.dds)?,
        raw_out_of_range,
        samples: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{Node, RegressionTree};
    use crate::trace::{TransmissionRecord, FEATURE_COUNT};

    fn record(sinr: f64, rate: f64) -> TransmissionRecord {
        TransmissionRecord {
            features: FeatureVector::from_array([1e6, -90.0, -10.0, sinr, 9.0, 50.0, 3.0, 1800.0, 7.0, 30.0]),
            datarate: rate,
        }
    }

    fn learnable() -> Dataset {
        Dataset::new((0..30).map(|i| record(i as f64, 2.0 + i as f64 * 0.5)).collect()).unwrap()
    }

    fn small_cfg() -> ForestConfig {
        ForestConfig {
            n_trees: 10,
            bootstrap: false,
            seed: 4,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn shape_clamps_to_range() {
        assert_eq!(shape(-2.0, 0.0, 30.0), 0.0);
        assert_eq!(shape(12.0, 0.0, 30.0), 12.0);
        assert_eq!(shape(45.0, 0.0, 30.0), 30.0);
    }

    #[test]
    fn learnable_data_has_negligible_residuals() {
        let d = learnable();
        let m = build_dds(&d, &small_cfg(), None).unwrap();
        assert_eq!(m.error_model().kernel().noise_variance, 1e-6);
        let mut rng = rng_from_seed(1);
        for r in d.records() {
            assert_eq!(m.predict_mean(&r.features), r.datarate);
            assert!((m.predict(&r.features, &mut rng) - r.datarate).abs() < 0.05);
        }
    }

    #[test]
    fn single_record_model() {
        let d = Dataset::new(vec![record(5.0, 7.5)]).unwrap();
        let m = build_dds(&d, &ForestConfig::default(), None).unwrap();
        let mut rng = rng_from_seed(2);
        assert!((m.predict(&d.records()[0].features, &mut rng) - 7.5).abs() < 1e-9);
        assert_eq!(m.forest().leaf_count(), 100);
    }

    #[test]
    fn outputs_stay_in_range_and_are_deterministic() {
        let d = Dataset::new(
            (0..40)
                .map(|i| record((i % 9) as f64, ((i * 7) % 13) as f64 + 0.5))
                .collect(),
        )
        .unwrap();
        let m = build_dds(&d, &small_cfg(), Some(Kernel::new(30.0, 1.0, 20.0).unwrap())).unwrap();
        let mut a = rng_from_seed(3);
        let mut b = rng_from_seed(3);
        for i in 0..2000 {
            let x = record((i % 40) as f64 - 10.0, 0.0).features;
            let v = m.predict(&x, &mut a);
            assert!(v >= m.label_min() && v <= m.label_max());
            assert_eq!(v, m.predict(&x, &mut b));
        }
    }

    #[test]
    fn predict_mean_clamps_out_of_range_forests() {
        let split = Node::Split {
            feature: 3,
            threshold: 0.0,
            left: 1,
            right: 2,
        };
        let tree = RegressionTree::from_nodes(
            vec![split, Node::Leaf { value: -5.0, count: 1 }, Node::Leaf { value: 50.0, count: 1 }],
            0,
            FEATURE_COUNT,
        )
        .unwrap();
        let forest = RandomForest::from_trees(vec![tree], ForestConfig::default()).unwrap();
        let gp = ErrorModel::fit(&[0.0], &[1.0], Kernel::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        let m = DdsModel::from_parts(forest, gp, 0.0, 30.0).unwrap();
        assert_eq!(m.predict_mean(&record(-1.0, 0.0).features), 0.0);
        assert_eq!(m.predict_mean(&record(1.0, 0.0).features), 30.0);
        assert!(DdsModel::from_parts(m.forest().clone(), m.error_model().clone(), 3.0, 1.0).is_err());
    }

    #[test]
    fn degenerate_error_model_collapses_to_mean() {
        let d = learnable();
        let kernel = Kernel {
            signal_variance: 100.0,
            length_scale: 2.0,
            noise_variance: 1e-13,
        };
        let m = build_dds(&d, &small_cfg(), Some(kernel)).unwrap();
        let mut rng = rng_from_seed(6);
        for r in d.records() {
            assert!((m.predict(&r.features, &mut rng) - m.predict_mean(&r.features)).abs() < 1e-3);
        }
    }

    #[test]
    fn bundle_round_trip() {
        let d = learnable();
        let m = build_dds(&d, &small_cfg(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path().join("model")).unwrap();
        let back = DdsModel::load(dir.path().join("model")).unwrap();
        assert_eq!((back.label_min(), back.label_max()), (m.label_min(), m.label_max()));
        let (mut a, mut b) = (rng_from_seed(9), rng_from_seed(9));
        for r in d.records() {
            assert_eq!(m.predict(&r.features, &mut a), back.predict(&r.features, &mut b));
        }
        assert!(DdsModel::load(dir.path().join("missing")).is_err());
    }

    #[test]
    fn out_of_bag_residuals() {
        let d = Dataset::new(
            (0..60)
                .map(|i| record(i as f64, (i as f64 * 0.9).sin() * 3.0 + 5.0 + (i % 4) as f64))
                .collect(),
        )
        .unwrap();
        let cfg = DdsConfig {
            forest: ForestConfig {
                n_trees: 20,
                ..ForestConfig::default()
            },
            residuals: ResidualSource::OutOfBag,
            ..DdsConfig::default()
        };
        let oob = DdsModel::build(&d, &cfg).unwrap();
        let ins = DdsModel::build(
            &d,
            &DdsConfig {
                residuals: ResidualSource::InSample,
                ..cfg
            },
        )
        .unwrap();
        assert!(oob.error_model().kernel().noise_variance > ins.error_model().kernel().noise_variance);
    }

    #[test]
    fn validation_report_columns() {
        let d = Dataset::new(
            (0..80)
                .map(|i| record((i % 11) as f64, ((i * 5) % 17) as f64 * 0.5))
                .collect(),
        )
        .unwrap();
        let m = build_dds(&d, &small_cfg(), None).unwrap();
        let rep = validate(&m, &d, 2, 1).unwrap();
        assert_eq!(rep.samples.dds.len(), 160);
        assert!(rep
            .samples
            .dds
            .iter()
            .all(|&v| v >= d.label_min() && v <= d.label_max()));
        assert!(rep.quantile_r > 0.9);
        assert!(validate(&m, &d, 0, 1).is_err());
    }
}
