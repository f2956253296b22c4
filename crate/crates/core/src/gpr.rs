//! One-dimensional Gaussian-process model of prediction errors.
//!
//! The GP maps a predicted data rate to the distribution of data rates
//! actually measured for such predictions. Squared-exponential covariance
//! plus white observation noise, constant prior mean equal to the mean of the
//! measurements. Predictive variances include the observation noise, so
//! samples reproduce measurement scatter.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Default cap on training pairs; larger inputs are subsampled.
pub const DEFAULT_MAX_POINTS: usize = 2000;

const JITTER_FACTOR: f64 = 1e-9;
const JITTER_RETRIES: usize = 3;
const VARIANCE_FLOOR: f64 = 1e-6;
const LENGTH_SCALE_FLOOR: f64 = 1e-3;
/// Predictive variances at or below this are treated as deterministic.
const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl Kernel {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self> {
        let k = Kernel {
            signal_variance,
            length_scale,
            noise_variance,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal_variance", self.signal_variance),
            ("length_scale", self.length_scale),
            ("noise_variance", self.noise_variance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("kernel {name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Squared-exponential covariance without the noise term.
    pub fn covariance(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.signal_variance * (-d * d / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// Heuristic hyperparameters: signal variance = variance of the
/// measurements, length scale = a tenth of the prediction range, noise
/// variance = mean squared residual. Variances are floored at 1e-6 and the
/// length scale at 1e-3.
pub fn default_hyperparameters(predictions: &[f64], measurements: &[f64]) -> Result<Kernel> {
    check_pairs(predictions, measurements)?;
    let n = measurements.len() as f64;
    let mean = measurements.iter().sum::<f64>() / n;
    let var = measurements.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    let (lo, hi) = predictions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let mse = predictions
        .iter()
        .zip(measurements)
        .map(|(p, y)| (y - p).powi(2))
        .sum::<f64>()
        / n;
    Kernel::new(
        var.max(VARIANCE_FLOOR),
        ((hi - lo) / 10.0).max(LENGTH_SCALE_FLOOR),
        mse.max(VARIANCE_FLOOR),
    )
}

fn check_pairs(predictions: &[f64], measurements: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::Argument("error model needs at least one (prediction, measurement) pair".into()));
    }
    if predictions.len() != measurements.len() {
        return Err(Error::Argument(format!(
            "length mismatch: {} predictions, {} measurements",
            predictions.len(),
            measurements.len()
        )));
    }
    if predictions.iter().chain(measurements).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite value in error-model data".into()));
    }
    Ok(())
}

/// Posterior predictive mean and variance at one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ErrorModel {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    kernel: Kernel,
    prior_mean: f64,
    jitter: f64,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
}

pub fn fit_error_model(predictions: &[f64], measurements: &[f64], kernel: Kernel) -> Result<ErrorModel> {
    ErrorModel::fit(predictions, measurements, kernel)
}

impl ErrorModel {
    pub fn fit(predictions: &[f64], measurements: &[f64], kernel: Kernel) -> Result<Self> {
        check_pairs(predictions, measurements)?;
        let prior_mean = measurements.iter().sum::<f64>() / measurements.len() as f64;
        Self::fit_with_prior(predictions.to_vec(), measurements.to_vec(), kernel, prior_mean)
    }

    /// Like [`ErrorModel::fit`], but keeps at most `max_points` pairs, chosen
    /// uniformly without replacement with `seed`.
    pub fn fit_capped(
        predictions: &[f64],
        measurements: &[f64],
        kernel: Kernel,
        max_points: usize,
        seed: u64,
    ) -> Result<Self> {
        check_pairs(predictions, measurements)?;
        if max_points == 0 {
            return Err(Error::Argument("max_points must be >= 1".into()));
        }
        if predictions.len() <= max_points {
            return Self::fit(predictions, measurements, kernel);
        }
        let mut idx = rand::seq::index::sample(&mut rng_from_seed(seed), predictions.len(), max_points).into_vec();
        idx.sort_unstable();
        let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
        let m: Vec<f64> = idx.iter().map(|&i| measurements[i]).collect();
        Self::fit(&p, &m, kernel)
    }

    fn fit_with_prior(inputs: Vec<f64>, targets: Vec<f64>, kernel: Kernel, prior_mean: f64) -> Result<Self> {
        kernel.validate()?;
        let n = inputs.len();
        let gram = DMatrix::from_fn(n, n, |i, j| kernel.covariance(inputs[i], inputs[j]));
        let mut jitter = JITTER_FACTOR * kernel.signal_variance;
        for attempt in 0..=JITTER_RETRIES {
            let mut a = gram.clone();
            for i in 0..n {
                a[(i, i)] += kernel.noise_variance + jitter;
            }
            if let Some(chol) = Cholesky::new(a) {
                let centered = DVector::from_iterator(n, targets.iter().map(|y| y - prior_mean));
                let alpha = chol.solve(&centered);
                return Ok(ErrorModel {
                    inputs,
                    targets,
                    kernel,
                    prior_mean,
                    jitter,
                    chol_l: chol.l(),
                    alpha,
                });
            }
            if attempt < JITTER_RETRIES {
                jitter *= 10.0;
            }
        }
        Err(Error::Numeric(format!(
            "covariance matrix not positive definite after jitter {jitter:e}"
        )))
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    /// Diagonal jitter added on top of the noise variance during
    /// factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn posterior(&self, y_pred: f64) -> Posterior {
        let n = self.inputs.len();
        let k_star = DVector::from_iterator(n, self.inputs.iter().map(|&x| self.kernel.covariance(x, y_pred)));
        let mean = self.prior_mean + k_star.dot(&self.alpha);
        let v = self
            .chol_l
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor has a non-zero diagonal");
        let latent = (self.kernel.signal_variance - v.dot(&v)).max(0.0);
        Posterior {
            mean,
            variance: latent + self.kernel.noise_variance,
        }
    }

    /// `mean ± z·σ` at `y_pred`.
    pub fn confidence_interval(&self, y_pred: f64, z: f64) -> Result<(f64, f64)> {
        if !(z.is_finite() && z >= 0.0) {
            return Err(Error::Argument(format!("quantile z must be finite and >= 0, got {z}")));
        }
        let p = self.posterior(y_pred);
        let half = z * p.std_dev();
        Ok((p.mean - half, p.mean + half))
    }

    /// One draw from N(posterior mean, predictive variance).
    pub fn sample<R: Rng + ?Sized>(&self, y_pred: f64, rng: &mut R) -> f64 {
        let p = self.posterior(y_pred);
        let z: f64 = StandardNormal.sample(rng);
        if p.variance <= DEGENERATE_VARIANCE {
            return p.mean;
        }
        p.mean + p.std_dev() * z
    }

    /// `GPR <n> <sv> <ls> <nv> <m0>` followed by `n` lines `<input> <target>`.
    pub fn to_text(&self) -> String {
        let k = &self.kernel;
        let mut out = format!(
            "GPR {} {} {} {} {}\n",
            self.inputs.len(),
            k.signal_variance,
            k.length_scale,
            k.noise_variance,
            self.prior_mean
        );
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            writeln!(out, "{x} {y}").unwrap();
        }
        out
    }

    /// Parses [`ErrorModel::to_text`] output and refits the factorization.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty GPR file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "GPR" {
            return Err(parse_err(1, "expected `GPR <n> <sv> <ls> <nv> <m0>`"));
        }
        let n: usize = fields[1].parse().map_err(|_| parse_err(1, "invalid point count"))?;
        let nums = fields[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| parse_err(1, format!("invalid number `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let kernel = Kernel::new(nums[0], nums[1], nums[2])?;
        let prior_mean = nums[3];

        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for (i, line) in lines {
            let pair: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(i + 1, "invalid number"))?;
            if pair.len() != 2 {
                return Err(parse_err(i + 1, "expected `<input> <target>`"));
            }
            inputs.push(pair[0]);
            targets.push(pair[1]);
        }
        if inputs.len() != n {
            return Err(Error::Format(format!("GPR header declares {n} points, found {}", inputs.len())));
        }
        check_pairs(&inputs, &targets)?;
        Self::fit_with_prior(inputs, targets, kernel, prior_mean)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}
