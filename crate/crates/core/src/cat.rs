//! Channel-aware opportunistic transmission (CAT / ML-CAT) and the periodic
//! baseline, replayed over a trace against a [`DdsModel`].
//!
//! Data from a constant-rate source accumulates in a buffer. At every tick
//! the scheme decides whether to send the whole buffer. CAT and ML-CAT draw
//! against
//!
//! ```text
//! p = 0                                          if dt < t_min
//! p = 1                                          if dt > t_max
//! p = ((phi - phi_min) / (phi_max - phi_min))^alpha   otherwise
//! ```
//!
//! where `dt` is the time since the last transmission and `phi` the channel
//! metric (SINR for CAT, the predicted data rate for ML-CAT) clamped into
//! `[phi_min, phi_max]`. The data rate of each transmission is a stochastic
//! DDS draw.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dds::DdsModel;
use crate::error::{Error, Result};
use crate::metrics::{quantile_sorted, summarize, timed, SummaryStats};
use crate::seed::{rng_from_seed, SimRng};
use crate::trace::{FeatureVector, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// CAT: the measured SINR in dB.
    Sinr,
    /// ML-CAT: predicted data rate in MBit/s for the current buffer size.
    RfPrediction,
    /// Fixed-interval baseline; no metric.
    Periodic,
}

impl MetricKind {
    /// Scheme label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            MetricKind::Sinr => "cat",
            MetricKind::RfPrediction => "ml-cat",
            MetricKind::Periodic => "periodic",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cat" | "sinr" => Ok(MetricKind::Sinr),
            "ml-cat" | "mlcat" | "rf" | "rf_prediction" => Ok(MetricKind::RfPrediction),
            "periodic" => Ok(MetricKind::Periodic),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatConfig {
    /// Seconds.
    pub t_min: f64,
    /// Seconds.
    pub t_max: f64,
    pub alpha: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub metric: MetricKind,
    /// Bytes per second.
    pub source_rate: u64,
    /// Seconds between decisions.
    pub tick: f64,
    /// Seconds, periodic baseline only.
    pub periodic_interval: f64,
    pub seed: u64,
}

impl Default for CatConfig {
    fn default() -> Self {
        CatConfig {
            t_min: 10.0,
            t_max: 120.0,
            alpha: 6.0,
            phi_min: 0.0,
            phi_max: 30.0,
            metric: MetricKind::Sinr,
            source_rate: 50_000,
            tick: 1.0,
            periodic_interval: 10.0,
            seed: 0,
        }
    }
}

impl CatConfig {
    pub fn with_metric(metric: MetricKind) -> Self {
        CatConfig {
            metric,
            ..CatConfig::default()
        }
    }

    /// Bytes produced by the source per tick. Must be a whole number.
    pub fn bytes_per_tick(&self) -> u64 {
        (self.source_rate as f64 * self.tick).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.t_min, self.t_max, self.alpha, self.phi_min, self.phi_max, self.tick, self.periodic_interval]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("non-finite CAT parameter".into()));
        }
        if !(0.0 <= self.t_min && self.t_min < self.t_max) {
            return Err(Error::Config(format!(
                "need 0 <= t_min < t_max, got t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.phi_min >= self.phi_max {
            return Err(Error::Config(format!(
                "need phi_min < phi_max, got {} and {}",
                self.phi_min, self.phi_max
            )));
        }
        if self.source_rate == 0 {
            return Err(Error::Config("source_rate must be > 0".into()));
        }
        if self.tick <= 0.0 {
            return Err(Error::Config(format!("tick must be > 0, got {}", self.tick)));
        }
        if self.periodic_interval <= 0.0 {
            return Err(Error::Config("periodic_interval must be > 0".into()));
        }
        let per_tick = self.source_rate as f64 * self.tick;
        if (per_tick - per_tick.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "source_rate * tick must be a whole number of bytes, got {per_tick}"
            )));
        }
        Ok(())
    }
}

/// Transmission probability for metric `phi` after `dt` seconds without a
/// transmission. The boundaries `dt == t_min` and `dt == t_max` use the
/// power-law branch.
pub fn transmission_probability(phi: f64, dt: f64, cfg: &CatConfig) -> f64 {
    if dt < cfg.t_min {
        return 0.0;
    }
    if dt > cfg.t_max {
        return 1.0;
    }
    let phi = phi.clamp(cfg.phi_min, cfg.phi_max);
    ((phi - cfg.phi_min) / (cfg.phi_max - cfg.phi_min)).powf(cfg.alpha)
}

/// One Bernoulli trial against [`transmission_probability`]; consumes exactly
/// one uniform draw.
pub fn transmission_decision<R: Rng + ?Sized>(phi: f64, dt: f64, cfg: &CatConfig, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < transmission_probability(phi, dt, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferState {
    pub bytes: u64,
    /// Seconds.
    pub last_tx_time: f64,
}

/// Current value of the scheme's metric. ML-CAT evaluates the deterministic
/// DDS prediction with the payload replaced by the buffered byte count.
pub fn metric_value(
    kind: MetricKind,
    x: &FeatureVector,
    buffer: &BufferState,
    model: Option<&DdsModel>,
) -> Result<f64> {
    match kind {
        MetricKind::Sinr => Ok(x.sinr),
        MetricKind::RfPrediction => {
            let model = model.ok_or_else(|| Error::Config("the ml-cat metric needs a prediction model".into()))?;
            Ok(model.predict_mean(&x.with_payload(buffer.bytes as f64)))
        }
        MetricKind::Periodic => Ok(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionEvent {
    /// Seconds since the start of the trace.
    pub time: f64,
    /// Bytes.
    pub payload: u64,
    /// Sampled end-to-end data rate, MBit/s.
    pub datarate: f64,
    /// Age of the oldest buffered byte, seconds.
    pub buffer_delay: f64,
    pub metric_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub label: String,
    pub events: Vec<TransmissionEvent>,
    /// Data-rate summary, `None` when nothing was sent.
    pub summary: Option<SummaryStats>,
    pub final_buffer_bytes: u64,
    /// Simulated seconds (number of ticks × tick).
    pub duration: f64,
    /// Bytes produced by the source over the run.
    pub generated_bytes: u64,
}

impl RunResult {
    pub fn transmitted_bytes(&self) -> u64 {
        self.events.iter().map(|e| e.payload).sum()
    }

    pub fn mean_buffer_delay(&self) -> Option<f64> {
        if self.events.is_empty() {
            None
        } else {
            Some(self.events.iter().map(|e| e.buffer_delay).sum::<f64>() / self.events.len() as f64)
        }
    }

    /// `time,payload,datarate,buffer_delay,metric` rows with a header.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("time,payload,datarate,buffer_delay,metric\n");
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.time, e.payload, e.datarate, e.buffer_delay, e.metric_value
            ));
        }
        out
    }
}

/// Replays `trace` under `cfg`.
///
/// Ticks run at `now = k·tick` for `k = 1..=K` with
/// `K = floor((t_last - t_first) / tick) + 1`. Tick `k` adds
/// `source_rate·tick` bytes and uses the latest trace sample at or before
/// `t_first + (k-1)·tick`. A transmission sends the whole buffer.
pub fn run_scheme(trace: &Trace, cfg: &CatConfig, model: &DdsModel) -> Result<RunResult> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(Error::Argument("trace is empty".into()));
    }
    let ticks = trace.ticks();
    let t0 = ticks[0].0;
    let span = ticks[ticks.len() - 1].0 - t0;
    let steps = (span / cfg.tick + 1e-9).floor() as u64 + 1;
    let per_tick = cfg.bytes_per_tick();

    let mut rng: SimRng = rng_from_seed(cfg.seed);
    let mut buffer = BufferState {
        bytes: 0,
        last_tx_time: 0.0,
    };
    let mut events = Vec::new();
    let mut cursor = 0usize;

    for k in 1..=steps {
        let now = k as f64 * cfg.tick;
        let sample_time = t0 + (k - 1) as f64 * cfg.tick;
        while cursor + 1 < ticks.len() && ticks[cursor + 1].0 <= sample_time + 1e-9 {
            cursor += 1;
        }
        let features = &ticks[cursor].1;

        buffer.bytes += per_tick;
        let dt = now - buffer.last_tx_time;
        let (send, phi) = match cfg.metric {
            MetricKind::Periodic => (dt >= cfg.periodic_interval - 1e-9, 0.0),
            kind => {
                let phi = metric_value(kind, features, &buffer, Some(model))?;
                (transmission_decision(phi, dt, cfg, &mut rng), phi)
            }
        };
        if send {
            let datarate = model.predict(&features.with_payload(buffer.bytes as f64), &mut rng);
            events.push(TransmissionEvent {
                time: now,
                payload: buffer.bytes,
                datarate,
                buffer_delay: dt,
                metric_value: phi,
            });
            buffer.bytes = 0;
            buffer.last_tx_time = now;
        }
    }

    let rates: Vec<f64> = events.iter().map(|e| e.datarate).collect();
    Ok(RunResult {
        label: cfg.metric.label().to_string(),
        summary: if rates.is_empty() { None } else { Some(summarize(&rates)?) },
        events,
        final_buffer_bytes: buffer.bytes,
        duration: steps as f64 * cfg.tick,
        generated_bytes: per_tick * steps,
    })
}

/// [`run_scheme`] with its wall-clock duration in seconds.
pub fn run_scheme_timed(trace: &Trace, cfg: &CatConfig, model: &DdsModel) -> Result<(RunResult, f64)> {
    let (res, secs) = timed(|| run_scheme(trace, cfg, model));
    Ok((res?, secs))
}

/// One row of a scheme comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub n_events: usize,
    pub mean_rate: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean_delay: f64,
    /// `100 · (mean_rate - baseline_mean) / baseline_mean`.
    pub uplift_pct: f64,
}

pub const SUMMARY_HEADER: &str = "label,n_events,mean_rate,q1,median,q3,mean_delay,uplift_pct";

impl ComparisonRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.label, self.n_events, self.mean_rate, self.q1, self.median, self.q3, self.mean_delay, self.uplift_pct
        )
    }
}

/// Compares runs by event data rate against the run labelled `baseline`.
pub fn compare_runs(results: &[RunResult], baseline: &str) -> Result<Vec<ComparisonRow>> {
    if results.len() < 2 {
        return Err(Error::Argument(format!("need at least two runs, got {}", results.len())));
    }
    let base = results
        .iter()
        .find(|r| r.label == baseline)
        .ok_or_else(|| Error::Argument(format!("baseline `{baseline}` not among the runs")))?;
    let base_mean = base
        .summary
        .ok_or_else(|| Error::Argument(format!("no events in baseline run `{baseline}`")))?
        .mean;
    results
        .iter()
        .map(|r| {
            let s = r
                .summary
                .ok_or_else(|| Error::Argument(format!("no events in run `{}`", r.label)))?;
            let mut rates: Vec<f64> = r.events.iter().map(|e| e.datarate).collect();
            rates.sort_by(f64::total_cmp);
            Ok(ComparisonRow {
                label: r.label.clone(),
                n_events: r.events.len(),
                mean_rate: s.mean,
                q1: quantile_sorted(&rates, 0.25),
                median: quantile_sorted(&rates, 0.5),
                q3: quantile_sorted(&rates, 0.75),
                mean_delay: r.mean_buffer_delay().unwrap_or(0.0),
                uplift_pct: 100.0 * (s.mean - base_mean) / base_mean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ForestConfig, Node, RandomForest, RegressionTree};
    use crate::gpr::{ErrorModel, Kernel};
    use crate::trace::{FEATURE_COUNT, PAYLOAD};

    fn features(sinr: f64) -> FeatureVector {
        FeatureVector::from_array([1e6, -90.0, -10.0, sinr, 9.0, 50.0, 3.0, 1800.0, 7.0, 30.0])
    }

    fn trace(secs: usize, sinr: impl Fn(usize) -> f64) -> Trace {
        Trace::new((0..secs).map(|t| (t as f64, features(sinr(t)))).collect()).unwrap()
    }

    /// Stump forest (constant `value`) with a near-deterministic error model.
    fn constant_model(value: f64) -> DdsModel {
        let tree = RegressionTree::from_nodes(vec![Node::Leaf { value, count: 1 }], 0, FEATURE_COUNT).unwrap();
        let forest = RandomForest::from_trees(vec![tree], ForestConfig::default()).unwrap();
        let gp = ErrorModel::fit(&[value], &[value], Kernel::new(1.0, 1.0, 0.01).unwrap()).unwrap();
        DdsModel::from_parts(forest, gp, 0.0, 40.0).unwrap()
    }

    /// One split on payload: below 1 MB predicts 5, above predicts 20.
    fn payload_model() -> DdsModel {
        let split = Node::Split {
            feature: PAYLOAD,
            threshold: 1e6,
            left: 1,
            right: 2,
        };
        let tree = RegressionTree::from_nodes(
            vec![split, Node::Leaf { value: 5.0, count: 1 }, Node::Leaf { value: 20.0, count: 1 }],
            0,
            FEATURE_COUNT,
        )
        .unwrap();
        let forest = RandomForest::from_trees(vec![tree], ForestConfig::default()).unwrap();
        let gp = ErrorModel::fit(&[5.0, 20.0], &[5.0, 20.0], Kernel::new(50.0, 3.0, 0.01).unwrap()).unwrap();
        DdsModel::from_parts(forest, gp, 0.0, 40.0).unwrap()
    }

    #[test]
    fn probability_examples() {
        let cfg = CatConfig::default();
        assert_eq!(transmission_probability(20.0, 5.0, &cfg), 0.0);
        assert_eq!(transmission_probability(-100.0, 130.0, &cfg), 1.0);
        assert_eq!(transmission_probability(15.0, 60.0, &cfg), 0.015625);
        assert_eq!(transmission_probability(45.0, 60.0, &cfg), 1.0);
        assert_eq!(transmission_probability(-5.0, 120.0, &cfg), 0.0);
        assert_eq!(transmission_probability(30.0, 10.0, &cfg), 1.0);
    }

    #[test]
    fn metric_values() {
        let buf = BufferState {
            bytes: 500_000,
            last_tx_time: 0.0,
        };
        let x = features(12.5);
        assert_eq!(metric_value(MetricKind::Sinr, &x, &buf, None).unwrap(), 12.5);
        assert!(matches!(
            metric_value(MetricKind::RfPrediction, &x, &buf, None),
            Err(Error::Config(_))
        ));
        let stump = constant_model(7.0);
        assert_eq!(metric_value(MetricKind::RfPrediction, &x, &buf, Some(&stump)).unwrap(), 7.0);

        let m = payload_model();
        let big = BufferState { bytes: 2_000_000, ..buf };
        assert_eq!(metric_value(MetricKind::RfPrediction, &x, &buf, Some(&m)).unwrap(), 5.0);
        assert_eq!(metric_value(MetricKind::RfPrediction, &x, &big, Some(&m)).unwrap(), 20.0);
    }

    #[test]
    fn periodic_sixty_seconds() {
        let cfg = CatConfig::with_metric(MetricKind::Periodic);
        let r = run_scheme(&trace(60, |_| 10.0), &cfg, &constant_model(10.0)).unwrap();
        assert_eq!(r.events.len(), 6);
        assert!(r.events.iter().all(|e| e.payload == 500_000));
        assert_eq!(r.final_buffer_bytes, 0);
        assert_eq!(r.generated_bytes, 60 * 50_000);
        assert_eq!(r.duration, 60.0);
    }

    #[test]
    fn pinned_high_metric_sends_at_t_min() {
        let cfg = CatConfig::default();
        let r = run_scheme(&trace(100, |_| 35.0), &cfg, &constant_model(10.0)).unwrap();
        assert_eq!(r.events.len(), 10);
        for (i, e) in r.events.iter().enumerate() {
            assert_eq!(e.time, 10.0 * (i + 1) as f64);
            assert_eq!(e.payload, 500_000);
            assert_eq!(e.buffer_delay, 10.0);
        }
    }

    #[test]
    fn pinned_low_metric_waits_for_t_max() {
        let cfg = CatConfig::default();
        let r = run_scheme(&trace(400, |_| -3.0), &cfg, &constant_model(10.0)).unwrap();
        assert_eq!(r.events.len(), 3);
        for e in &r.events {
            assert_eq!(e.buffer_delay, 121.0);
            assert!(e.buffer_delay <= cfg.t_max + cfg.tick);
        }
        assert_eq!(r.transmitted_bytes() + r.final_buffer_bytes, 400 * 50_000);
    }

    #[test]
    fn runs_are_deterministic_and_conserve_bytes() {
        let t = trace(600, |s| 15.0 + 14.0 * (s as f64 / 9.0).sin());
        let m = payload_model();
        for metric in [MetricKind::Sinr, MetricKind::RfPrediction, MetricKind::Periodic] {
            let cfg = CatConfig {
                seed: 77,
                ..CatConfig::with_metric(metric)
            };
            let a = run_scheme(&t, &cfg, &m).unwrap();
            assert_eq!(a, run_scheme(&t, &cfg, &m).unwrap());
            assert_eq!(a.transmitted_bytes() + a.final_buffer_bytes, a.generated_bytes);
            assert!(a.events.windows(2).all(|w| w[0].time < w[1].time));
            assert!(a.events.iter().all(|e| e.payload > 0 && e.buffer_delay <= cfg.t_max + cfg.tick));
        }
    }

    #[test]
    fn config_validation() {
        let ok = CatConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            CatConfig { t_min: 130.0, ..ok.clone() },
            CatConfig { alpha: 0.0, ..ok.clone() },
            CatConfig { phi_min: 30.0, ..ok.clone() },
            CatConfig { source_rate: 0, ..ok.clone() },
            CatConfig { tick: 0.0, ..ok.clone() },
            CatConfig { source_rate: 3, tick: 0.5, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    fn run_with_rates(label: &str, rates: &[f64]) -> RunResult {
        let events: Vec<TransmissionEvent> = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| TransmissionEvent {
                time: (i + 1) as f64,
                payload: 1,
                datarate: r,
                buffer_delay: 10.0,
                metric_value: 0.0,
            })
            .collect();
        RunResult {
            label: label.into(),
            summary: if rates.is_empty() { None } else { Some(summarize(rates).unwrap()) },
            events,
            final_buffer_bytes: 0,
            duration: rates.len() as f64,
            generated_bytes: rates.len() as u64,
        }
    }

    #[test]
    fn comparison_uplift() {
        let base = run_with_rates("periodic", &[8.0, 12.0]);
        let cand = run_with_rates("cat", &[14.4, 14.4]);
        let rows = compare_runs(&[base.clone(), cand], "periodic").unwrap();
        assert_eq!(rows[0].uplift_pct, 0.0);
        assert!((rows[1].uplift_pct - 44.0).abs() < 1e-9);
        assert!(compare_runs(&[base.clone(), base.clone()], "periodic")
            .unwrap()
            .iter()
            .all(|r| r.uplift_pct == 0.0));
        assert!(compare_runs(std::slice::from_ref(&base), "periodic").is_err());
        assert!(compare_runs(&[base.clone(), base.clone()], "ml-cat").is_err());

        let empty = [run_with_rates("periodic", &[]), run_with_rates("cat", &[])];
        let err = compare_runs(&empty, "periodic").unwrap_err();
        assert!(err.to_string().contains("no events"));
    }

    #[test]
    fn events_csv_layout() {
        let r = run_with_rates("cat", &[1.5]);
        assert_eq!(r.events_csv(), "time,payload,datarate,buffer_delay,metric\n1,1,1.5,10,0\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_cfg() -> impl Strategy<Value = CatConfig> {
            (0.0f64..50.0, 1.0f64..200.0, 0.1f64..10.0, -20.0f64..20.0, 1.0f64..60.0).prop_map(
                |(t_min, span, alpha, phi_min, width)| CatConfig {
                    t_min,
                    t_max: t_min + span,
                    alpha,
                    phi_min,
                    phi_max: phi_min + width,
                    ..CatConfig::default()
                },
            )
        }

        proptest! {
            #[test]
            fn branches_range_and_monotonicity(cfg in arb_cfg(), phi in -100.0f64..100.0, dphi in 0.0f64..50.0, dt in 0.0f64..300.0) {
                let p = transmission_probability(phi, dt, &cfg);
                prop_assert!((0.0..=1.0).contains(&p));
                if dt < cfg.t_min {
                    prop_assert_eq!(p, 0.0);
                } else if dt > cfg.t_max {
                    prop_assert_eq!(p, 1.0);
                } else {
                    prop_assert!(transmission_probability(phi + dphi, dt, &cfg) >= p);
                }
            }
        }
    }
}
