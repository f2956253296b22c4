//! Synthetic benchmark generator.
//!
//! The data rate is a smooth function of SINR, RSRP and payload size plus
//! heteroscedastic Gaussian noise; the remaining features are derived from
//! the channel state or drawn independently. Replay traces oscillate the
//! channel quality so opportunistic schemes have something to exploit.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::seed::{derive_seed, rng_from_seed, SimRng};
use crate::trace::{Dataset, FeatureVector, Trace, TransmissionRecord};

const FREQUENCIES: [f64; 3] = [800.0, 1800.0, 2600.0];

/// Noise-free data rate in MBit/s.
pub fn mean_datarate(sinr: f64, rsrp: f64, payload: f64) -> f64 {
    let quality = 1.0 / (1.0 + (-(sinr - 8.0) / 5.0).exp());
    let coverage = ((rsrp + 120.0) / 50.0).clamp(0.0, 1.0);
    let ramp = payload / (payload + 4e5);
    28.0 * quality * (0.6 + 0.4 * coverage) * ramp
}

/// Standard deviation of the measurement noise around [`mean_datarate`].
pub fn noise_std(mean: f64) -> f64 {
    0.3 + 0.12 * mean
}

fn features_for(sinr: f64, payload: f64, rng: &mut SimRng) -> FeatureVector {
    let jitter = Normal::new(0.0, 1.0).expect("unit normal");
    let rsrp = (-115.0 + 1.2 * sinr + 5.0 * jitter.sample(rng)).clamp(-140.0, -44.0);
    let rsrq = (-19.5 + 0.4 * (sinr + 5.0) + 1.5 * jitter.sample(rng)).clamp(-20.0, -3.0);
    FeatureVector {
        payload_size: payload,
        rsrp,
        rsrq,
        sinr,
        cqi: ((sinr + 6.0) / 2.4).round().clamp(0.0, 15.0),
        asu: (rsrp + 140.0).round().clamp(0.0, 97.0),
        ta: rng.random_range(0..=30) as f64,
        carrier_freq: FREQUENCIES[rng.random_range(0..FREQUENCIES.len())],
        cell_id: 1000.0 + rng.random_range(0..10) as f64,
        velocity: rng.random_range(0.0..130.0),
    }
}

/// `n` labeled transmissions.
pub fn generate_dataset(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let records = (0..n)
        .map(|_| {
            let sinr = rng.random_range(-5.0..30.0);
            let payload = (rng.random_range(5e4f64.ln()..8e6f64.ln())).exp().round();
            let features = features_for(sinr, payload, &mut rng);
            let mean = mean_datarate(features.sinr, features.rsrp, features.payload_size);
            let noise = Normal::new(0.0, noise_std(mean)).expect("positive std");
            TransmissionRecord {
                features,
                datarate: (mean + noise.sample(&mut rng)).max(0.0),
            }
        })
        .collect();
    Dataset::new(records)
}

/// A 1 Hz trace of `seconds` ticks whose SINR follows a sine of the given
/// period (seconds) between roughly -1 and 25 dB, plus noise.
pub fn generate_trace(seconds: usize, period: f64, seed: u64) -> Result<Trace> {
    let mut rng = rng_from_seed(derive_seed(seed, 2));
    let noise = Normal::new(0.0, 1.5).expect("positive std");
    let ticks = (0..seconds)
        .map(|t| {
            let sinr = 12.0 + 13.0 * (2.0 * PI * t as f64 / period).sin() + noise.sample(&mut rng);
            (t as f64, features_for(sinr, 1.0, &mut rng))
        })
        .collect();
    Trace::new(ticks)
}
