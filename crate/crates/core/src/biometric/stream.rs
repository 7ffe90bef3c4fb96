//! Live sensor accumulation, CSV ingestion and a simulated wristband.

use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::signal::{sample_at_measure_start, Baseline, ScSample, SAMPLE_INTERVAL_S};
use super::{BiometricError, QscLevel};

/// Append-only sample buffer: one writer (the sensor feed), many readers.
///
/// Readers only hold the lock for a binary search and a two-element copy.
#[derive(Debug, Default)]
pub struct ScStream {
    samples: RwLock<Vec<ScSample>>,
}

impl ScStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<ScSample>) -> Result<Self, BiometricError> {
        let s = Self::new();
        for x in samples {
            s.push(x)?;
        }
        Ok(s)
    }

    pub fn push(&self, sample: ScSample) -> Result<(), BiometricError> {
        if !sample.t_s.is_finite() || !sample.microsiemens.is_finite() || sample.microsiemens < 0.0 {
            return Err(BiometricError::InvalidSample(format!("{sample:?}")));
        }
        let mut guard = self.samples.write().expect("sensor lock poisoned");
        if let Some(last) = guard.last() {
            if sample.t_s <= last.t_s {
                return Err(BiometricError::NonMonotonic { prev: last.t_s, next: sample.t_s });
            }
        }
        guard.push(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.read().expect("sensor lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latest(&self) -> Option<ScSample> {
        self.samples.read().expect("sensor lock poisoned").last().copied()
    }

    /// Copy of the samples in `[from_s, to_s]`.
    pub fn range(&self, from_s: f64, to_s: f64) -> Vec<ScSample> {
        let guard = self.samples.read().expect("sensor lock poisoned");
        let a = guard.partition_point(|s| s.t_s < from_s);
        let b = guard.partition_point(|s| s.t_s <= to_s);
        guard[a..b.max(a)].to_vec()
    }

    pub fn level_at(&self, baseline: &Baseline, t_s: f64) -> QscLevel {
        let guard = self.samples.read().expect("sensor lock poisoned");
        let upto = guard.partition_point(|s| s.t_s <= t_s + 1e-9);
        let tail = &guard[upto.saturating_sub(2)..upto];
        sample_at_measure_start(tail, baseline, t_s)
    }
}

/// Parses one `t_s,microsiemens` line.
pub fn parse_sc_line(line: &str) -> Result<ScSample, BiometricError> {
    let bad = || BiometricError::InvalidSample(line.to_string());
    let (t, v) = line.trim().split_once(',').ok_or_else(bad)?;
    let t: f64 = t.trim().parse().map_err(|_| bad())?;
    let v: f64 = v.trim().parse().map_err(|_| bad())?;
    Ok(ScSample::new(t, v))
}

/// Reads a CSV of samples. A `t_s,microsiemens` header line is allowed.
pub fn read_sc_csv<R: BufRead>(r: R) -> Result<Vec<ScSample>, BiometricError> {
    let mut out: Vec<ScSample> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (i == 0 && line.trim_start().starts_with("t_s")) {
            continue;
        }
        let s = parse_sc_line(&line)?;
        if let Some(prev) = out.last() {
            if s.t_s <= prev.t_s {
                return Err(BiometricError::NonMonotonic { prev: prev.t_s, next: s.t_s });
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// Accepts TCP connections on `listener` and appends every CSV line received
/// to `stream`. Malformed lines are logged and skipped.
pub fn spawn_tcp_ingest(listener: TcpListener, stream: Arc<ScStream>) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let addr = listener.local_addr()?;
    let handle = thread::Builder::new().name("sc-ingest".into()).spawn(move || {
        for conn in listener.incoming() {
            let Ok(conn) = conn else { continue };
            info!("sensor feed connected from {:?}", conn.peer_addr().ok());
            for line in BufReader::new(conn).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                match parse_sc_line(&line).and_then(|s| stream.push(s)) {
                    Ok(()) => {}
                    Err(e) => warn!("sensor feed: {e}"),
                }
            }
        }
    })?;
    Ok((addr, handle))
}

/// Seeded stand-in for the wristband used in headless runs.
///
/// The signal is `base + x_t` with `x_t = phi * x_{t-1} + noise`. With the
/// default `phi = 0.5` the per-sample difference has the same variance as the
/// level itself, so ∂SC is roughly unit-variance.
#[derive(Debug, Clone)]
pub struct SimulatedSensor {
    pub base_us: f64,
    pub level_sd: f64,
    pub phi: f64,
    pub seed: u64,
}

impl Default for SimulatedSensor {
    fn default() -> Self {
        SimulatedSensor { base_us: 2.0, level_sd: 0.05, phi: 0.5, seed: 0 }
    }
}

impl SimulatedSensor {
    /// Samples at 4 Hz for `t` in `[t0_s, t1_s)`.
    pub fn generate(&self, t0_s: f64, t1_s: f64) -> Vec<ScSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let innovation = Normal::new(0.0, self.level_sd * (1.0 - self.phi * self.phi).sqrt()).expect("finite sd");
        let mut x = Normal::new(0.0, self.level_sd).expect("finite sd").sample(&mut rng);
        let n = ((t1_s - t0_s) / SAMPLE_INTERVAL_S).ceil().max(0.0) as usize;
        (0..n)
            .map(|i| {
                x = self.phi * x + innovation.sample(&mut rng);
                ScSample::new(t0_s + i as f64 * SAMPLE_INTERVAL_S, (self.base_us + x).max(0.0))
            })
            .collect()
    }
}
