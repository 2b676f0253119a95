//! Simulated power traces under a Hamming-weight leakage model.
//!
//! Each trace has `samples_per_trace` samples. Thirty-two of them are
//! points of interest (POIs): POI `k < 16` carries the Hamming weight of the
//! first-round S-box output of cell `k`, POI `16 + k` the second-round
//! S-box output of cell `k`. Every sample gets `baseline` plus Gaussian
//! noise; averaging over `repeats` acquisitions divides the noise standard
//! deviation by `sqrt(repeats)`.
//!
//! Randomness is derived per trace from `(seed, trace_index)` using
//! independent ChaCha streams, so traces can be generated in any order or
//! in parallel and still be bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::cipher::{self, KeySchedule, MasterKey, Nibble, State};

/// Number of leaking S-box evaluations per trace (16 cells x 2 rounds).
pub const NUM_POIS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LeakageError {
    #[error("noise_sigma must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("baseline must be finite, got {0}")]
    InvalidBaseline(f64),
    #[error("repeats must be >= 1")]
    ZeroRepeats,
    #[error("poi_stride must be >= 1")]
    ZeroStride,
    #[error(
        "last point of interest poi_offset + 31*poi_stride = {last_poi} \
         (poi_offset = {poi_offset}, poi_stride = {poi_stride}) must be below \
         samples_per_trace = {samples_per_trace}"
    )]
    PoiOutOfRange {
        poi_offset: usize,
        poi_stride: usize,
        last_poi: usize,
        samples_per_trace: usize,
    },
    #[error("a trace set needs at least one trace")]
    EmptyTraceSet,
    #[error("trace {index} has {found} samples, expected {expected}")]
    RaggedTraceSet {
        index: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageConfig {
    /// Standard deviation of one acquisition's noise, in Hamming-weight units.
    pub noise_sigma: f64,
    pub samples_per_trace: usize,
    /// Sample index of POI 0.
    pub poi_offset: usize,
    /// Distance between consecutive POIs.
    pub poi_stride: usize,
    /// Number of acquisitions averaged into one stored trace.
    pub repeats: u32,
    pub baseline: f64,
    pub seed: u64,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        LeakageConfig {
            noise_sigma: 1.0,
            samples_per_trace: 512,
            poi_offset: 16,
            poi_stride: 15,
            repeats: 1,
            baseline: 0.0,
            seed: 0,
        }
    }
}

impl LeakageConfig {
    pub fn noiseless() -> Self {
        LeakageConfig {
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LeakageError> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(LeakageError::InvalidNoise(self.noise_sigma));
        }
        if !self.baseline.is_finite() {
            return Err(LeakageError::InvalidBaseline(self.baseline));
        }
        if self.repeats == 0 {
            return Err(LeakageError::ZeroRepeats);
        }
        if self.poi_stride == 0 {
            return Err(LeakageError::ZeroStride);
        }
        let last_poi = self
            .poi_stride
            .checked_mul(NUM_POIS - 1)
            .and_then(|x| x.checked_add(self.poi_offset));
        match last_poi {
            Some(last) if last < self.samples_per_trace => Ok(()),
            _ => Err(LeakageError::PoiOutOfRange {
                poi_offset: self.poi_offset,
                poi_stride: self.poi_stride,
                last_poi: last_poi.unwrap_or(usize::MAX),
                samples_per_trace: self.samples_per_trace,
            }),
        }
    }

    /// Sample index of POI `k` (`k < 32`).
    pub fn poi_index(&self, k: usize) -> usize {
        self.poi_offset + k * self.poi_stride
    }

    /// Sample index carrying the S-box output of `cell` in `round` (1 or 2).
    pub fn poi_for(&self, round: u8, cell: usize) -> usize {
        self.poi_index((round as usize - 1) * 16 + cell)
    }

    /// Noise standard deviation left after averaging.
    pub fn effective_noise_sigma(&self) -> f64 {
        self.noise_sigma / f64::from(self.repeats).sqrt()
    }
}

/// One recorded encryption.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub plaintext: u64,
    pub ciphertext: u64,
    pub samples: Vec<f64>,
}

/// `D >= 1` traces sharing one sample length. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    traces: Vec<Trace>,
    config: Option<LeakageConfig>,
    key_known: Option<MasterKey>,
}

impl TraceSet {
    pub fn new(
        traces: Vec<Trace>,
        config: Option<LeakageConfig>,
        key_known: Option<MasterKey>,
    ) -> Result<TraceSet, LeakageError> {
        let expected = traces
            .first()
            .ok_or(LeakageError::EmptyTraceSet)?
            .samples
            .len();
        if let Some((index, t)) = traces
            .iter()
            .enumerate()
            .find(|(_, t)| t.samples.len() != expected)
        {
            return Err(LeakageError::RaggedTraceSet {
                index,
                expected,
                found: t.samples.len(),
            });
        }
        Ok(TraceSet {
            traces,
            config,
            key_known,
        })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn num_traces(&self) -> usize {
        self.traces.len()
    }

    pub fn samples_per_trace(&self) -> usize {
        self.traces[0].samples.len()
    }

    /// Generation parameters, when the set was simulated or a manifest
    /// supplied them.
    pub fn config(&self) -> Option<&LeakageConfig> {
        self.config.as_ref()
    }

    pub fn key_known(&self) -> Option<&MasterKey> {
        self.key_known.as_ref()
    }

    pub fn with_key(mut self, key: Option<MasterKey>) -> TraceSet {
        self.key_known = key;
        self
    }

    pub fn with_config(mut self, config: Option<LeakageConfig>) -> TraceSet {
        self.config = config;
        self
    }

    pub fn plaintexts(&self) -> impl Iterator<Item = u64> + '_ {
        self.traces.iter().map(|t| t.plaintext)
    }

    /// Index of the first trace whose ciphertext does not match
    /// `encrypt(plaintext, key)`.
    pub fn first_nonconforming(&self, key: &MasterKey) -> Option<usize> {
        let ks = cipher::key_schedule(key);
        self.traces
            .iter()
            .position(|t| cipher::encrypt_with_schedule(t.plaintext, &ks) != t.ciphertext)
    }

    /// Applies `f` to every sample, keeping plaintexts and metadata.
    pub fn map_samples<F: Fn(f64) -> f64>(&self, f: F) -> TraceSet {
        let traces = self
            .traces
            .iter()
            .map(|t| Trace {
                samples: t.samples.iter().map(|&x| f(x)).collect(),
                ..t.clone()
            })
            .collect();
        TraceSet { traces, ..*self }
    }

    /// The first `n` traces (all of them if `n >= D`).
    pub fn truncated(&self, n: usize) -> Result<TraceSet, LeakageError> {
        let n = n.min(self.traces.len());
        TraceSet::new(self.traces[..n].to_vec(), self.config, self.key_known)
    }
}

/// Noiseless leakage of one S-box output: its Hamming weight.
pub fn leak_value(v: Nibble) -> f64 {
    f64::from(v.hamming_weight())
}

/// The 32 leaking values of one encryption, in POI order.
pub fn leaking_values(plaintext: u64, ks: &KeySchedule) -> [Nibble; NUM_POIS] {
    let r1 = cipher::first_round_sbox_output(plaintext, &ks.wk);
    let r2 = cipher::sub_cell(&(cipher::mix_column(&cipher::shuffle_cell(&r1)) ^ ks.round_keys[0]));
    std::array::from_fn(|k| if k < 16 { r1.cell(k) } else { r2.cell(k - 16) })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn noise_rng(seed: u64, trace_index: u64) -> ChaCha8Rng {
    stream_rng(seed, trace_index.wrapping_mul(2).wrapping_add(1))
}

/// The plaintext `simulate_campaign` uses for trace `trace_index`.
pub fn campaign_plaintext(seed: u64, trace_index: u64) -> u64 {
    stream_rng(seed, trace_index.wrapping_mul(2)).random()
}

pub fn simulate_trace(
    plaintext: u64,
    key: &MasterKey,
    cfg: &LeakageConfig,
    trace_index: u64,
) -> Result<Trace, LeakageError> {
    cfg.validate()?;
    Ok(simulate_with_schedule(
        plaintext,
        &cipher::key_schedule(key),
        cfg,
        trace_index,
    ))
}

fn simulate_with_schedule(
    plaintext: u64,
    ks: &KeySchedule,
    cfg: &LeakageConfig,
    trace_index: u64,
) -> Trace {
    let mut samples = vec![cfg.baseline; cfg.samples_per_trace];
    let sigma = cfg.effective_noise_sigma();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("validated sigma");
        let mut rng = noise_rng(cfg.seed, trace_index);
        for s in samples.iter_mut() {
            *s += normal.sample(&mut rng);
        }
    }
    for (k, v) in leaking_values(plaintext, ks).into_iter().enumerate() {
        samples[cfg.poi_index(k)] += leak_value(v);
    }
    Trace {
        plaintext,
        ciphertext: cipher::encrypt_with_schedule(plaintext, ks),
        samples,
    }
}

/// `num_traces` traces with uniformly random plaintexts drawn from the
/// config seed.
pub fn simulate_campaign(
    num_traces: usize,
    key: &MasterKey,
    cfg: &LeakageConfig,
) -> Result<TraceSet, LeakageError> {
    cfg.validate()?;
    if num_traces == 0 {
        return Err(LeakageError::EmptyTraceSet);
    }
    let ks = cipher::key_schedule(key);
    let traces = (0..num_traces as u64)
        .into_par_iter()
        .map(|i| simulate_with_schedule(campaign_plaintext(cfg.seed, i), &ks, cfg, i))
        .collect();
    TraceSet::new(traces, Some(*cfg), Some(*key))
}

/// Simulates traces for caller-chosen plaintexts (trace `i` uses noise
/// stream `i`).
pub fn simulate_for_plaintexts(
    plaintexts: &[u64],
    key: &MasterKey,
    cfg: &LeakageConfig,
) -> Result<TraceSet, LeakageError> {
    cfg.validate()?;
    let ks = cipher::key_schedule(key);
    let traces = plaintexts
        .par_iter()
        .enumerate()
        .map(|(i, &p)| simulate_with_schedule(p, &ks, cfg, i as u64))
        .collect();
    TraceSet::new(traces, Some(*cfg), Some(*key))
}

/// Whitening key and first round key of `key`; the two secrets the attack
/// targets.
pub fn attack_targets(key: &MasterKey) -> (State, State) {
    let ks = cipher::key_schedule(key);
    (ks.wk, ks.round_keys[0])
}
