//! Temperature-scaled dataset mixing and reproducible sampling.
//!
//! Training streams over several datasets draw each position from a
//! categorical distribution with weights proportional to `size^(1/T)`
//! (optionally capping the effective sizes at `K`), the up-sampling scheme
//! used for balancing multi-task mixtures. Within a dataset, example indices
//! cycle through per-epoch random permutations so every example appears once
//! before any repeats.
//!
//! Everything is driven by explicit seeds: the same spec, seed and length
//! always produce the same stream.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The canonical seeds for the five-run few-shot protocol.
pub const FEW_SHOT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// One dataset in a mixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixEntry {
    pub dataset: String,
    pub size: usize,
}

/// A mixture: datasets with sizes, a temperature, and an optional size cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixSpecRepr")]
pub struct MixSpec {
    entries: Vec<MixEntry>,
    temperature: f64,
    cap: Option<usize>,
}

#[derive(Deserialize)]
struct MixSpecRepr {
    entries: Vec<MixEntry>,
    temperature: f64,
    cap: Option<usize>,
}

impl TryFrom<MixSpecRepr> for MixSpec {
    type Error = MixError;
    fn try_from(repr: MixSpecRepr) -> Result<MixSpec, MixError> {
        MixSpec::new(repr.entries, repr.temperature, repr.cap)
    }
}

/// Errors from mixture construction and sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MixError {
    EmptySpec,
    ZeroSize(String),
    InvalidTemperature,
    InvalidCap,
    /// Requested more few-shot examples than the dataset has.
    NTooLarge { n: usize, size: usize },
}

impl fmt::Display for MixError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixError::EmptySpec => write!(f, "mixture needs at least one dataset"),
            MixError::ZeroSize(name) => write!(f, "dataset '{name}' has size 0"),
            MixError::InvalidTemperature => write!(f, "temperature must be positive and finite"),
            MixError::InvalidCap => write!(f, "cap must be positive"),
            MixError::NTooLarge { n, size } => {
                write!(f, "cannot sample {n} distinct examples from {size}")
            }
        }
    }
}

impl std::error::Error for MixError {}

impl MixSpec {
    pub fn new(
        entries: Vec<MixEntry>,
        temperature: f64,
        cap: Option<usize>,
    ) -> Result<MixSpec, MixError> {
        if entries.is_empty() {
            return Err(MixError::EmptySpec);
        }
        for entry in &entries {
            if entry.size == 0 {
                return Err(MixError::ZeroSize(entry.dataset.clone()));
            }
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(MixError::InvalidTemperature);
        }
        if cap == Some(0) {
            return Err(MixError::InvalidCap);
        }
        Ok(MixSpec {
            entries,
            temperature,
            cap,
        })
    }

    pub fn entries(&self) -> &[MixEntry] {
        &self.entries
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }
}

/// Normalized sampling weights: `w_i = m_i^(1/T) / Σ_j m_j^(1/T)` with
/// `m_i = min(n_i, K)` when a cap is set.
pub fn mixing_weights(spec: &MixSpec) -> Vec<f64> {
    let exponent = 1.0 / spec.temperature;
    let scaled: Vec<f64> = spec
        .entries
        .iter()
        .map(|entry| {
            let effective = match spec.cap {
                Some(cap) => entry.size.min(cap),
                None => entry.size,
            };
            (effective as f64).powf(exponent)
        })
        .collect();
    let total: f64 = scaled.iter().sum();
    scaled.into_iter().map(|value| value / total).collect()
}

/// One stream position: which mixture entry to draw from, and which example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamItem {
    /// Index into [`MixSpec::entries`].
    pub entry: usize,
    /// Example index within that dataset.
    pub index: usize,
}

/// A seeded, reproducible interleaved stream over a mixture.
///
/// Owned by a single consumer; run independent streams (distinct seeds) for
/// parallelism.
pub struct StreamSampler {
    weights: Vec<f64>,
    sizes: Vec<usize>,
    pools: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl StreamSampler {
    pub fn new(spec: &MixSpec, rng_seed: u64) -> StreamSampler {
        StreamSampler {
            weights: mixing_weights(spec),
            sizes: spec.entries.iter().map(|e| e.size).collect(),
            pools: vec![Vec::new(); spec.entries.len()],
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    fn draw_entry(&mut self) -> usize {
        let r: f64 = self.rng.gen();
        let mut cumulative = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            cumulative += w;
            if r < cumulative {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

impl Iterator for StreamSampler {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        let entry = self.draw_entry();
        let pool = &mut self.pools[entry];
        if pool.is_empty() {
            // new epoch for this dataset: fresh shuffled permutation,
            // consumed back to front
            *pool = (0..self.sizes[entry]).collect();
            pool.shuffle(&mut self.rng);
        }
        let index = pool.pop().expect("sizes are positive");
        Some(StreamItem { entry, index })
    }
}

/// Materializes the first `length` items of the stream for `(spec, seed)`.
pub fn sample_stream(spec: &MixSpec, rng_seed: u64, length: usize) -> Vec<StreamItem> {
    StreamSampler::new(spec, rng_seed).take(length).collect()
}

/// Draws `n` distinct example indices uniformly without replacement,
/// determined entirely by `seed`. Use [`FEW_SHOT_SEEDS`] for the standard
/// five-run protocol.
pub fn sample_few_shot(dataset_size: usize, n: usize, seed: u64) -> Result<Vec<usize>, MixError> {
    if n > dataset_size {
        return Err(MixError::NTooLarge {
            n,
            size: dataset_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..dataset_size).collect();
    // partial Fisher-Yates: the first n positions are a uniform sample
    for i in 0..n {
        let j = rng.gen_range(i..dataset_size);
        indices.swap(i, j);
    }
    indices.truncate(n);
    Ok(indices)
}
