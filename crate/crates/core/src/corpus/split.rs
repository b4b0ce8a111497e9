use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DialogueSample;
use crate::error::{Error, Result};

pub const NUM_BUCKETS: usize = 4;

const VALID_FRACTION: f64 = 0.05;
const TEST_FRACTION: f64 = 0.10;
const MIN_SAMPLES: usize = 20;

/// Upper response-length bounds for all but the last bucket.
///
/// A response of length `n` lands in the first bucket whose bound is `>= n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketBounds {
    pub bounds: Vec<usize>,
}

impl BucketBounds {
    /// Quantile bounds over `lengths`, using the last element of each quantile.
    pub fn from_lengths(lengths: &[usize], buckets: usize) -> Self {
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let bounds = (1..buckets)
            .map(|k| {
                if n == 0 {
                    0
                } else {
                    sorted[((k * n) / buckets).max(1) - 1]
                }
            })
            .collect();
        Self { bounds }
    }

    pub fn num_buckets(&self) -> usize {
        self.bounds.len() + 1
    }

    pub fn bucket_of(&self, len: usize) -> usize {
        self.bounds.iter().filter(|&&b| len > b).count()
    }
}

/// Index-level record of a split, enough to replay it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub buckets: BucketBounds,
}

#[derive(Debug, Clone)]
pub struct SplitCorpus {
    pub train: Vec<DialogueSample>,
    pub valid: Vec<DialogueSample>,
    pub test: Vec<DialogueSample>,
    pub buckets: BucketBounds,
    pub manifest: SplitManifest,
}

impl SplitCorpus {
    /// Rebuilds a split from a manifest.
    pub fn from_manifest(samples: &[DialogueSample], manifest: SplitManifest) -> Result<Self> {
        let pick = |idx: &[usize]| -> Result<Vec<DialogueSample>> {
            idx.iter()
                .map(|&i| {
                    samples
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::Data(format!("split index {i} out of range")))
                })
                .collect()
        };
        Ok(Self {
            train: pick(&manifest.train)?,
            valid: pick(&manifest.valid)?,
            test: pick(&manifest.test)?,
            buckets: manifest.buckets.clone(),
            manifest,
        })
    }

    /// Members of `split` grouped by bucket.
    pub fn bucketed<'a>(&self, split: &'a [DialogueSample]) -> Vec<Vec<&'a DialogueSample>> {
        let mut out = vec![Vec::new(); self.buckets.num_buckets()];
        for s in split {
            out[self.buckets.bucket_of(s.response.len())].push(s);
        }
        out
    }
}

/// Shuffled 85/5/10 train/valid/test split with response-length buckets
/// computed on the training portion.
pub fn split_and_bucket<R: Rng + ?Sized>(
    samples: &[DialogueSample],
    rng: &mut R,
) -> Result<SplitCorpus> {
    split_and_bucket_with(samples, rng, NUM_BUCKETS)
}

pub fn split_and_bucket_with<R: Rng + ?Sized>(
    samples: &[DialogueSample],
    rng: &mut R,
    buckets: usize,
) -> Result<SplitCorpus> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::Data(format!(
            "need at least {MIN_SAMPLES} samples to split, got {n}"
        )));
    }
    if buckets == 0 {
        return Err(Error::Config("bucket count must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_valid = ((n as f64) * VALID_FRACTION).round().max(1.0) as usize;
    let n_test = ((n as f64) * TEST_FRACTION).round().max(1.0) as usize;
    let valid = order[..n_valid].to_vec();
    let test = order[n_valid..n_valid + n_test].to_vec();
    let train = order[n_valid + n_test..].to_vec();
    let lengths: Vec<usize> = train.iter().map(|&i| samples[i].response.len()).collect();
    let manifest = SplitManifest {
        train,
        valid,
        test,
        buckets: BucketBounds::from_lengths(&lengths, buckets),
    };
    SplitCorpus::from_manifest(samples, manifest)
}
