//! The masking prior: random missing-step patterns for training and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::Mask;
use crate::Rng;

/// Steps kept observed by the forward-prediction pattern.
pub const FORWARD_PREDICTION_PREFIX: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskKind {
    /// Draw a count uniformly in `[min_missing, max_missing]`, then that many
    /// steps uniformly without replacement among the maskable ones.
    RandomCount,
    /// Observe the first `prefix` steps, hide the rest.
    ForwardPrediction { prefix: usize },
    /// Use the given pattern as is.
    Explicit(Mask),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Counted among maskable steps only; kept endpoints never count.
    pub min_missing: usize,
    pub max_missing: usize,
    pub keep_first: bool,
    pub keep_last: bool,
    pub seed: u64,
}

impl MaskSpec {
    pub fn random(min_missing: usize, max_missing: usize) -> Self {
        MaskSpec {
            kind: MaskKind::RandomCount,
            min_missing,
            max_missing,
            keep_first: true,
            keep_last: false,
            seed: 0,
        }
    }

    pub fn forward_prediction() -> Self {
        MaskSpec {
            kind: MaskKind::ForwardPrediction {
                prefix: FORWARD_PREDICTION_PREFIX,
            },
            ..MaskSpec::random(0, 0)
        }
    }

    pub fn explicit(mask: Mask) -> Self {
        MaskSpec {
            kind: MaskKind::Explicit(mask),
            ..MaskSpec::random(0, 0)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Steps eligible for masking in a sequence of length `len`.
    pub fn maskable(&self, len: usize) -> Vec<usize> {
        (0..len)
            .filter(|&t| !(self.keep_first && t == 0) && !(self.keep_last && t + 1 == len))
            .collect()
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        match &self.kind {
            MaskKind::RandomCount => {
                let available = self.maskable(len).len();
                if self.min_missing > self.max_missing || self.max_missing > available {
                    return Err(Error::Mask(format!(
                        "cannot hide {}..={} of {available} maskable steps (length {len})",
                        self.min_missing, self.max_missing
                    )));
                }
            }
            MaskKind::ForwardPrediction { .. } => {}
            MaskKind::Explicit(mask) => {
                if mask.len() != len {
                    return Err(Error::Mask(format!(
                        "explicit mask has length {}, expected {len}",
                        mask.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean length of missing runs, estimated from `draws` samples.
    pub fn mean_gap_length(&self, len: usize, draws: usize, rng: &mut Rng) -> Result<f64> {
        let mut total = 0usize;
        let mut count = 0usize;
        for _ in 0..draws {
            let gaps = sample_mask_with(self, len, rng)?.gap_lengths();
            total += gaps.iter().sum::<usize>();
            count += gaps.len();
        }
        Ok(if count == 0 {
            0.0
        } else {
            total as f64 / count as f64
        })
    }
}

/// Deterministic in `(spec, len)`: the generator is seeded from `spec.seed`.
pub fn sample_mask(spec: &MaskSpec, len: usize) -> Result<Mask> {
    let mut rng = Rng::seed_from_u64(spec.seed);
    sample_mask_with(spec, len, &mut rng)
}

/// Draws from `rng` instead of `spec.seed`, for streams of masks.
pub fn sample_mask_with(spec: &MaskSpec, len: usize, rng: &mut Rng) -> Result<Mask> {
    spec.validate(len)?;
    match &spec.kind {
        MaskKind::RandomCount => {
            let maskable = spec.maskable(len);
            let count = rng.random_range(spec.min_missing..=spec.max_missing);
            let mut bits = vec![true; len];
            for k in index::sample(rng, maskable.len(), count) {
                bits[maskable[k]] = false;
            }
            Ok(Mask::new(bits))
        }
        MaskKind::ForwardPrediction { prefix } => {
            Ok(Mask::new((0..len).map(|t| t < *prefix).collect()))
        }
        MaskKind::Explicit(mask) => Ok(mask.clone()),
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MaskKind::RandomCount => write!(f, "random:{}:{}", self.min_missing, self.max_missing),
            MaskKind::ForwardPrediction { prefix } => write!(f, "forward:{prefix}"),
            MaskKind::Explicit(mask) => write!(f, "explicit:{mask}"),
        }
    }
}

/// Parses `random:MIN:MAX`, `forward`, `forward:K` or `explicit:0101...`.
impl FromStr for MaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad number {p:?} in mask spec {s:?}")))
        };
        match parts.as_slice() {
            ["random", lo, hi] => Ok(MaskSpec::random(num(lo)?, num(hi)?)),
            ["forward"] => Ok(MaskSpec::forward_prediction()),
            ["forward", k] => Ok(MaskSpec {
                kind: MaskKind::ForwardPrediction { prefix: num(k)? },
                ..MaskSpec::forward_prediction()
            }),
            ["explicit", bits] => Ok(MaskSpec::explicit(bits.parse()?)),
            _ => Err(Error::Config(format!(
                "unknown mask spec {s:?}; expected random:MIN:MAX, forward[:K] or explicit:BITS"
            ))),
        }
    }
}
