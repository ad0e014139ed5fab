//! Synthetic grounders that know the ground truth.
//!
//! The noise model scales with the queried view: error standard deviation is
//! `sigma_ratio * min(crop_w, crop_h)` pixels, so zooming in shrinks the
//! error measured in original-image pixels.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{GroundError, Grounder, GroundingOutcome, GroundingQuery};
use crate::geometry::PixelBox;
use crate::NormPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleNoiseModel {
    pub sigma_ratio: f64,
    pub miss_rate: f64,
    pub seed: u64,
}

impl Default for OracleNoiseModel {
    fn default() -> Self {
        Self::noiseless(0)
    }
}

impl OracleNoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            sigma_ratio: 0.0,
            miss_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.sigma_ratio.is_finite() || self.sigma_ratio < 0.0 {
            return Err(format!("sigma_ratio must be >= 0, got {}", self.sigma_ratio));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(format!("miss_rate must be in [0, 1], got {}", self.miss_rate));
        }
        Ok(())
    }
}

/// Per-call RNG derived from the noise seed and the query identity, so
/// results do not depend on call order or thread scheduling.
pub fn query_rng(seed: u64, query: &GroundingQuery<'_>, round_index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(query.sample_id.as_bytes());
    h.update([0u8]);
    h.update(query.instruction.as_bytes());
    h.update([0u8]);
    for v in [query.crop.left, query.crop.top, query.crop.width, query.crop.height] {
        h.update(v.to_le_bytes());
    }
    h.update((round_index as u64).to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Grounds against a known target box given in crop pixels.
///
/// A target that does not intersect the crop yields `NoTarget`. The noiseless
/// answer is the center pixel of the visible part of the target, so with
/// zero noise the mapped click always lands inside the box.
pub fn oracle_ground(
    query: &GroundingQuery<'_>,
    truth: &PixelBox,
    noise: &OracleNoiseModel,
    round_index: usize,
) -> GroundingOutcome {
    let crop = PixelBox::full(query.width(), query.height());
    let Some(visible) = truth.intersection(&crop) else {
        return GroundingOutcome::NoTarget;
    };
    let mut rng = query_rng(noise.seed, query, round_index);
    if noise.miss_rate > 0.0 && rng.random::<f64>() < noise.miss_rate {
        return GroundingOutcome::NoTarget;
    }
    let cx = visible.left as f64 + (visible.width - 1) as f64 / 2.0;
    let cy = visible.top as f64 + (visible.height - 1) as f64 / 2.0;
    let sigma = noise.sigma_ratio * query.width().min(query.height()) as f64;
    let (dx, dy) = if sigma > 0.0 {
        let nx: f64 = StandardNormal.sample(&mut rng);
        let ny: f64 = StandardNormal.sample(&mut rng);
        (sigma * nx, sigma * ny)
    } else {
        (0.0, 0.0)
    };
    GroundingOutcome::point(NormPoint::clamped(
        (cx + dx) / query.width() as f64,
        (cy + dy) / query.height() as f64,
    ))
}

/// [`Grounder`] over a table of ground-truth boxes keyed by sample id, in
/// original-image pixels. Unknown samples yield `NoTarget`.
#[derive(Debug, Clone, Default)]
pub struct OracleGrounder {
    pub noise: OracleNoiseModel,
    truths: HashMap<String, PixelBox>,
}

impl OracleGrounder {
    pub fn new(noise: OracleNoiseModel) -> Self {
        Self {
            noise,
            truths: HashMap::new(),
        }
    }

    pub fn with_truths<I, K>(noise: OracleNoiseModel, truths: I) -> Self
    where
        I: IntoIterator<Item = (K, PixelBox)>,
        K: Into<String>,
    {
        Self {
            noise,
            truths: truths.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, truth: PixelBox) {
        self.truths.insert(sample_id.into(), truth);
    }

    /// Truth box of `sample_id` in the coordinates of `crop`, if visible.
    pub fn truth_in_crop(&self, sample_id: &str, crop: &PixelBox) -> Option<PixelBox> {
        let truth = self.truths.get(sample_id)?;
        let visible = truth.intersection(crop)?;
        Some(PixelBox::new(
            visible.left - crop.left,
            visible.top - crop.top,
            visible.width,
            visible.height,
        ))
    }
}

impl Grounder for OracleGrounder {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<GroundingOutcome, GroundError> {
        query.validate()?;
        Ok(match self.truth_in_crop(query.sample_id, &query.crop) {
            Some(truth) => oracle_ground(query, &truth, &self.noise, query.round),
            None => GroundingOutcome::NoTarget,
        })
    }

    fn identity(&self) -> serde_json::Value {
        json!({
            "kind": "oracle",
            "sigma_ratio": self.noise.sigma_ratio,
            "miss_rate": self.noise.miss_rate,
            "seed": self.noise.seed,
        })
    }
}
