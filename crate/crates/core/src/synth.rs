//! Seeded synthetic datasets over blank screenshots, for driving the oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::PixelBox;
use crate::harness::GroundingSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    /// Candidate `[width, height]` resolutions, drawn uniformly per sample.
    pub sizes: Vec<[u32; 2]>,
    /// Target side as a fraction of image width.
    pub box_frac: f64,
    pub seed: u64,
    /// Keep targets clear of the image center.
    #[serde(default)]
    pub avoid_center: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 200,
            sizes: vec![[1920, 1080], [2560, 1440], [3840, 2160]],
            box_frac: 0.01,
            seed: 0,
            avoid_center: false,
        }
    }
}

const KINDS: [&str; 2] = ["text", "icon"];

fn quadrant(b: &PixelBox, w: u32, h: u32) -> &'static str {
    let (cx, cy) = b.center();
    match (cx < w as f64 / 2.0, cy < h as f64 / 2.0) {
        (true, true) => "top-left",
        (false, true) => "top-right",
        (true, false) => "bottom-left",
        (false, false) => "bottom-right",
    }
}

/// Generates `spec.count` samples. Ids are `synth-00000`, ... and every
/// sample carries `kind`, `resolution` and `quadrant` tags.
pub fn generate(spec: &SynthSpec) -> Vec<GroundingSample> {
    assert!(!spec.sizes.is_empty(), "at least one size");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|i| {
            let [w, h] = spec.sizes[rng.random_range(0..spec.sizes.len())];
            let side = ((spec.box_frac * w as f64).round() as u32).clamp(1, w.min(h));
            let bbox = loop {
                let b = PixelBox::new(rng.random_range(0..=w - side), rng.random_range(0..=h - side), side, side);
                let margin = side.max(8);
                let near_center = b.left.saturating_sub(margin) <= w / 2
                    && w / 2 < b.right() + margin
                    && b.top.saturating_sub(margin) <= h / 2
                    && h / 2 < b.bottom() + margin;
                if !(spec.avoid_center && near_center) {
                    break b;
                }
            };
            let kind = KINDS[rng.random_range(0..KINDS.len())];
            GroundingSample {
                id: format!("synth-{i:05}"),
                image: format!("blank:{w}x{h}"),
                image_size: Some([w, h]),
                instruction: format!("click the {kind} target #{i}"),
                bbox,
                tags: [
                    ("kind", kind.to_string()),
                    ("resolution", format!("{w}x{h}")),
                    ("quadrant", quadrant(&bbox, w, h).to_string()),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_bounds() {
        let spec = SynthSpec {
            count: 300,
            ..SynthSpec::default()
        };
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        for s in &a {
            let [w, h] = s.image_size.unwrap();
            assert!(s.bbox.fits_in(w, h));
            assert_eq!(s.bbox.width, (w as f64 * 0.01).round() as u32);
        }
        let other = generate(&SynthSpec { seed: 1, ..spec });
        assert_ne!(a, other);
    }

    #[test]
    fn avoid_center_keeps_targets_off_center() {
        let spec = SynthSpec {
            count: 200,
            sizes: vec![[400, 300]],
            box_frac: 0.1,
            seed: 3,
            avoid_center: true,
        };
        for s in generate(&spec) {
            assert!(!crate::geometry::point_in_box(&crate::PixelPoint::new(200, 150), &s.bbox));
        }
    }
}
