use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoomground::bench::{
    build_bench, calibrate_threshold, categorize, read_pairs_csv, threshold_accuracy, ConsecutivePair,
    CorrectnessSequence, PairLabel, ZoomBehaviorCategory, CATEGORY_COUNTS_CSV, CATEGORY_DEPTH_CSV, PAIRS_CSV,
};
use zoomground::grounder::{OracleGrounder, OracleNoiseModel};
use zoomground::harness::{evaluate_sample, HitPolicy};
use zoomground::synth::{generate, SynthSpec};
use zoomground::{Screenshot, ZoomConfig};

/// Category from the bit string, written independently of the library rule.
fn by_pattern(bits: &str) -> &'static str {
    match bits.find('1') {
        None => "hard_est",
        Some(first) => {
            let tail_ok = !bits[first..].contains('0');
            match (first == 0, tail_ok) {
                (true, true) => "easy_normal",
                (true, false) => "easy_mislead",
                (false, true) => "hard_normal",
                (false, false) => "hard_mislead",
            }
        }
    }
}

#[test]
fn all_sequences_partition_into_five_categories() {
    let mut counts = std::collections::BTreeMap::new();
    for bits in 0u8..16 {
        let s = CorrectnessSequence::from_bits(bits);
        let c = categorize(&s);
        assert_eq!(c.as_str(), by_pattern(&s.to_string()), "{s}");
        *counts.entry(c).or_insert(0) += 1;
    }
    use ZoomBehaviorCategory::*;
    assert_eq!(counts[&EasyNormal], 1);
    assert_eq!(counts[&EasyMislead], 7);
    assert_eq!(counts[&HardNormal], 3);
    assert_eq!(counts[&HardMislead], 4);
    assert_eq!(counts[&HardEst], 1);
}

#[test]
fn raising_a_round_never_makes_an_easy_sample_hard() {
    let mut flips = 0;
    for bits in 0u8..16 {
        for t in 0..4 {
            // Setting an already-set bit is the identity flip.
            let mask = 1 << (3 - t);
            flips += 1;
            let before = categorize(&CorrectnessSequence::from_bits(bits));
            let after = categorize(&CorrectnessSequence::from_bits(bits | mask));
            assert!(!(before.is_easy() && !after.is_easy()), "{bits:04b} bit {t}");
        }
    }
    assert_eq!(flips, 64);
}

fn random_pairs(rng: &mut ChaCha8Rng) -> Vec<ConsecutivePair> {
    let n = rng.random_range(2..40);
    let mut pairs: Vec<ConsecutivePair> = (0..n)
        .map(|_| ConsecutivePair {
            distance: rng.random_range(0..200) as f64,
            label: if rng.random_bool(0.5) {
                PairLabel::CorrectPair
            } else {
                PairLabel::ErrorPair
            },
        })
        .collect();
    pairs[0].label = PairLabel::CorrectPair;
    pairs[1].label = PairLabel::ErrorPair;
    pairs
}

#[test]
fn midpoint_sweep_matches_fine_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let pairs = random_pairs(&mut rng);
        let c = calibrate_threshold(&pairs).unwrap();
        // Integer distances: a quarter-pixel grid visits every piece.
        let best = (0..=(4 * 202))
            .map(|i| threshold_accuracy(&pairs, i as f64 / 4.0))
            .fold(0.0f64, f64::max);
        assert_eq!(c.accuracy, best);
        assert_eq!(threshold_accuracy(&pairs, c.tau), c.accuracy);
    }
}

#[test]
fn separable_sets_reach_full_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let cut = rng.random_range(10.0..100.0);
        let mut pairs = Vec::new();
        for _ in 0..rng.random_range(1..20) {
            pairs.push(ConsecutivePair {
                distance: rng.random_range(0.0..cut),
                label: PairLabel::CorrectPair,
            });
        }
        for _ in 0..rng.random_range(1..20) {
            pairs.push(ConsecutivePair {
                distance: rng.random_range(cut..300.0),
                label: PairLabel::ErrorPair,
            });
        }
        let c = calibrate_threshold(&pairs).unwrap();
        assert_eq!(c.accuracy, 1.0);
        let max_correct = pairs.iter().filter(|p| p.label == PairLabel::CorrectPair).map(|p| p.distance).fold(f64::MIN, f64::max);
        let min_error = pairs.iter().filter(|p| p.label == PairLabel::ErrorPair).map(|p| p.distance).fold(f64::MAX, f64::min);
        assert!(max_correct < c.tau && c.tau <= min_error);
    }
}

#[test]
fn bench_from_a_depth_four_oracle_run() {
    let samples = generate(&SynthSpec {
        count: 40,
        sizes: vec![[2560, 1440]],
        box_frac: 0.01,
        seed: 4,
        avoid_center: false,
    });
    let noise = OracleNoiseModel {
        sigma_ratio: 0.04,
        miss_rate: 0.0,
        seed: 4,
    };
    let g = OracleGrounder::with_truths(noise, samples.iter().map(|s| (s.id.clone(), s.bbox)));
    let config = ZoomConfig {
        depth: 4,
        min_crop: 128,
        ..ZoomConfig::default()
    };
    let results: Vec<_> = samples
        .iter()
        .map(|s| {
            let shot = Screenshot::blank(2560, 1440);
            evaluate_sample(s, &shot, &g, &config, &HitPolicy::PointInBox).unwrap()
        })
        .collect();

    let dir = tempfile::tempdir().unwrap();
    let m = build_bench(&results, dir.path(), true, None).unwrap();
    assert_eq!(m.total, 40);
    assert_eq!(ZoomBehaviorCategory::ALL.iter().map(|&c| m.count(c)).sum::<usize>(), 40);

    let counts = fs::read_to_string(dir.path().join(CATEGORY_COUNTS_CSV)).unwrap();
    assert_eq!(counts.lines().count(), 6);
    let depth = fs::read_to_string(dir.path().join(CATEGORY_DEPTH_CSV)).unwrap();
    assert!(depth.starts_with("category,count,d1,d2,d3,d4\n"));
    let easy = depth.lines().find(|l| l.starts_with("easy_normal,")).unwrap();
    if m.count(ZoomBehaviorCategory::EasyNormal) > 0 {
        assert!(easy.ends_with("1.000000,1.000000,1.000000,1.000000"));
    }
    let pairs = read_pairs_csv(&dir.path().join(PAIRS_CSV)).unwrap();
    assert!(pairs.iter().all(|p| p.distance >= 0.0));
}
