//! Zoom-behavior benchmark construction and distance-threshold calibration.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{RunManifest, SampleResult};

/// Number of rounds in the fixed benchmark procedure.
pub const BENCH_DEPTH: usize = 4;

/// Optimum reported by the original authors on their own traces. Not
/// reproducible without those traces; kept for reference only.
pub const REFERENCE_TAU_PX: f64 = 50.7;
pub const REFERENCE_TAU_ACCURACY: f64 = 0.918;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("sample {id}: configured depth {depth} differs from the benchmark depth {BENCH_DEPTH}")]
    WrongDepth { id: String, depth: usize },
    #[error("sample {id}: {rounds} rounds recorded, more than the benchmark depth {BENCH_DEPTH}")]
    TooManyRounds { id: String, rounds: usize },
    #[error("results mix configs {first} and {other}")]
    MixedConfigs { first: String, other: String },
    #[error("no results")]
    Empty,
    #[error("calibration needs pairs of both labels (got {correct} correct, {error} error)")]
    SingleLabel { correct: usize, error: usize },
    #[error("invalid pair distance {0}")]
    BadDistance(f64),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-round correctness `s1..s4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorrectnessSequence(pub [bool; BENCH_DEPTH]);

impl CorrectnessSequence {
    pub fn from_bits(bits: u8) -> Self {
        Self(std::array::from_fn(|i| bits >> (BENCH_DEPTH - 1 - i) & 1 == 1))
    }

    pub fn first_correct(&self) -> Option<usize> {
        self.0.iter().position(|&s| s)
    }
}

impl fmt::Display for CorrectnessSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|&s| f.write_str(if s { "1" } else { "0" }))
    }
}

/// Builds the sequence from a result's per-depth hits.
///
/// Early-terminated traces repeat their final value. In strict mode the
/// result must come from a depth-4 config.
pub fn correctness_sequence(result: &SampleResult, strict: bool) -> Result<CorrectnessSequence, BenchError> {
    if strict && result.depth != BENCH_DEPTH {
        return Err(BenchError::WrongDepth {
            id: result.sample_id.clone(),
            depth: result.depth,
        });
    }
    if result.per_depth.len() > BENCH_DEPTH {
        return Err(BenchError::TooManyRounds {
            id: result.sample_id.clone(),
            rounds: result.per_depth.len(),
        });
    }
    let padded = result.padded(BENCH_DEPTH);
    Ok(CorrectnessSequence(std::array::from_fn(|i| padded[i])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoomBehaviorCategory {
    EasyNormal,
    EasyMislead,
    HardNormal,
    HardMislead,
    HardEst,
}

impl ZoomBehaviorCategory {
    pub const ALL: [ZoomBehaviorCategory; 5] = [
        Self::EasyNormal,
        Self::EasyMislead,
        Self::HardNormal,
        Self::HardMislead,
        Self::HardEst,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::EasyNormal => "easy_normal",
            Self::EasyMislead => "easy_mislead",
            Self::HardNormal => "hard_normal",
            Self::HardMislead => "hard_mislead",
            Self::HardEst => "hard_est",
        }
    }

    pub fn is_easy(&self) -> bool {
        matches!(self, Self::EasyNormal | Self::EasyMislead)
    }
}

impl fmt::Display for ZoomBehaviorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Easy if correct at round 1, hard if first correct later, `hard_est` if
/// never correct. Mislead if any round after the first correct one is wrong.
pub fn categorize(seq: &CorrectnessSequence) -> ZoomBehaviorCategory {
    use ZoomBehaviorCategory::*;
    let Some(first) = seq.first_correct() else {
        return HardEst;
    };
    let mislead = seq.0[first + 1..].iter().any(|&s| !s);
    match (first == 0, mislead) {
        (true, false) => EasyNormal,
        (true, true) => EasyMislead,
        (false, false) => HardNormal,
        (false, true) => HardMislead,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub id: String,
    pub sequence: CorrectnessSequence,
    pub category: ZoomBehaviorCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: ZoomBehaviorCategory,
    pub count: usize,
    /// Mean correctness at d1..d4; `None` for an empty category.
    pub depth_accuracy: Option<[f64; BENCH_DEPTH]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub config_hash: String,
    pub strict: bool,
    /// Run manifest of the source results, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunManifest>,
    /// Whether pre-zoom was on during collection, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prezoom: Option<bool>,
    pub total: usize,
    pub categories: Vec<CategoryStats>,
    pub records: Vec<BenchRecord>,
}

impl BenchManifest {
    pub fn count(&self, category: ZoomBehaviorCategory) -> usize {
        self.categories.iter().find(|c| c.category == category).map_or(0, |c| c.count)
    }

    pub fn stats(&self, category: ZoomBehaviorCategory) -> &CategoryStats {
        self.categories
            .iter()
            .find(|c| c.category == category)
            .expect("every category is listed")
    }
}

pub const BENCH_RECORDS: &str = "bench.jsonl";
pub const BENCH_SUMMARY: &str = "bench.json";
pub const CATEGORY_COUNTS_CSV: &str = "category_counts.csv";
pub const CATEGORY_DEPTH_CSV: &str = "category_depth.csv";
pub const PAIRS_CSV: &str = "pairs.csv";

/// Categorizes results without touching the filesystem.
pub fn categorize_results(
    results: &[SampleResult],
    strict: bool,
    run: Option<RunManifest>,
) -> Result<BenchManifest, BenchError> {
    let first = results.first().ok_or(BenchError::Empty)?;
    if let Some(other) = results.iter().find(|r| r.config_hash != first.config_hash) {
        return Err(BenchError::MixedConfigs {
            first: first.config_hash.clone(),
            other: other.config_hash.clone(),
        });
    }
    let records = results
        .iter()
        .map(|r| {
            let sequence = correctness_sequence(r, strict)?;
            Ok(BenchRecord {
                id: r.sample_id.clone(),
                sequence,
                category: categorize(&sequence),
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;

    let categories = ZoomBehaviorCategory::ALL
        .iter()
        .map(|&category| {
            let members: Vec<&BenchRecord> = records.iter().filter(|r| r.category == category).collect();
            let depth_accuracy = (!members.is_empty()).then(|| {
                std::array::from_fn(|d| {
                    members.iter().filter(|r| r.sequence.0[d]).count() as f64 / members.len() as f64
                })
            });
            CategoryStats {
                category,
                count: members.len(),
                depth_accuracy,
            }
        })
        .collect();

    Ok(BenchManifest {
        config_hash: first.config_hash.clone(),
        strict,
        prezoom: run.as_ref().map(|m| m.zoom.prezoom),
        run,
        total: records.len(),
        categories,
        records,
    })
}

/// Categorizes `results` and writes the record list, category counts, the
/// per-category depth table and the consecutive-pair distances to `out_dir`.
pub fn build_bench(
    results: &[SampleResult],
    out_dir: &Path,
    strict: bool,
    run: Option<RunManifest>,
) -> Result<BenchManifest, BenchError> {
    let manifest = categorize_results(results, strict, run)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let path = out_dir.join(BENCH_RECORDS);
    let mut lines = String::new();
    for r in &manifest.records {
        lines.push_str(&serde_json::json!({"id": r.id, "sequence": r.sequence.to_string(), "category": r.category}).to_string());
        lines.push('\n');
    }
    fs::write(&path, lines).map_err(io_err(&path))?;

    let mut w = csv::Writer::from_path(out_dir.join(CATEGORY_COUNTS_CSV))?;
    w.write_record(["category", "count", "fraction"])?;
    for c in &manifest.categories {
        w.write_record([
            c.category.to_string(),
            c.count.to_string(),
            format!("{:.6}", c.count as f64 / manifest.total as f64),
        ])?;
    }
    w.flush().map_err(io_err(out_dir))?;

    let mut w = csv::Writer::from_path(out_dir.join(CATEGORY_DEPTH_CSV))?;
    w.write_record(["category", "count", "d1", "d2", "d3", "d4"])?;
    for c in &manifest.categories {
        let mut rec = vec![c.category.to_string(), c.count.to_string()];
        match c.depth_accuracy {
            Some(acc) => rec.extend(acc.iter().map(|a| format!("{a:.6}"))),
            None => rec.extend(std::iter::repeat_n(String::new(), BENCH_DEPTH)),
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(out_dir))?;

    write_pairs_csv(&consecutive_pairs(results), &out_dir.join(PAIRS_CSV))?;

    let path = out_dir.join(BENCH_SUMMARY);
    let mut summary = serde_json::to_value(&manifest).expect("manifest serializes");
    summary.as_object_mut().expect("object").remove("records");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("json") + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairLabel {
    CorrectPair,
    ErrorPair,
}

impl PairLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairLabel::CorrectPair => "correct",
            PairLabel::ErrorPair => "error",
        }
    }
}

impl FromStr for PairLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "correct" | "correct-pair" | "1" => Ok(PairLabel::CorrectPair),
            "error" | "error-pair" | "0" => Ok(PairLabel::ErrorPair),
            other => Err(format!("unknown pair label {other:?}")),
        }
    }
}

/// Pixel displacement between clicks of adjacent rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsecutivePair {
    pub distance: f64,
    pub label: PairLabel,
}

/// Pairs from every adjacent pair of rounds: both hits give a correct pair,
/// exactly one hit gives an error pair, two misses are skipped.
pub fn consecutive_pairs(results: &[SampleResult]) -> Vec<ConsecutivePair> {
    let mut pairs = Vec::new();
    for r in results {
        let Some(zoom) = &r.zoom else { continue };
        for (t, w) in zoom.clicks.windows(2).enumerate() {
            let (Some(&a), Some(&b)) = (r.per_depth.get(t), r.per_depth.get(t + 1)) else {
                continue;
            };
            let label = match (a, b) {
                (true, true) => PairLabel::CorrectPair,
                (false, false) => continue,
                _ => PairLabel::ErrorPair,
            };
            pairs.push(ConsecutivePair {
                distance: w[0].distance(&w[1]),
                label,
            });
        }
    }
    pairs
}

pub fn write_pairs_csv(pairs: &[ConsecutivePair], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["distance", "label"])?;
    for p in pairs {
        w.write_record([format!("{:.6}", p.distance), p.label.as_str().to_string()])?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a `distance,label` CSV.
pub fn read_pairs_csv(path: &Path) -> Result<Vec<ConsecutivePair>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| BenchError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (dc, lc) = (col("distance")?, col("label")?);
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let parse_err = |message: String| BenchError::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message,
            };
            let distance: f64 = rec[dc].trim().parse().map_err(|e| parse_err(format!("distance: {e}")))?;
            let label = rec[lc].parse().map_err(parse_err)?;
            Ok(ConsecutivePair { distance, label })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_error: usize,
    pub mean_correct: f64,
    pub mean_error: f64,
    /// `(threshold, accuracy)` for every candidate, ascending.
    pub sweep: Vec<(f64, f64)>,
}

/// Accuracy of the rule "distance < tau predicts a correct pair".
pub fn threshold_accuracy(pairs: &[ConsecutivePair], tau: f64) -> f64 {
    let right = pairs
        .iter()
        .filter(|p| (p.distance < tau) == (p.label == PairLabel::CorrectPair))
        .count();
    right as f64 / pairs.len() as f64
}

/// Best threshold over 0, the midpoints of sorted unique distances, and
/// max + 1. Ties go to the smallest threshold.
pub fn calibrate_threshold(pairs: &[ConsecutivePair]) -> Result<Calibration, BenchError> {
    if let Some(p) = pairs.iter().find(|p| !p.distance.is_finite() || p.distance < 0.0) {
        return Err(BenchError::BadDistance(p.distance));
    }
    let (correct, error): (Vec<f64>, Vec<f64>) = {
        let c = pairs.iter().filter(|p| p.label == PairLabel::CorrectPair).map(|p| p.distance);
        let e = pairs.iter().filter(|p| p.label == PairLabel::ErrorPair).map(|p| p.distance);
        (c.collect(), e.collect())
    };
    if correct.is_empty() || error.is_empty() {
        return Err(BenchError::SingleLabel {
            correct: correct.len(),
            error: error.len(),
        });
    }

    let mut distances: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup();
    let mut candidates = vec![0.0];
    candidates.extend(distances.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(distances.last().expect("non-empty") + 1.0);
    candidates.dedup();

    let sweep: Vec<(f64, f64)> = candidates.iter().map(|&t| (t, threshold_accuracy(pairs, t))).collect();
    let (tau, accuracy) = sweep
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Calibration {
        tau,
        accuracy,
        n_correct: correct.len(),
        n_error: error.len(),
        mean_correct: mean(&correct),
        mean_error: mean(&error),
        sweep,
    })
}

/// Counts per category, ordered as [`ZoomBehaviorCategory::ALL`].
pub fn category_counts(records: &[BenchRecord]) -> BTreeMap<ZoomBehaviorCategory, usize> {
    let mut counts: BTreeMap<_, _> = ZoomBehaviorCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for r in records {
        *counts.get_mut(&r.category).expect("known category") += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use ZoomBehaviorCategory::*;

    fn seq(bits: [u8; 4]) -> CorrectnessSequence {
        CorrectnessSequence(bits.map(|b| b == 1))
    }

    fn result(id: &str, per_depth: &[bool], depth: usize) -> SampleResult {
        SampleResult {
            sample_id: id.into(),
            config_hash: "h".into(),
            depth,
            tags: Default::default(),
            zoom: None,
            failure: None,
            per_depth: per_depth.to_vec(),
            final_correct: *per_depth.last().unwrap(),
            error: None,
        }
    }

    fn pairs(correct: &[f64], error: &[f64]) -> Vec<ConsecutivePair> {
        let c = correct.iter().map(|&d| ConsecutivePair {
            distance: d,
            label: PairLabel::CorrectPair,
        });
        let e = error.iter().map(|&d| ConsecutivePair {
            distance: d,
            label: PairLabel::ErrorPair,
        });
        c.chain(e).collect()
    }

    #[test]
    fn worked_categories() {
        assert_eq!(categorize(&seq([1, 1, 1, 1])), EasyNormal);
        assert_eq!(categorize(&seq([1, 0, 1, 1])), EasyMislead);
        assert_eq!(categorize(&seq([0, 0, 1, 1])), HardNormal);
        assert_eq!(categorize(&seq([0, 1, 0, 0])), HardMislead);
        assert_eq!(categorize(&seq([0, 0, 0, 0])), HardEst);
    }

    #[test]
    fn bits_round_trip() {
        assert_eq!(CorrectnessSequence::from_bits(0b1011), seq([1, 0, 1, 1]));
        assert_eq!(seq([0, 1, 1, 0]).to_string(), "0110");
    }

    #[test]
    fn sequence_padding_and_strictness() {
        let full = result("a", &[true; 4], 4);
        assert_eq!(correctness_sequence(&full, true).unwrap(), seq([1, 1, 1, 1]));
        let short = result("b", &[false, true, true], 4);
        assert_eq!(correctness_sequence(&short, true).unwrap(), seq([0, 1, 1, 1]));
        let t3 = result("c", &[true, false, false], 3);
        assert!(matches!(correctness_sequence(&t3, true), Err(BenchError::WrongDepth { .. })));
        assert_eq!(correctness_sequence(&t3, false).unwrap(), seq([1, 0, 0, 0]));
        let odd = result("d", &[true, false, false, true], 4);
        assert_eq!(correctness_sequence(&odd, true).unwrap(), seq([1, 0, 0, 1]));
    }

    #[test]
    fn one_sample_per_category() {
        let rs: Vec<_> = [[1, 1, 1, 1], [1, 0, 1, 1], [0, 0, 1, 1], [0, 1, 0, 0], [0, 0, 0, 0]]
            .iter()
            .enumerate()
            .map(|(i, b)| result(&i.to_string(), &b.map(|x| x == 1), 4))
            .collect();
        let m = categorize_results(&rs, true, None).unwrap();
        assert!(ZoomBehaviorCategory::ALL.iter().all(|&c| m.count(c) == 1));
    }

    #[test]
    fn hard_normal_depth_table() {
        let rs = vec![
            result("a", &[false, true, true, true], 4),
            result("b", &[false, false, true, true], 4),
        ];
        let m = categorize_results(&rs, true, None).unwrap();
        assert_eq!(m.count(HardNormal), 2);
        assert_eq!(m.stats(HardNormal).depth_accuracy, Some([0.0, 0.5, 1.0, 1.0]));
        assert_eq!(m.stats(EasyNormal).depth_accuracy, None);
    }

    #[test]
    fn mixed_configs_rejected() {
        let mut b = result("b", &[true; 4], 4);
        b.config_hash = "other".into();
        let rs = vec![result("a", &[true; 4], 4), b];
        assert!(matches!(categorize_results(&rs, true, None), Err(BenchError::MixedConfigs { .. })));
    }

    #[test]
    fn calibration_separable() {
        let c = calibrate_threshold(&pairs(&[3.0, 5.0, 8.0], &[90.0, 120.0, 300.0])).unwrap();
        assert_eq!(c.tau, 49.0);
        assert_eq!(c.accuracy, 1.0);
        assert!((c.mean_correct - 16.0 / 3.0).abs() < 1e-12);
        assert!((c.mean_error - 170.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_indistinguishable() {
        let c = calibrate_threshold(&pairs(&[10.0], &[10.0])).unwrap();
        assert_eq!(c.accuracy, 0.5);
        assert_eq!(c.tau, 0.0);
    }

    #[test]
    fn calibration_needs_both_labels() {
        assert!(matches!(
            calibrate_threshold(&pairs(&[1.0, 2.0], &[])),
            Err(BenchError::SingleLabel { correct: 2, error: 0 })
        ));
        assert!(matches!(calibrate_threshold(&pairs(&[-1.0], &[2.0])), Err(BenchError::BadDistance(_))));
    }

    #[test]
    fn pairs_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let ps = pairs(&[1.5, 2.0], &[100.25]);
        write_pairs_csv(&ps, &path).unwrap();
        assert_eq!(read_pairs_csv(&path).unwrap(), ps);
        fs::write(&path, "distance,label\n3,maybe\n").unwrap();
        assert!(matches!(read_pairs_csv(&path), Err(BenchError::Parse { line: 2, .. })));
    }
}
