//! Dataset ingestion, per-sample evaluation, aggregation and resumable runs.
//!
//! A run directory holds:
//!
//! * `run.json` - the run manifest (zoom config, backend identity, hit
//!   policy, seed, config hash). A directory is bound to one config hash.
//! * `results.jsonl` - one [`SampleResult`] per line, append-only, written by
//!   a single writer. Rerunning skips ids already present.
//! * `metrics.csv`, `depth_curve.csv`, `metrics.json` - regenerated from the
//!   full log after every run, so a resumed run produces the same bytes as an
//!   uninterrupted one.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{info, warn};

use crate::geometry::{point_in_box, PixelBox, PixelPoint};
use crate::grounder::{GroundError, Grounder};
use crate::pipeline::{
    zoom_click, ConfigError, PreZoomRecord, RoundRecord, ZoomConfig, ZoomError, ZoomInput, ZoomResult,
};
use crate::screenshot::{ImageLoadError, Screenshot};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "run.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const DEPTH_CURVE_CSV: &str = "depth_curve.csv";
pub const METRICS_JSON: &str = "metrics.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dataset failed validation:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("unknown tag key(s) {unknown:?}; available keys: {available:?}")]
    UnknownTag {
        unknown: Vec<String>,
        available: Vec<String>,
    },
    #[error("no results to aggregate")]
    NoResults,
    #[error(
        "run directory {dir} belongs to config {existing}, refusing to mix in results for config {requested}"
    )]
    ConfigMismatch {
        dir: PathBuf,
        existing: String,
        requested: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Image(#[from] ImageLoadError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One benchmark item. `bbox` is in original-image pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingSample {
    pub id: String,
    /// File path (relative to the manifest), http(s) URL, or `blank:WxH`.
    pub image: String,
    /// `[width, height]`; read from the image header when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[u32; 2]>,
    pub instruction: String,
    pub bbox: PixelBox,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<GroundingSample>,
    /// Directory that relative image paths resolve against.
    pub base_dir: PathBuf,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn new(samples: Vec<GroundingSample>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            samples,
            base_dir: base_dir.into(),
            warnings: Vec::new(),
        }
    }

    pub fn screenshot(&self, sample: &GroundingSample) -> Result<Screenshot, ImageLoadError> {
        Screenshot::from_reference(&sample.image, &self.base_dir)
    }
}

fn is_remote(reference: &str) -> bool {
    reference.starts_with("http://") || reference.starts_with("https://")
}

/// Reads a line-delimited JSON manifest.
///
/// A line that does not parse is a hard error. Samples whose image file is
/// missing are skipped with a warning. All remaining invariant violations
/// are collected and reported together.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, HarnessError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut violations = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut sample: GroundingSample =
            serde_json::from_str(&line).map_err(|e| HarnessError::Malformed {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;

        if !sample.image.starts_with("blank:") && !is_remote(&sample.image) {
            let image_path = base_dir.join(&sample.image);
            if !image_path.exists() {
                let msg = format!("{}: image {} not found, skipping", sample.id, image_path.display());
                warn!("{msg}");
                warnings.push(msg);
                continue;
            }
        }
        if sample.image_size.is_none() {
            match Screenshot::from_reference(&sample.image, &base_dir) {
                Ok(shot) => sample.image_size = Some([shot.width(), shot.height()]),
                Err(e) => {
                    violations.push(format!("{}: {e}", sample.id));
                    continue;
                }
            }
        }

        let [w, h] = sample.image_size.expect("filled above");
        if sample.id.trim().is_empty() {
            violations.push(format!("line {}: empty id", idx + 1));
        } else if !seen.insert(sample.id.clone()) {
            violations.push(format!("{}: duplicate id", sample.id));
        }
        if sample.instruction.trim().is_empty() {
            violations.push(format!("{}: empty instruction", sample.id));
        }
        if w == 0 || h == 0 {
            violations.push(format!("{}: image size {w}x{h} is empty", sample.id));
        } else if !sample.bbox.fits_in(w, h) {
            violations.push(format!(
                "{}: ground-truth box {:?} exceeds the {w}x{h} image",
                sample.id, sample.bbox
            ));
        }
        samples.push(sample);
    }

    if !violations.is_empty() {
        return Err(HarnessError::Invalid(violations));
    }
    if samples.is_empty() {
        let msg = format!("{}: dataset is empty", path.display());
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Dataset {
        samples,
        base_dir,
        warnings,
    })
}

/// Writes samples as a line-delimited manifest.
pub fn write_dataset(samples: &[GroundingSample], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Correctness predicate for a click against a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HitPolicy {
    /// Click strictly inside the half-open box.
    #[default]
    PointInBox,
    /// Click within `max_px` of the box center.
    CenterDistance { max_px: f64 },
}

impl HitPolicy {
    pub fn hit(&self, click: &PixelPoint, truth: &PixelBox) -> bool {
        match self {
            HitPolicy::PointInBox => point_in_box(click, truth),
            HitPolicy::CenterDistance { max_px } => {
                let (cx, cy) = truth.center();
                (click.x as f64 + 0.5 - cx).hypot(click.y as f64 + 0.5 - cy) <= *max_px
            }
        }
    }
}

/// Hash binding results to the zoom config, backend and hit policy.
pub fn run_hash(config: &ZoomConfig, grounder: &serde_json::Value, policy: &HitPolicy) -> String {
    let key = serde_json::json!({"zoom": config, "grounder": grounder, "policy": policy});
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

/// Trace of a search that found nothing in its first round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrace {
    pub prezoom: Option<PreZoomRecord>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample_id: String,
    pub config_hash: String,
    /// Configured depth (rounds actually run may be fewer).
    pub depth: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoom: Option<ZoomResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailedTrace>,
    /// Hit at each executed round.
    pub per_depth: Vec<bool>,
    pub final_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleResult {
    /// Correctness at depths `1..=len`, repeating the last value past the
    /// executed rounds (an early stop keeps its click).
    pub fn padded(&self, len: usize) -> Vec<bool> {
        let last = self.per_depth.last().copied().unwrap_or(false);
        (0..len)
            .map(|i| self.per_depth.get(i).copied().unwrap_or(last))
            .collect()
    }
}

/// Runs the zoom search on one sample and scores every round's click.
pub fn evaluate_sample<G: Grounder + ?Sized>(
    sample: &GroundingSample,
    screenshot: &Screenshot,
    grounder: &G,
    config: &ZoomConfig,
    policy: &HitPolicy,
) -> Result<SampleResult, HarnessError> {
    let config_hash = run_hash(config, &grounder.identity(), policy);
    let input = ZoomInput::new(screenshot, &sample.instruction).with_id(&sample.id);
    let base = SampleResult {
        sample_id: sample.id.clone(),
        config_hash,
        depth: config.depth,
        tags: sample.tags.clone(),
        zoom: None,
        failure: None,
        per_depth: vec![false],
        final_correct: false,
        error: None,
    };
    match zoom_click(&input, grounder, config) {
        Ok(zoom) => {
            let per_depth: Vec<bool> = zoom.clicks.iter().map(|c| policy.hit(c, &sample.bbox)).collect();
            let final_correct = *per_depth.last().expect("at least one round");
            Ok(SampleResult {
                zoom: Some(zoom),
                per_depth,
                final_correct,
                ..base
            })
        }
        Err(ZoomError::NoTarget { prezoom, rounds }) => Ok(SampleResult {
            failure: Some(FailedTrace {
                prezoom: prezoom.map(|p| *p),
                rounds,
            }),
            error: Some("no target found in round 1".into()),
            ..base
        }),
        Err(ZoomError::Ground(e)) => Err(e.into()),
        Err(ZoomError::Config(e)) => Err(e.into()),
        Err(ZoomError::Geometry(e)) => Err(HarnessError::Invalid(vec![format!("{}: {e}", sample.id)])),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// `overall`, a tag key, or tag keys joined with `+`.
    pub level: String,
    /// `all`, a tag value, or tag values joined with `/`.
    pub group: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Accuracy at depth 1, 2, ...
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub group_by: Vec<String>,
    pub depth: usize,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn overall(&self) -> &MetricsRow {
        &self.rows[0]
    }

    pub fn row(&self, level: &str, group: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.level == level && r.group == group)
    }
}

const MISSING_TAG: &str = "(none)";

/// Accuracy per group at the final depth plus per-depth curves.
///
/// The overall row is always first; then one block per tag key in
/// `group_by` order, then (for two or more keys) the cross groups. Within a
/// block, groups are sorted by name, so the result does not depend on the
/// order of `results`.
pub fn aggregate(results: &[SampleResult], group_by: &[String]) -> Result<MetricsTable, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::NoResults);
    }
    let available: BTreeSet<&String> = results.iter().flat_map(|r| r.tags.keys()).collect();
    let unknown: Vec<String> = group_by
        .iter()
        .filter(|k| !available.contains(k))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(HarnessError::UnknownTag {
            unknown,
            available: available.into_iter().cloned().collect(),
        });
    }

    let depth = results.iter().map(|r| r.depth.max(r.per_depth.len())).max().unwrap_or(1);
    let padded: Vec<Vec<bool>> = results.iter().map(|r| r.padded(depth)).collect();

    let row = |level: &str, group: &str, members: &[usize]| {
        let total = members.len();
        let correct = members.iter().filter(|&&i| results[i].final_correct).count();
        let curve = (0..depth)
            .map(|d| members.iter().filter(|&&i| padded[i][d]).count() as f64 / total as f64)
            .collect();
        MetricsRow {
            level: level.to_string(),
            group: group.to_string(),
            total,
            correct,
            accuracy: correct as f64 / total as f64,
            curve,
        }
    };

    let all: Vec<usize> = (0..results.len()).collect();
    let mut rows = vec![row("overall", "all", &all)];
    let tag = |i: usize, key: &str| {
        results[i]
            .tags
            .get(key)
            .map(String::as_str)
            .unwrap_or(MISSING_TAG)
            .to_string()
    };

    let mut levels: Vec<Vec<&String>> = group_by.iter().map(|k| vec![k]).collect();
    if group_by.len() > 1 {
        levels.push(group_by.iter().collect());
    }
    for keys in levels {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for &i in &all {
            let name = keys.iter().map(|k| tag(i, k)).collect::<Vec<_>>().join("/");
            groups.entry(name).or_default().push(i);
        }
        let level = keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+");
        rows.extend(groups.iter().map(|(g, members)| row(&level, g, members)));
    }

    Ok(MetricsTable {
        group_by: group_by.to_vec(),
        depth,
        rows,
    })
}

/// `level,group,total,correct,accuracy,d1..dN`
pub fn write_metrics_csv(table: &MetricsTable, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["level".to_string(), "group".into(), "total".into(), "correct".into(), "accuracy".into()];
    header.extend((1..=table.depth).map(|d| format!("d{d}")));
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![
            r.level.clone(),
            r.group.clone(),
            r.total.to_string(),
            r.correct.to_string(),
            format!("{:.6}", r.accuracy),
        ];
        rec.extend(r.curve.iter().map(|a| format!("{a:.6}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))
}

/// Long-format curve for plotting: `depth,level,group,accuracy`.
pub fn write_depth_curve_csv(table: &MetricsTable, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["depth", "level", "group", "accuracy"])?;
    for r in &table.rows {
        for (d, a) in r.curve.iter().enumerate() {
            w.write_record([(d + 1).to_string(), r.level.clone(), r.group.clone(), format!("{a:.6}")])?;
        }
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub zoom: ZoomConfig,
    pub grounder: serde_json::Value,
    pub policy: HitPolicy,
    pub seed: u64,
    pub image_encoding: String,
    pub tool_version: String,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub parallelism: usize,
    pub seed: u64,
    pub group_by: Vec<String>,
    pub policy: HitPolicy,
    /// Evaluate at most this many new samples, then stop as if interrupted.
    pub stop_after: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            seed: 0,
            group_by: Vec::new(),
            policy: HitPolicy::default(),
            stop_after: None,
        }
    }
}

#[derive(Debug)]
pub struct RunSummary {
    /// Table over every logged result; absent when the log is empty.
    pub table: Option<MetricsTable>,
    pub evaluated: usize,
    pub skipped: usize,
    /// Samples that hit transport or image errors; not logged, so a rerun
    /// retries them.
    pub failures: Vec<(String, String)>,
}

/// Reads a results log, dropping a torn final line left by an interrupted
/// writer.
pub fn read_results(path: &Path) -> Result<Vec<SampleResult>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        warn!(path = %path.display(), bytes = bytes.len() - complete, "dropping torn record at end of results log");
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(complete as u64).map_err(io_err(path))?;
    }
    let text = String::from_utf8_lossy(&bytes[..complete]);
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn prepare_run_dir(run_dir: &Path, manifest: &RunManifest) -> Result<(), HarnessError> {
    fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let path = run_dir.join(MANIFEST_FILE);
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let existing: serde_json::Value = serde_json::from_str(&text).map_err(|e| HarnessError::Malformed {
            path: path.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        let existing_hash = existing["config_hash"].as_str().unwrap_or_default().to_string();
        if existing_hash != manifest.config_hash {
            return Err(HarnessError::ConfigMismatch {
                dir: run_dir.to_path_buf(),
                existing: existing_hash,
                requested: manifest.config_hash.clone(),
            });
        }
        return Ok(());
    }
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

/// Evaluates every sample not yet in the run's results log, then rewrites
/// the metrics files from the full log.
pub fn run_eval<G: Grounder + ?Sized>(
    dataset: &Dataset,
    grounder: &G,
    config: &ZoomConfig,
    run_dir: &Path,
    opts: &RunOptions,
) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let identity = grounder.identity();
    let config_hash = run_hash(config, &identity, &opts.policy);
    let manifest = RunManifest {
        config_hash: config_hash.clone(),
        zoom: config.clone(),
        grounder: identity,
        policy: opts.policy,
        seed: opts.seed,
        image_encoding: "png".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    prepare_run_dir(run_dir, &manifest)?;

    let log_path = run_dir.join(RESULTS_FILE);
    let existing = read_results(&log_path)?;
    if let Some(other) = existing.iter().find(|r| r.config_hash != config_hash) {
        return Err(HarnessError::ConfigMismatch {
            dir: run_dir.to_path_buf(),
            existing: other.config_hash.clone(),
            requested: config_hash,
        });
    }
    let done: HashSet<&str> = existing.iter().map(|r| r.sample_id.as_str()).collect();
    let mut pending: Vec<&GroundingSample> =
        dataset.samples.iter().filter(|s| !done.contains(s.id.as_str())).collect();
    let skipped = dataset.samples.len() - pending.len();
    if let Some(n) = opts.stop_after {
        pending.truncate(n);
    }
    info!(pending = pending.len(), skipped, "starting evaluation");

    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = opts.parallelism.max(1).min(pending.len().max(1));
    let mut evaluated = 0;
    let mut failures = Vec::new();
    let mut fatal: Option<HarnessError> = None;

    thread::scope(|s| -> Result<(), HarnessError> {
        let (tx, rx) = mpsc::channel::<(usize, Result<SampleResult, HarnessError>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (pending, next, abort) = (&pending, &next, &abort);
            s.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(sample) = pending.get(i) else { break };
                let res = dataset
                    .screenshot(sample)
                    .map_err(HarnessError::from)
                    .and_then(|shot| evaluate_sample(sample, &shot, grounder, config, &opts.policy));
                if tx.send((i, res)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, res) in rx {
            match res {
                Ok(result) => {
                    let mut line = serde_json::to_string(&result).expect("result serializes");
                    line.push('\n');
                    log.write_all(line.as_bytes()).map_err(io_err(&log_path))?;
                    log.flush().map_err(io_err(&log_path))?;
                    evaluated += 1;
                }
                Err(HarnessError::Ground(e @ GroundError::Auth { .. })) => {
                    abort.store(true, Ordering::Relaxed);
                    fatal.get_or_insert(HarnessError::Ground(e));
                }
                Err(e) => {
                    warn!(sample = %pending[i].id, error = %e, "sample failed");
                    failures.push((pending[i].id.clone(), e.to_string()));
                }
            }
        }
        Ok(())
    })?;
    if let Some(e) = fatal {
        return Err(e);
    }

    let table = write_tables(dataset, run_dir, &opts.group_by)?;
    Ok(RunSummary {
        table,
        evaluated,
        skipped,
        failures,
    })
}

/// Rebuilds the metrics files from the results log, in dataset order.
pub fn write_tables(
    dataset: &Dataset,
    run_dir: &Path,
    group_by: &[String],
) -> Result<Option<MetricsTable>, HarnessError> {
    let log_path = run_dir.join(RESULTS_FILE);
    let mut by_id: HashMap<String, SampleResult> = read_results(&log_path)?
        .into_iter()
        .map(|r| (r.sample_id.clone(), r))
        .collect();
    let ordered: Vec<SampleResult> = dataset
        .samples
        .iter()
        .filter_map(|s| by_id.remove(&s.id))
        .collect();
    if ordered.is_empty() {
        return Ok(None);
    }
    let table = aggregate(&ordered, group_by)?;
    write_metrics_csv(&table, &run_dir.join(METRICS_CSV))?;
    write_depth_curve_csv(&table, &run_dir.join(DEPTH_CURVE_CSV))?;
    let json_path = run_dir.join(METRICS_JSON);
    let json = serde_json::to_string_pretty(&table).expect("table serializes");
    fs::write(&json_path, json + "\n").map_err(io_err(&json_path))?;
    Ok(Some(table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounder::{MockGrounder, OracleGrounder, OracleNoiseModel};

    fn result(id: &str, per_depth: &[bool], tags: &[(&str, &str)]) -> SampleResult {
        SampleResult {
            sample_id: id.into(),
            config_hash: "h".into(),
            depth: per_depth.len(),
            tags: tags.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            zoom: None,
            failure: None,
            per_depth: per_depth.to_vec(),
            final_correct: *per_depth.last().unwrap(),
            error: None,
        }
    }

    fn sample(id: &str, bbox: PixelBox) -> GroundingSample {
        GroundingSample {
            id: id.into(),
            image: "blank:1000x800".into(),
            image_size: Some([1000, 800]),
            instruction: format!("find {id}"),
            bbox,
            tags: BTreeMap::new(),
        }
    }

    #[test]
    fn overall_accuracy() {
        let rs = vec![
            result("a", &[true], &[]),
            result("b", &[true], &[]),
            result("c", &[false], &[]),
            result("d", &[true], &[]),
        ];
        let t = aggregate(&rs, &[]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.overall().accuracy, 0.75);
    }

    #[test]
    fn grouped_accuracy() {
        let rs = vec![
            result("a", &[true], &[("kind", "text")]),
            result("b", &[true], &[("kind", "text")]),
            result("c", &[false], &[("kind", "icon")]),
            result("d", &[true], &[("kind", "icon")]),
        ];
        let t = aggregate(&rs, &["kind".to_string()]).unwrap();
        assert_eq!(t.row("kind", "text").unwrap().accuracy, 1.0);
        assert_eq!(t.row("kind", "icon").unwrap().accuracy, 0.5);
        assert_eq!(t.overall().accuracy, 0.75);
    }

    #[test]
    fn depth_curve_averages_per_depth() {
        let rs = vec![result("a", &[false, true, true], &[]), result("b", &[true, true, true], &[])];
        assert_eq!(aggregate(&rs, &[]).unwrap().overall().curve, vec![0.5, 1.0, 1.0]);
    }

    #[test]
    fn short_traces_are_padded() {
        let rs = vec![result("a", &[false, true], &[]), result("b", &[true, false, false], &[])];
        assert_eq!(aggregate(&rs, &[]).unwrap().overall().curve, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn unknown_tag_lists_available_keys() {
        let rs = vec![result("a", &[true], &[("domain", "CAD")])];
        match aggregate(&rs, &["platform".to_string()]) {
            Err(HarnessError::UnknownTag { unknown, available }) => {
                assert_eq!(unknown, vec!["platform"]);
                assert_eq!(available, vec!["domain"]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(aggregate(&[], &[]), Err(HarnessError::NoResults)));
    }

    #[test]
    fn cross_grouping_counts_sum_per_level() {
        let rs = vec![
            result("a", &[true], &[("domain", "CAD"), ("kind", "text")]),
            result("b", &[false], &[("domain", "CAD"), ("kind", "icon")]),
            result("c", &[true], &[("domain", "Office"), ("kind", "icon")]),
        ];
        let keys = vec!["domain".to_string(), "kind".to_string()];
        let t = aggregate(&rs, &keys).unwrap();
        for level in ["domain", "kind", "domain+kind"] {
            let sum: usize = t.rows.iter().filter(|r| r.level == level).map(|r| r.total).sum();
            assert_eq!(sum, 3, "{level}");
        }
        assert_eq!(t.row("domain+kind", "CAD/icon").unwrap().accuracy, 0.0);
    }

    #[test]
    fn evaluate_with_noiseless_oracle() {
        let s = sample("s", PixelBox::new(700, 100, 12, 12));
        let g = OracleGrounder::with_truths(OracleNoiseModel::noiseless(0), [("s", s.bbox)]);
        let shot = Screenshot::blank(1000, 800);
        let config = ZoomConfig {
            min_crop: 100,
            ..ZoomConfig::default()
        };
        let r = evaluate_sample(&s, &shot, &g, &config, &HitPolicy::PointInBox).unwrap();
        assert_eq!(r.per_depth, vec![true, true, true]);
        assert!(r.final_correct);
    }

    #[test]
    fn evaluate_constant_center_misses_off_center_target() {
        let s = sample("s", PixelBox::new(10, 10, 20, 20));
        let shot = Screenshot::blank(1000, 800);
        let r = evaluate_sample(&s, &shot, &MockGrounder::center(), &ZoomConfig::default(), &HitPolicy::PointInBox)
            .unwrap();
        assert!(r.per_depth.iter().all(|h| !h));
    }

    #[test]
    fn evaluate_total_miss_records_failure() {
        let s = sample("s", PixelBox::new(10, 10, 20, 20));
        let g = OracleGrounder::with_truths(
            OracleNoiseModel {
                sigma_ratio: 0.0,
                miss_rate: 1.0,
                seed: 0,
            },
            [("s", s.bbox)],
        );
        let shot = Screenshot::blank(1000, 800);
        let r = evaluate_sample(&s, &shot, &g, &ZoomConfig::default(), &HitPolicy::PointInBox).unwrap();
        assert!(!r.final_correct);
        assert!(r.error.is_some());
        assert!(r.failure.is_some());
    }

    #[test]
    fn center_distance_policy() {
        let b = PixelBox::new(0, 0, 10, 10);
        let p = HitPolicy::CenterDistance { max_px: 3.0 };
        assert!(p.hit(&PixelPoint::new(5, 5), &b));
        assert!(!p.hit(&PixelPoint::new(9, 9), &b));
    }

    #[test]
    fn load_dataset_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");

        let good = [sample("a", PixelBox::new(0, 0, 10, 10)), sample("b", PixelBox::new(5, 5, 10, 10))];
        write_dataset(&good, &path).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);

        let bad = [sample("a", PixelBox::new(0, 0, 10, 10)), sample("big", PixelBox::new(995, 0, 10, 10))];
        write_dataset(&bad, &path).unwrap();
        match load_dataset(&path) {
            Err(HarnessError::Invalid(v)) => assert!(v[0].contains("big")),
            other => panic!("{other:?}"),
        }

        fs::write(&path, "").unwrap();
        let ds = load_dataset(&path).unwrap();
        assert!(ds.samples.is_empty());
        assert_eq!(ds.warnings.len(), 1);

        fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(HarnessError::Malformed { line: 1, .. })));
    }

    #[test]
    fn load_dataset_skips_missing_images() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut missing = sample("m", PixelBox::new(0, 0, 10, 10));
        missing.image = "shots/missing.png".into();
        write_dataset(&[missing, sample("ok", PixelBox::new(0, 0, 10, 10))], &path).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert!(ds.warnings[0].contains("missing.png"));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RESULTS_FILE);
        let line = serde_json::to_string(&result("a", &[true], &[])).unwrap();
        fs::write(&path, format!("{line}\n{{\"sample_id\": \"b\", \"conf")).unwrap();
        let rs = read_results(&path).unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{line}\n"));
    }
}
