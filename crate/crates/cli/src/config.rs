use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use zoomground::grounder::prompts::PromptTemplates;
use zoomground::grounder::{EndpointConfig, OracleNoiseModel, PromptProtocol};
use zoomground::pipeline::Grid;
use zoomground::{BoundaryMode, NormPoint, ZoomConfig};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GrounderKind {
    HttpBbox,
    HttpToolcall,
    Oracle,
    #[default]
    Mock,
}

/// Fixed behavior for the mock backend: `center`, `no-target`,
/// `parse-failure`, or a normalized point `x,y`.
#[derive(Debug, Clone, PartialEq)]
pub enum MockSpec {
    Point(NormPoint),
    NoTarget,
    ParseFailure,
}

impl Default for MockSpec {
    fn default() -> Self {
        MockSpec::Point(NormPoint { x: 0.5, y: 0.5 })
    }
}

impl FromStr for MockSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "center" => Ok(Self::default()),
            "no-target" => Ok(MockSpec::NoTarget),
            "parse-failure" => Ok(MockSpec::ParseFailure),
            _ => {
                let (x, y) = s.split_once(',').ok_or_else(|| format!("bad mock spec {s:?}"))?;
                let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("bad mock spec {s:?}: {e}"));
                NormPoint::new(parse(x)?, parse(y)?)
                    .map(MockSpec::Point)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

impl fmt::Display for MockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockSpec::Point(p) => write!(f, "{},{}", p.x, p.y),
            MockSpec::NoTarget => f.write_str("no-target"),
            MockSpec::ParseFailure => f.write_str("parse-failure"),
        }
    }
}

impl Serialize for MockSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MockSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointSection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<f64>,
    pub retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub max_tokens: Option<u32>,
    /// Directory with prompt template overrides.
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub sigma_ratio: f64,
    pub miss_rate: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            sigma_ratio: 0.0,
            miss_rate: 0.0,
        }
    }
}

/// Contents of a `--config` TOML file. Every command reads the same file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub grounder: Option<GrounderKind>,
    pub dataset: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub group_by: Option<Vec<String>>,
    pub mock: Option<MockSpec>,
    pub endpoint: EndpointSection,
    pub zoom: ZoomConfig,
    pub oracle: OracleSection,
}

impl RunConfigFile {
    /// Parses `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfigFile =
            toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset);
        resolve(&mut cfg.run_dir);
        resolve(&mut cfg.endpoint.prompts_dir);
        for p in [&cfg.dataset, &cfg.endpoint.prompts_dir].into_iter().flatten() {
            if !p.exists() {
                return Err(UsageError(format!("config {}: path {} does not exist", path.display(), p.display())).into());
            }
        }
        Ok(cfg)
    }
}

/// Flags shared by every command that runs the zoom search. Each overrides
/// the matching config-file value.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Endpoint base URL, e.g. http://localhost:8000/v1.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Shrink ratio; repeat for a per-step schedule.
    #[arg(long = "rho")]
    pub rho: Vec<f64>,
    #[arg(long)]
    pub min_crop: Option<u32>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub boundary: Option<BoundaryMode>,
    #[arg(long, value_enum)]
    pub prezoom: Option<Switch>,
    /// Pre-zoom grid as RxC.
    #[arg(long)]
    pub grid: Option<Grid>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub grounder: Option<GrounderKind>,
    /// Oracle noise: standard deviation as a fraction of the crop's short side.
    #[arg(long)]
    pub sigma_ratio: Option<f64>,
    /// Oracle probability of answering no-target.
    #[arg(long)]
    pub miss_rate: Option<f64>,
    /// Mock behavior: center, no-target, parse-failure, or x,y.
    #[arg(long)]
    pub mock: Option<MockSpec>,
}

/// Config after applying flags over the file, echoed into run directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub grounder: GrounderKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub seed: u64,
    pub group_by: Vec<String>,
    pub mock: MockSpec,
    pub endpoint: EndpointSection,
    pub zoom: ZoomConfig,
    pub oracle: OracleSection,
}

impl EffectiveConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => RunConfigFile::load(p)?,
            None => RunConfigFile::default(),
        };
        let mut zoom = file.zoom;
        if let Some(d) = args.depth {
            zoom.depth = d;
        }
        if !args.rho.is_empty() {
            zoom.shrink = args.rho.clone();
        }
        if let Some(m) = args.min_crop {
            zoom.min_crop = m;
        }
        if let Some(t) = args.tau {
            zoom.tau = t;
        }
        if let Some(b) = args.boundary {
            zoom.boundary = b;
        }
        if let Some(p) = args.prezoom {
            zoom.prezoom = p == Switch::On;
        }
        if let Some(g) = args.grid {
            zoom.grid = g;
        }
        zoom.validate().map_err(|e| UsageError(e.to_string()))?;

        let mut endpoint = file.endpoint;
        if args.endpoint.is_some() {
            endpoint.base_url = args.endpoint.clone();
        }
        if args.model.is_some() {
            endpoint.model = args.model.clone();
        }
        let mut oracle = file.oracle;
        if let Some(s) = args.sigma_ratio {
            oracle.sigma_ratio = s;
        }
        if let Some(m) = args.miss_rate {
            oracle.miss_rate = m;
        }
        let cfg = Self {
            grounder: args.grounder.or(file.grounder).unwrap_or_default(),
            dataset: file.dataset,
            run_dir: args.run_dir.clone().or(file.run_dir),
            parallelism: args.parallelism.or(file.parallelism).unwrap_or(1).max(1),
            seed: args.seed.or(file.seed).unwrap_or(0),
            group_by: file.group_by.unwrap_or_default(),
            mock: args.mock.clone().or(file.mock).unwrap_or_default(),
            endpoint,
            zoom,
            oracle,
        };
        cfg.noise_model().validate().map_err(UsageError)?;
        Ok(cfg)
    }

    pub fn noise_model(&self) -> OracleNoiseModel {
        OracleNoiseModel {
            sigma_ratio: self.oracle.sigma_ratio,
            miss_rate: self.oracle.miss_rate,
            seed: self.seed,
        }
    }

    pub fn endpoint_config(&self) -> Result<(EndpointConfig, PromptTemplates)> {
        let protocol = match self.grounder {
            GrounderKind::HttpBbox => PromptProtocol::BboxText,
            GrounderKind::HttpToolcall => PromptProtocol::ToolCall,
            other => bail!("grounder {other:?} has no endpoint"),
        };
        let e = &self.endpoint;
        let base_url = e.base_url.clone().ok_or_else(|| UsageError("--endpoint is required for HTTP grounders".into()))?;
        let model = e.model.clone().ok_or_else(|| UsageError("--model is required for HTTP grounders".into()))?;
        let mut cfg = EndpointConfig::new(base_url, model, protocol);
        if let Some(v) = e.timeout_secs {
            cfg.timeout_secs = v;
        }
        if let Some(v) = e.retries {
            cfg.retries = v;
        }
        if let Some(v) = e.backoff_ms {
            cfg.backoff_ms = v;
        }
        if let Some(v) = e.max_in_flight {
            cfg.max_in_flight = v;
        }
        cfg.max_tokens = e.max_tokens;
        cfg.validate().map_err(UsageError)?;
        let templates = match &e.prompts_dir {
            Some(dir) => PromptTemplates::from_dir(dir)
                .with_context(|| format!("loading prompt templates from {}", dir.display()))?,
            None => PromptTemplates::default(),
        };
        Ok((cfg, templates))
    }

    /// Writes `effective_config.toml` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = toml::to_string(self).map_err(|e| anyhow!("serializing effective config: {e}"))?;
        let path = dir.join("effective_config.toml");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
