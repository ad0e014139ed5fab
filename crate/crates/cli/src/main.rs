mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tracing::info;
use tracing_subscriber::EnvFilter;
use zoomground::bench::{self, BenchError};
use zoomground::grounder::{GroundError, HttpGrounder, MockGrounder, OracleGrounder};
use zoomground::harness::{self, HarnessError, MetricsTable, RunManifest, RunOptions};
use zoomground::pipeline::{ConfigError, ZoomError, ZoomInput};
use zoomground::screenshot::ImageLoadError;
use zoomground::synth::{self, SynthSpec};
use zoomground::{zoom_click, Grounder, PixelBox, Screenshot};

use config::{CommonArgs, EffectiveConfig, GrounderKind, MockSpec};

const EXIT_USAGE: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_NO_TARGET: u8 = 5;

/// Bad invocation: unreadable inputs, missing flags, invalid config.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
struct NoTargetExit;

impl fmt::Display for NoTargetExit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("no target found")
    }
}

impl std::error::Error for NoTargetExit {}

#[derive(Parser)]
#[command(name = "zoomground", version, about = "Coarse-to-fine zoom grounding for GUI screenshots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground one instruction on one screenshot.
    Ground {
        /// Image path, http(s) URL, or blank:WxH.
        #[arg(long)]
        image: String,
        #[arg(long)]
        instruction: String,
        /// Ground-truth box `left,top,width,height` for the oracle backend.
        #[arg(long)]
        truth: Option<String>,
        /// Trace output path (default: <run-dir>/trace.json or ./trace.json).
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a dataset into a resumable run directory.
    Eval {
        /// Line-delimited sample manifest (overrides the config file).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Tag key to group metrics by; repeatable.
        #[arg(long = "group-by")]
        group_by: Vec<String>,
        /// Stop after this many new samples, leaving the run resumable.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Categorize a depth-4 results log into behavior classes.
    Bench {
        /// results.jsonl of a finished run.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accept results with depth other than 4 and pad them.
        #[arg(long)]
        lenient: bool,
    },
    /// Pick the pixel threshold separating correct from error pairs.
    Calibrate {
        /// CSV with distance,label columns.
        #[arg(long)]
        pairs: PathBuf,
        /// Where to write the threshold sweep CSV.
        #[arg(long)]
        sweep_out: Option<PathBuf>,
    },
    /// Write a seeded synthetic dataset over blank screenshots.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resolution WxH; repeatable. Defaults to 1080p, 1440p and 4K.
        #[arg(long = "size")]
        sizes: Vec<String>,
        /// Target side as a fraction of image width.
        #[arg(long, default_value_t = 0.01)]
        box_frac: f64,
        #[arg(long)]
        avoid_center: bool,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn ground_code(e: &GroundError) -> u8 {
    match e {
        GroundError::Transport { .. } | GroundError::Auth { .. } | GroundError::Http { .. } => EXIT_TRANSPORT,
        GroundError::InvalidQuery(_) | GroundError::Image(_) => EXIT_VALIDATION,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() || cause.is::<ImageLoadError>() {
            return EXIT_USAGE;
        }
        if cause.is::<NoTargetExit>() {
            return EXIT_NO_TARGET;
        }
        if let Some(g) = cause.downcast_ref::<GroundError>() {
            return ground_code(g);
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return match h {
                HarnessError::Ground(g) => ground_code(g),
                HarnessError::Io { .. } => 1,
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(z) = cause.downcast_ref::<ZoomError>() {
            return match z {
                ZoomError::NoTarget { .. } => EXIT_NO_TARGET,
                ZoomError::Ground(g) => ground_code(g),
                _ => EXIT_VALIDATION,
            };
        }
        if cause.is::<ConfigError>() || cause.is::<BenchError>() {
            return EXIT_VALIDATION;
        }
    }
    1
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ground {
            image,
            instruction,
            truth,
            trace,
            common,
        } => cmd_ground(&image, &instruction, truth.as_deref(), trace, &common),
        Command::Eval {
            dataset,
            group_by,
            stop_after,
            common,
        } => cmd_eval(dataset, group_by, stop_after, &common),
        Command::Bench { results, out, lenient } => cmd_bench(&results, &out, !lenient),
        Command::Calibrate { pairs, sweep_out } => cmd_calibrate(&pairs, sweep_out.as_deref()),
        Command::Synth {
            out,
            count,
            seed,
            sizes,
            box_frac,
            avoid_center,
        } => cmd_synth(&out, count, seed, &sizes, box_frac, avoid_center),
    }
}

fn build_grounder(cfg: &EffectiveConfig, truths: Vec<(String, PixelBox)>) -> Result<Box<dyn Grounder>> {
    Ok(match cfg.grounder {
        GrounderKind::HttpBbox | GrounderKind::HttpToolcall => {
            let (endpoint, templates) = cfg.endpoint_config()?;
            Box::new(HttpGrounder::new(endpoint, templates))
        }
        GrounderKind::Oracle => Box::new(OracleGrounder::with_truths(cfg.noise_model(), truths)),
        GrounderKind::Mock => Box::new(match &cfg.mock {
            MockSpec::Point(p) => MockGrounder::constant(*p),
            MockSpec::NoTarget => MockGrounder::no_target(),
            MockSpec::ParseFailure => MockGrounder::parse_failure("mock"),
        }),
    })
}

fn parse_box(s: &str) -> Result<PixelBox> {
    let v: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|e| UsageError(format!("bad box {s:?}: {e}")))?;
    match v[..] {
        [l, t, w, h] => Ok(PixelBox::new(l, t, w, h)),
        _ => Err(UsageError(format!("bad box {s:?}: expected left,top,width,height")).into()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_ground(
    image: &str,
    instruction: &str,
    truth: Option<&str>,
    trace: Option<PathBuf>,
    common: &CommonArgs,
) -> Result<()> {
    let cfg = EffectiveConfig::resolve(common)?;
    let shot = Screenshot::from_reference(image, Path::new(""))
        .with_context(|| format!("cannot load image {image}"))?;
    let sample_id = "cli";
    let truths = truth.map(parse_box).transpose()?.map(|b| (sample_id.to_string(), b));
    let grounder = build_grounder(&cfg, truths.into_iter().collect())?;
    if let Some(dir) = &cfg.run_dir {
        cfg.echo(dir)?;
    }
    let trace_path = trace
        .or_else(|| cfg.run_dir.as_ref().map(|d| d.join("trace.json")))
        .unwrap_or_else(|| PathBuf::from("trace.json"));

    let input = ZoomInput::new(&shot, instruction).with_id(sample_id);
    match zoom_click(&input, grounder.as_ref(), &cfg.zoom) {
        Ok(result) => {
            write_json(&trace_path, &result)?;
            println!("click {} {}", result.final_click.x, result.final_click.y);
            println!("termination {}", result.termination);
            for r in &result.rounds {
                println!("round {} crop {}x{}", r.round, r.crop.width, r.crop.height);
            }
            Ok(())
        }
        Err(ZoomError::NoTarget { prezoom, rounds }) => {
            write_json(
                &trace_path,
                &serde_json::json!({"termination": "no-target", "prezoom": prezoom, "rounds": rounds}),
            )?;
            println!("termination no-target");
            Err(NoTargetExit.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn print_table(table: &MetricsTable) {
    let depth_cols: Vec<String> = (1..=table.depth).map(|d| format!("{:>7}", format!("d{d}"))).collect();
    println!("{:<16} {:<20} {:>6} {:>8} {}", "level", "group", "n", "acc", depth_cols.join(" "));
    for r in &table.rows {
        let curve: Vec<String> = r.curve.iter().map(|a| format!("{a:>7.3}")).collect();
        println!("{:<16} {:<20} {:>6} {:>8.3} {}", r.level, r.group, r.total, r.accuracy, curve.join(" "));
    }
}

fn cmd_eval(dataset: Option<PathBuf>, group_by: Vec<String>, stop_after: Option<usize>, common: &CommonArgs) -> Result<()> {
    let mut cfg = EffectiveConfig::resolve(common)?;
    if dataset.is_some() {
        cfg.dataset = dataset;
    }
    if !group_by.is_empty() {
        cfg.group_by = group_by;
    }
    let dataset_path = cfg
        .dataset
        .clone()
        .ok_or_else(|| UsageError("no dataset: pass --dataset or set it in the config".into()))?;
    let run_dir = cfg
        .run_dir
        .clone()
        .ok_or_else(|| UsageError("no run directory: pass --run-dir or set it in the config".into()))?;
    if !dataset_path.exists() {
        return Err(UsageError(format!("dataset {} does not exist", dataset_path.display())).into());
    }
    let data = harness::load_dataset(&dataset_path)?;
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    let truths = data.samples.iter().map(|s| (s.id.clone(), s.bbox)).collect();
    let grounder = build_grounder(&cfg, truths)?;
    let opts = RunOptions {
        parallelism: cfg.parallelism,
        seed: cfg.seed,
        group_by: cfg.group_by.clone(),
        stop_after,
        ..RunOptions::default()
    };
    let summary = harness::run_eval(&data, grounder.as_ref(), &cfg.zoom, &run_dir, &opts)?;
    cfg.echo(&run_dir)?;
    info!(evaluated = summary.evaluated, skipped = summary.skipped, "run finished");
    for (id, msg) in &summary.failures {
        eprintln!("failed {id}: {msg}");
    }
    if let Some(table) = &summary.table {
        print_table(table);
    }
    println!(
        "evaluated {} new, {} already logged, {} failed; results in {}",
        summary.evaluated,
        summary.skipped,
        summary.failures.len(),
        run_dir.display()
    );
    if !summary.failures.is_empty() {
        return Err(GroundError::Transport {
            attempts: 0,
            message: format!("{} sample(s) failed; rerun to retry them", summary.failures.len()),
        }
        .into());
    }
    Ok(())
}

fn cmd_bench(results: &Path, out: &Path, strict: bool) -> Result<()> {
    let rs = harness::read_results(results)?;
    let manifest_path = results.with_file_name(harness::MANIFEST_FILE);
    let run: Option<RunManifest> = match fs::read_to_string(&manifest_path) {
        Ok(text) => Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?),
        Err(_) => None,
    };
    let m = bench::build_bench(&rs, out, strict, run)?;
    println!("{:<14} {:>6} {:>7} {:>7} {:>7} {:>7}", "category", "n", "d1", "d2", "d3", "d4");
    for c in &m.categories {
        let acc = c
            .depth_accuracy
            .map(|a| a.iter().map(|v| format!("{v:>7.3}")).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        println!("{:<14} {:>6} {acc}", c.category.as_str(), c.count);
    }
    println!("wrote {} records to {}", m.total, out.display());
    Ok(())
}

fn cmd_calibrate(pairs: &Path, sweep_out: Option<&Path>) -> Result<()> {
    let ps = bench::read_pairs_csv(pairs)?;
    let c = bench::calibrate_threshold(&ps)?;
    println!("tau {:.3} accuracy {:.4}", c.tau, c.accuracy);
    println!("correct pairs {} mean distance {:.3}", c.n_correct, c.mean_correct);
    println!("error pairs {} mean distance {:.3}", c.n_error, c.mean_error);
    if let Some(path) = sweep_out {
        let mut text = String::from("threshold,accuracy\n");
        for (t, a) in &c.sweep {
            text.push_str(&format!("{t:.6},{a:.6}\n"));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_synth(out: &Path, count: usize, seed: u64, sizes: &[String], box_frac: f64, avoid_center: bool) -> Result<()> {
    let mut spec = SynthSpec {
        count,
        seed,
        box_frac,
        avoid_center,
        ..SynthSpec::default()
    };
    if !sizes.is_empty() {
        spec.sizes = sizes
            .iter()
            .map(|s| {
                let (w, h) = s.split_once('x').ok_or_else(|| UsageError(format!("bad size {s:?}")))?;
                let dim = |v: &str| v.parse::<u32>().map_err(|e| UsageError(format!("bad size {s:?}: {e}")));
                Ok([dim(w)?, dim(h)?])
            })
            .collect::<Result<_>>()?;
    }
    if !(box_frac > 0.0 && box_frac <= 1.0) {
        return Err(UsageError(format!("--box-frac must be in (0, 1], got {box_frac}")).into());
    }
    let samples = synth::generate(&spec);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    harness::write_dataset(&samples, out)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}
