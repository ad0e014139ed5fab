//! The zoom search itself.
//!
//! Round 1 is either a single global prediction or the pre-zoom agreement
//! test (one global call plus one call per grid tile). Every later round
//! shrinks the current view size by the schedule, floors it at the minimum
//! crop, places the window around the last click in *original* pixels, and
//! queries the grounder on that crop. A round that finds no target ends the
//! search with the previous click.

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::debug;

use crate::geometry::{
    map_to_original, next_crop_size, patch_grid, place_window, to_pixels, viewport_from_box,
    BoundaryMode, GeometryError, PixelBox, PixelPoint,
};
use crate::grounder::{GroundError, Grounder, GroundingOutcome, GroundingQuery};
use crate::screenshot::Screenshot;
use crate::{NormPoint, Viewport};

/// Tile grid shape, written `RxC` (rows x columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub rows: u32,
    pub cols: u32,
}

impl Grid {
    pub const fn new(rows: u32, cols: u32) -> Self {
        Self { rows, cols }
    }

    pub fn tiles(&self) -> usize {
        (self.rows * self.cols) as usize
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::new(2, 2)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("grid `{s}` is not of the form RxC");
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows = r.trim().parse().map_err(|_| bad())?;
        let cols = c.trim().parse().map_err(|_| bad())?;
        Ok(Grid { rows, cols })
    }
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("shrink schedule is empty")]
    EmptySchedule,
    #[error("shrink ratio {0} is outside (0, 1)")]
    BadRatio(f64),
    #[error("shrink schedule has {len} entries but depth {depth} needs {needed} (or exactly 1)")]
    ShortSchedule { len: usize, depth: usize, needed: usize },
    #[error("minimum crop size must be at least 1 pixel")]
    ZeroMinCrop,
    #[error("distance threshold must be a finite value >= 0, got {0}")]
    BadTau(f64),
    #[error("pre-zoom grid {0} has an empty dimension")]
    BadGrid(Grid),
}

/// Zoom search parameters. Defaults: 3 rounds, shrink 0.5, 768 px floor,
/// 2x2 pre-zoom grid with a 50 px agreement threshold, clip placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoomConfig {
    /// Number of grounding rounds (pre-zoom counts as round 1).
    pub depth: usize,
    /// Shrink ratio per narrowing step; a single entry repeats.
    pub shrink: Vec<f64>,
    pub min_crop: u32,
    pub prezoom: bool,
    pub grid: Grid,
    /// Pre-zoom agreement threshold in original-image pixels.
    pub tau: f64,
    pub boundary: BoundaryMode,
}

impl Default for ZoomConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            shrink: vec![0.5],
            min_crop: 768,
            prezoom: true,
            grid: Grid::default(),
            tau: 50.0,
            boundary: BoundaryMode::Clip,
        }
    }
}

impl ZoomConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.depth == 0 {
            return Err(ConfigError::ZeroDepth);
        }
        if self.shrink.is_empty() {
            return Err(ConfigError::EmptySchedule);
        }
        if let Some(&r) = self.shrink.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(ConfigError::BadRatio(r));
        }
        let needed = self.depth - 1;
        if self.shrink.len() != 1 && self.shrink.len() < needed {
            return Err(ConfigError::ShortSchedule {
                len: self.shrink.len(),
                depth: self.depth,
                needed,
            });
        }
        if self.min_crop == 0 {
            return Err(ConfigError::ZeroMinCrop);
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(ConfigError::BadTau(self.tau));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(ConfigError::BadGrid(self.grid));
        }
        Ok(())
    }

    /// Shrink ratio for the narrowing step that produces round `step + 2`.
    pub fn rho(&self, step: usize) -> f64 {
        if self.shrink.len() == 1 {
            self.shrink[0]
        } else {
            self.shrink[step.min(self.shrink.len() - 1)]
        }
    }

    /// The ratios actually applied for this depth.
    pub fn effective_schedule(&self) -> Vec<f64> {
        (0..self.depth.saturating_sub(1)).map(|s| self.rho(s)).collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Collapses all narrowing steps into a single step whose ratio is their
/// product, e.g. two x1/2 steps become one x1/4 step.
pub fn schedule_equivalent_one_step(config: &ZoomConfig) -> ZoomConfig {
    let steps = config.effective_schedule();
    if steps.len() <= 1 {
        return config.clone();
    }
    ZoomConfig {
        depth: 2,
        shrink: vec![steps.iter().product()],
        ..config.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    DepthReached,
    MinCropReached,
    NoTarget,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::DepthReached => "depth-reached",
            Termination::MinCropReached => "min-crop-reached",
            Termination::NoTarget => "no-target",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// View the raw prediction is relative to.
    pub viewport: Viewport,
    /// The same view in original-image pixels.
    pub crop: PixelBox,
    pub raw: GroundingOutcome,
    pub mapped: Option<NormPoint>,
    pub mapped_px: Option<PixelPoint>,
    pub wall_ms: f64,
}

impl RoundRecord {
    /// Re-derives the mapped point from the stored raw prediction.
    pub fn remap(&self) -> Option<NormPoint> {
        self.raw.as_point().map(|p| map_to_original(p, &self.viewport))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub tile: PixelBox,
    pub raw: GroundingOutcome,
    pub mapped: Option<NormPoint>,
    pub mapped_px: Option<PixelPoint>,
    /// Pixel distance to the global prediction; absent if either failed.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreZoomRecord {
    pub global_raw: GroundingOutcome,
    pub global_px: Option<PixelPoint>,
    pub tiles: Vec<TileRecord>,
    /// Tile adopted because it agreed with the global prediction.
    pub chosen: Option<usize>,
    /// Tile used only because the global call failed.
    pub fallback: Option<usize>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomResult {
    pub final_click: PixelPoint,
    pub termination: Termination,
    pub prezoom: Option<PreZoomRecord>,
    pub rounds: Vec<RoundRecord>,
    /// Click that would be emitted if the search stopped after each round.
    pub clicks: Vec<PixelPoint>,
}

#[derive(Debug, Error)]
pub enum ZoomError {
    #[error("no target found in the first round")]
    NoTarget {
        prezoom: Option<Box<PreZoomRecord>>,
        rounds: Vec<RoundRecord>,
    },
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// What to ground: the screenshot, the instruction and an id used by
/// deterministic backends.
#[derive(Debug, Clone, Copy)]
pub struct ZoomInput<'a> {
    pub screenshot: &'a Screenshot,
    pub instruction: &'a str,
    pub sample_id: &'a str,
}

impl<'a> ZoomInput<'a> {
    pub fn new(screenshot: &'a Screenshot, instruction: &'a str) -> Self {
        Self {
            screenshot,
            instruction,
            sample_id: "",
        }
    }

    pub fn with_id(mut self, sample_id: &'a str) -> Self {
        self.sample_id = sample_id;
        self
    }

    fn query(&self, crop: PixelBox, round: usize) -> GroundingQuery<'a> {
        GroundingQuery::new(self.screenshot, crop, self.instruction).with_sample(self.sample_id, round)
    }
}

/// Starting point chosen by the pre-zoom test.
#[derive(Debug, Clone, PartialEq)]
pub struct PreZoomStart {
    pub point: NormPoint,
    pub pixel: PixelPoint,
    pub record: PreZoomRecord,
}

#[derive(Debug, Error)]
pub enum PreZoomError {
    #[error("neither the global view nor any tile found the target")]
    NoTarget(PreZoomRecord),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Runs one global call and one call per tile, concurrently, and picks the
/// starting point: the tile prediction nearest the global one if it is
/// closer than `tau` pixels, otherwise the global prediction.
pub fn pre_zoom<G: Grounder + ?Sized>(
    input: &ZoomInput<'_>,
    grounder: &G,
    grid: Grid,
    tau: f64,
) -> Result<PreZoomStart, PreZoomError> {
    let (w, h) = input.screenshot.dims();
    let full = PixelBox::full(w, h);
    let tiles = patch_grid(w, h, grid.rows, grid.cols)?;

    let (global, tile_outcomes) = thread::scope(|s| {
        let handles: Vec<_> = tiles
            .iter()
            .map(|tile| {
                let q = input.query(*tile, 1);
                s.spawn(move || grounder.ground(&q))
            })
            .collect();
        let global = grounder.ground(&input.query(full, 1));
        let tiles: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("grounder thread panicked"))
            .collect();
        (global, tiles)
    });
    let global_raw = global?;
    let global_point = global_raw.as_point();
    let global_px = global_point.map(|p| to_pixels(p, w, h));

    let mut records = Vec::with_capacity(tiles.len());
    for (tile, outcome) in tiles.iter().zip(tile_outcomes) {
        let raw = outcome?;
        let mapped = raw.as_point().map(|p| map_to_original(p, &viewport_from_box(tile, w, h)));
        let mapped_px = mapped.map(|p| to_pixels(p, w, h));
        if let GroundingOutcome::Point { clamped: true, .. } = raw {
            debug!(sample = input.sample_id, ?tile, "tile prediction clamped into its tile");
        }
        let distance = match (global_px, mapped_px) {
            (Some(g), Some(t)) => Some(g.distance(&t)),
            _ => None,
        };
        records.push(TileRecord {
            tile: *tile,
            raw,
            mapped,
            mapped_px,
            distance,
        });
    }

    let distances: Vec<_> = records.iter().map(|r| r.distance).collect();
    let chosen = select_tile(&distances, tau);
    let fallback = if global_point.is_none() {
        let center = |p: NormPoint| ((p.x - 0.5) * w as f64).hypot((p.y - 0.5) * h as f64);
        argmin(records.iter().map(|r| r.mapped.map(center)))
    } else {
        None
    };

    let record = PreZoomRecord {
        global_raw,
        global_px,
        tiles: records,
        chosen,
        fallback,
        tau,
    };
    let point = match (chosen.or(fallback), global_point) {
        (Some(k), _) => record.tiles[k].mapped.expect("selected tile has a point"),
        (None, Some(g)) => g,
        (None, None) => return Err(PreZoomError::NoTarget(record)),
    };
    Ok(PreZoomStart {
        point,
        pixel: to_pixels(point, w, h),
        record,
    })
}

/// Agreement rule: the tile with the smallest distance to the global
/// prediction, if that distance is below `tau`.
pub fn select_tile(distances: &[Option<f64>], tau: f64) -> Option<usize> {
    argmin(distances.iter().copied()).filter(|&k| distances[k].is_some_and(|d| d < tau))
}

/// Index of the smallest present value; ties go to the lowest index.
fn argmin(values: impl Iterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs the full zoom search for one instruction.
pub fn zoom_click<G: Grounder + ?Sized>(
    input: &ZoomInput<'_>,
    grounder: &G,
    config: &ZoomConfig,
) -> Result<ZoomResult, ZoomError> {
    config.validate()?;
    let (w, h) = input.screenshot.dims();
    let full = PixelBox::full(w, h);

    // Round 1: the point is expressed in original coordinates against the
    // full-image viewport either way.
    let started = Instant::now();
    let (first, prezoom) = if config.prezoom {
        match pre_zoom(input, grounder, config.grid, config.tau) {
            Ok(start) => (GroundingOutcome::point(start.point), Some(start.record)),
            Err(PreZoomError::NoTarget(record)) => {
                let round = RoundRecord {
                    round: 1,
                    viewport: Viewport::full(),
                    crop: full,
                    raw: record.global_raw.clone(),
                    mapped: None,
                    mapped_px: None,
                    wall_ms: elapsed_ms(started),
                };
                return Err(ZoomError::NoTarget {
                    prezoom: Some(Box::new(record)),
                    rounds: vec![round],
                });
            }
            Err(PreZoomError::Ground(e)) => return Err(e.into()),
            Err(PreZoomError::Geometry(e)) => return Err(e.into()),
        }
    } else {
        (grounder.ground(&input.query(full, 1))?, None)
    };

    let Some(first_point) = first.as_point() else {
        let round = RoundRecord {
            round: 1,
            viewport: Viewport::full(),
            crop: full,
            raw: first,
            mapped: None,
            mapped_px: None,
            wall_ms: elapsed_ms(started),
        };
        return Err(ZoomError::NoTarget {
            prezoom: prezoom.map(Box::new),
            rounds: vec![round],
        });
    };
    let viewport = Viewport::full();
    let mut current = map_to_original(first_point, &viewport);
    let mut click = to_pixels(current, w, h);
    let mut rounds = vec![RoundRecord {
        round: 1,
        viewport,
        crop: full,
        raw: first,
        mapped: Some(current),
        mapped_px: Some(click),
        wall_ms: elapsed_ms(started),
    }];
    let mut clicks = vec![click];
    let mut view = full;
    let mut termination = Termination::DepthReached;

    for step in 0..config.depth - 1 {
        if view.width <= config.min_crop && view.height <= config.min_crop {
            termination = Termination::MinCropReached;
            break;
        }
        let round = step + 2;
        let started = Instant::now();
        let (cw, ch) = next_crop_size(view.width, view.height, config.rho(step), config.min_crop)?;
        let crop = place_window(click, cw, ch, w, h, config.boundary);
        let viewport = viewport_from_box(&crop, w, h);
        let raw = grounder.ground(&input.query(crop, round))?;
        debug!(sample = input.sample_id, round, ?crop, ?raw, "zoom round");

        match raw.as_point() {
            Some(p) => {
                current = map_to_original(p, &viewport);
                click = to_pixels(current, w, h);
                rounds.push(RoundRecord {
                    round,
                    viewport,
                    crop,
                    raw,
                    mapped: Some(current),
                    mapped_px: Some(click),
                    wall_ms: elapsed_ms(started),
                });
                clicks.push(click);
                view = crop;
            }
            None => {
                rounds.push(RoundRecord {
                    round,
                    viewport,
                    crop,
                    raw,
                    mapped: None,
                    mapped_px: None,
                    wall_ms: elapsed_ms(started),
                });
                clicks.push(click);
                termination = Termination::NoTarget;
                break;
            }
        }
    }

    Ok(ZoomResult {
        final_click: click,
        termination,
        prezoom,
        rounds,
        clicks,
    })
}
