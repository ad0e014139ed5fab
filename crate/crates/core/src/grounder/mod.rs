//! Grounding backends.
//!
//! A [`Grounder`] turns one view of a screenshot plus an instruction into a
//! normalized point relative to that view. Malformed model output is never an
//! error here: it comes back as [`GroundingOutcome::ParseFailure`]. Only
//! transport-level problems surface as [`GroundError`].

mod http;
mod mock;
mod oracle;
mod parse;
pub mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PixelBox;
use crate::screenshot::{ImageLoadError, Screenshot};
use crate::NormPoint;

pub use http::{EndpointConfig, HttpGrounder, PromptProtocol, TOKEN_ENV_VAR};
pub use mock::MockGrounder;
pub use oracle::{oracle_ground, OracleGrounder, OracleNoiseModel};
pub use parse::{parse_bbox_response, parse_toolcall_response};

/// One grounding request: a crop of the original screenshot and the
/// instruction text. `sample_id` and `round` identify the call for
/// deterministic backends and logs.
#[derive(Debug, Clone, Copy)]
pub struct GroundingQuery<'a> {
    pub screenshot: &'a Screenshot,
    /// Crop in original-image pixels.
    pub crop: PixelBox,
    pub instruction: &'a str,
    pub sample_id: &'a str,
    pub round: usize,
}

impl<'a> GroundingQuery<'a> {
    pub fn new(screenshot: &'a Screenshot, crop: PixelBox, instruction: &'a str) -> Self {
        Self {
            screenshot,
            crop,
            instruction,
            sample_id: "",
            round: 1,
        }
    }

    pub fn with_sample(mut self, sample_id: &'a str, round: usize) -> Self {
        self.sample_id = sample_id;
        self.round = round;
        self
    }

    pub fn width(&self) -> u32 {
        self.crop.width
    }

    pub fn height(&self) -> u32 {
        self.crop.height
    }

    pub fn validate(&self) -> Result<(), GroundError> {
        if self.crop.width == 0 || self.crop.height == 0 {
            return Err(GroundError::InvalidQuery("empty crop".into()));
        }
        if self.instruction.trim().is_empty() {
            return Err(GroundError::InvalidQuery("empty instruction".into()));
        }
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, GroundError> {
        Ok(self.screenshot.encode_crop_png(&self.crop)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundingOutcome {
    /// Point relative to the queried view. `clamped` is set when the model
    /// answered outside the view and the point was pulled back inside.
    Point {
        point: NormPoint,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        clamped: bool,
    },
    NoTarget,
    ParseFailure { raw: String },
}

impl GroundingOutcome {
    pub fn point(point: NormPoint) -> Self {
        GroundingOutcome::Point {
            point,
            clamped: false,
        }
    }

    pub fn as_point(&self) -> Option<NormPoint> {
        match self {
            GroundingOutcome::Point { point, .. } => Some(*point),
            _ => None,
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, GroundingOutcome::Point { .. })
    }
}

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint rejected credentials (HTTP {status}); set {env_var} to a valid token")]
    Auth { status: u16, env_var: &'static str },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid grounding query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Image(#[from] ImageLoadError),
}

impl GroundError {
    /// Whether a caller could reasonably retry the same query later.
    pub fn is_retriable(&self) -> bool {
        match self {
            GroundError::Transport { .. } => true,
            GroundError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Grounder: Send + Sync {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<GroundingOutcome, GroundError>;

    /// Stable description of the backend, recorded in run manifests and
    /// folded into the run's config hash.
    fn identity(&self) -> serde_json::Value;
}

impl<G: Grounder + ?Sized> Grounder for &G {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<GroundingOutcome, GroundError> {
        (**self).ground(query)
    }

    fn identity(&self) -> serde_json::Value {
        (**self).identity()
    }
}

impl<G: Grounder + ?Sized> Grounder for Box<G> {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<GroundingOutcome, GroundError> {
        (**self).ground(query)
    }

    fn identity(&self) -> serde_json::Value {
        (**self).identity()
    }
}

impl<G: Grounder + ?Sized> Grounder for std::sync::Arc<G> {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<GroundingOutcome, GroundError> {
        (**self).ground(query)
    }

    fn identity(&self) -> serde_json::Value {
        (**self).identity()
    }
}
