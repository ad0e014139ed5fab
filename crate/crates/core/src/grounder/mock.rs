use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{GroundError, Grounder, GroundingOutcome, GroundingQuery};
use crate::NormPoint;

/// Stub backend returning the same outcome for every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockGrounder {
    pub outcome: GroundingOutcome,
}

impl MockGrounder {
    pub fn constant(point: NormPoint) -> Self {
        Self {
            outcome: GroundingOutcome::point(point),
        }
    }

    pub fn center() -> Self {
        Self::constant(NormPoint { x: 0.5, y: 0.5 })
    }

    pub fn no_target() -> Self {
        Self {
            outcome: GroundingOutcome::NoTarget,
        }
    }

    pub fn parse_failure(raw: impl Into<String>) -> Self {
        Self {
            outcome: GroundingOutcome::ParseFailure { raw: raw.into() },
        }
    }
}

impl Grounder for MockGrounder {
    fn ground(&self, query: &GroundingQuery<'_>) -> Result<GroundingOutcome, GroundError> {
        query.validate()?;
        Ok(self.outcome.clone())
    }

    fn identity(&self) -> serde_json::Value {
        json!({"kind": "mock", "outcome": self.outcome})
    }
}
