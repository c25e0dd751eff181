//! Checks for block segmentations produced by an external segmenting model.
//!
//! A segmentation may only insert `<continue_think>` separators into an
//! existing reasoning trace. The number of separators is bounded below by
//! `ceil(difficulty / 2)` and above by `floor(2 * difficulty)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::BLOCK_SEPARATOR;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("difficulty must be positive, got {0}")]
    NonPositiveDifficulty(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentViolation {
    TooFewSeparators { found: usize, min_required: usize },
    TooManySeparators { found: usize, max_allowed: usize },
    /// Stripping separators does not give back the original; `offset` is the
    /// first differing byte.
    ContentChanged { offset: usize },
    InvalidDifficulty { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub separator_count: usize,
    pub min_required: usize,
    pub max_allowed: usize,
    pub content_preserved: bool,
    pub violations: Vec<SegmentViolation>,
}

impl SegmentationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `(ceil(d / 2), floor(2 d))`.
pub fn segment_bounds(difficulty: f64) -> Result<(usize, usize), SegmentError> {
    if !(difficulty > 0.0) || !difficulty.is_finite() {
        return Err(SegmentError::NonPositiveDifficulty(difficulty));
    }
    Ok(((difficulty / 2.0).ceil() as usize, (2.0 * difficulty).floor() as usize))
}

pub fn strip_separators(segmented: &str) -> String {
    segmented.replace(BLOCK_SEPARATOR, "")
}

pub fn count_separators(segmented: &str) -> usize {
    segmented.matches(BLOCK_SEPARATOR).count()
}

fn first_difference(a: &[u8], b: &[u8]) -> Option<usize> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

pub fn validate_segmentation(original: &str, segmented: &str, difficulty: f64) -> SegmentationReport {
    let separator_count = count_separators(segmented);
    let stripped = strip_separators(segmented);
    let diff = first_difference(original.as_bytes(), stripped.as_bytes());
    let mut violations = Vec::new();

    let (min_required, max_allowed) = match segment_bounds(difficulty) {
        Ok(bounds) => bounds,
        Err(e) => {
            violations.push(SegmentViolation::InvalidDifficulty {
                detail: e.to_string(),
            });
            (0, 0)
        }
    };
    if violations.is_empty() {
        if separator_count < min_required {
            violations.push(SegmentViolation::TooFewSeparators {
                found: separator_count,
                min_required,
            });
        }
        if separator_count > max_allowed {
            violations.push(SegmentViolation::TooManySeparators {
                found: separator_count,
                max_allowed,
            });
        }
    }
    if let Some(offset) = diff {
        violations.push(SegmentViolation::ContentChanged { offset });
    }

    SegmentationReport {
        separator_count,
        min_required,
        max_allowed,
        content_preserved: diff.is_none(),
        violations,
    }
}
