//! Block-cap decoding.
//!
//! Generation is split at the block-count position: the policy scores every
//! count `0..=K`, counts outside the caller's range are masked to `-inf`, one
//! count is drawn from the renormalised softmax, and the rest of the response
//! is generated conditioned on it.

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{ProblemRecord, SampledResponse};

pub const DEFAULT_MAX_BLOCKS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("no block count in [{cap_low}, {cap_high}] has a finite logit (K = {max_count})")]
    AllMasked {
        cap_low: usize,
        cap_high: usize,
        max_count: usize,
    },
    #[error("invalid cap: cap_low {cap_low} > cap_high {cap_high}")]
    InvalidCap { cap_low: usize, cap_high: usize },
    #[error("policy returned declared count {got} for requested count {expected}")]
    PolicyViolation {
        expected: usize,
        got: usize,
        response: Box<SampledResponse>,
    },
}

/// Logits over block counts `0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCountDistribution {
    pub logits: Vec<f64>,
}

impl BlockCountDistribution {
    pub fn new(logits: Vec<f64>) -> Self {
        BlockCountDistribution { logits }
    }

    /// Largest representable block count.
    pub fn max_count(&self) -> usize {
        self.logits.len().saturating_sub(1)
    }

    /// Softmax with max-subtraction; `-inf` entries get exactly zero. `None`
    /// when no entry is finite.
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        let max = self
            .logits
            .iter()
            .copied()
            .filter(|l| l.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let weights: Vec<f64> = self
            .logits
            .iter()
            .map(|l| if l.is_finite() { (l - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        Some(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn argmax(&self) -> Option<usize> {
        self.logits
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_finite())
            .fold(None, |best: Option<(usize, f64)>, (i, &l)| match best {
                Some((_, b)) if b >= l => best,
                _ => Some((i, l)),
            })
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapMode {
    #[default]
    Auto,
    Override,
}

/// Inclusive block-count range. Ignored in auto mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapSpec {
    pub cap_low: usize,
    pub cap_high: usize,
    pub mode: CapMode,
}

impl CapSpec {
    pub fn auto() -> Self {
        CapSpec {
            cap_low: 0,
            cap_high: usize::MAX,
            mode: CapMode::Auto,
        }
    }

    pub fn range(cap_low: usize, cap_high: usize) -> Self {
        CapSpec {
            cap_low,
            cap_high,
            mode: CapMode::Override,
        }
    }

    pub fn at_most(k: usize) -> Self {
        Self::range(0, k)
    }

    pub fn at_least(k: usize) -> Self {
        Self::range(k, usize::MAX)
    }

    pub fn contains(&self, k: usize) -> bool {
        self.mode == CapMode::Auto || (self.cap_low..=self.cap_high).contains(&k)
    }

    /// Parses `auto`, `N` (at most N), `>N` (at least N+1), `>=N`, or `A-B`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let num = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("invalid cap {s:?}"))
        };
        if s.eq_ignore_ascii_case("auto") || s.eq_ignore_ascii_case("none") {
            Ok(Self::auto())
        } else if let Some(rest) = s.strip_prefix(">=") {
            Ok(Self::at_least(num(rest)?))
        } else if let Some(rest) = s.strip_prefix('>') {
            Ok(Self::at_least(num(rest)? + 1))
        } else if let Some(rest) = s.strip_prefix("<=") {
            Ok(Self::at_most(num(rest)?))
        } else if let Some((a, b)) = s.split_once('-') {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(format!("invalid cap {s:?}: low bound above high bound"));
            }
            Ok(Self::range(a, b))
        } else {
            Ok(Self::at_most(num(s)?))
        }
    }
}

impl fmt::Display for CapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.mode, self.cap_low, self.cap_high) {
            (CapMode::Auto, _, _) => write!(f, "auto"),
            (_, 0, hi) => write!(f, "<={hi}"),
            (_, lo, usize::MAX) => write!(f, ">{}", lo - 1),
            (_, lo, hi) => write!(f, "{lo}-{hi}"),
        }
    }
}

pub fn mask_block_logits(
    dist: &BlockCountDistribution,
    cap: &CapSpec,
) -> Result<BlockCountDistribution, DecodeError> {
    if cap.mode == CapMode::Auto {
        return Ok(dist.clone());
    }
    if cap.cap_low > cap.cap_high {
        return Err(DecodeError::InvalidCap {
            cap_low: cap.cap_low,
            cap_high: cap.cap_high,
        });
    }
    let logits: Vec<f64> = dist
        .logits
        .iter()
        .enumerate()
        .map(|(k, &l)| if cap.contains(k) { l } else { f64::NEG_INFINITY })
        .collect();
    if !logits.iter().any(|l| l.is_finite()) {
        return Err(DecodeError::AllMasked {
            cap_low: cap.cap_low,
            cap_high: cap.cap_high,
            max_count: dist.max_count(),
        });
    }
    Ok(BlockCountDistribution { logits })
}

fn all_masked(dist: &BlockCountDistribution) -> DecodeError {
    DecodeError::AllMasked {
        cap_low: 0,
        cap_high: dist.max_count(),
        max_count: dist.max_count(),
    }
}

/// Draws a block count by inverse-CDF over the softmax.
pub fn sample_block_count<R: Rng + ?Sized>(
    dist: &BlockCountDistribution,
    rng: &mut R,
) -> Result<usize, DecodeError> {
    let probs = dist.probabilities().ok_or_else(|| all_masked(dist))?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        acc += p;
        last_positive = k;
        if u < acc {
            return Ok(k);
        }
    }
    // u landed in the rounding slack above the accumulated mass
    Ok(last_positive)
}

/// A generator that exposes block-count logits and count-conditioned
/// generation. Implementations must be safe for concurrent read-only use.
pub trait BlockPolicy {
    fn predict_block_logits(&self, problem: &ProblemRecord) -> BlockCountDistribution;

    /// Generates a response whose trace declares `k` blocks.
    fn generate_conditioned(
        &self,
        problem: &ProblemRecord,
        k: usize,
        rng: &mut dyn RngCore,
    ) -> SampledResponse;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoder {
    pub cap: CapSpec,
    /// Take the most likely admissible count instead of sampling.
    pub greedy: bool,
    /// Extra generation attempts after a policy violation.
    pub retry_budget: usize,
}

impl Decoder {
    pub fn new(cap: CapSpec) -> Self {
        Decoder {
            cap,
            greedy: false,
            retry_budget: 0,
        }
    }

    pub fn choose_count(
        &self,
        dist: &BlockCountDistribution,
        rng: &mut dyn RngCore,
    ) -> Result<usize, DecodeError> {
        let masked = mask_block_logits(dist, &self.cap)?;
        if self.greedy {
            masked.argmax().ok_or_else(|| all_masked(&masked))
        } else {
            sample_block_count(&masked, rng)
        }
    }

    pub fn decode<P: BlockPolicy + ?Sized>(
        &self,
        policy: &P,
        problem: &ProblemRecord,
        rng: &mut dyn RngCore,
    ) -> Result<SampledResponse, DecodeError> {
        let dist = policy.predict_block_logits(problem);
        let k = self.choose_count(&dist, rng)?;
        let mut attempt = 0;
        loop {
            let response = policy.generate_conditioned(problem, k, rng);
            let got = response.trace.declared_count;
            if got == k {
                return Ok(response);
            }
            if attempt >= self.retry_budget {
                return Err(DecodeError::PolicyViolation {
                    expected: k,
                    got,
                    response: Box::new(response),
                });
            }
            attempt += 1;
        }
    }
}

/// Convenience wrapper: one decode with a fresh decoder.
pub fn decode<P: BlockPolicy + ?Sized>(
    policy: &P,
    problem: &ProblemRecord,
    cap: CapSpec,
    rng: &mut dyn RngCore,
) -> Result<SampledResponse, DecodeError> {
    Decoder::new(cap).decode(policy, problem, rng)
}
