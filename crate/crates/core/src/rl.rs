//! Constrained-RL reward machinery.
//!
//! The per-sample advantage combines the task-reward gain over a reference
//! policy with a bonus for answering without reasoning and three penalties:
//! declared block count, mean block length, and the gap between declared and
//! actual block counts. Multipliers are scaled by an accuracy-aware factor so
//! the efficiency terms only bite once the policy is accurate enough.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{block_lengths, LengthUnit};
use crate::record::SampledResponse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error("reference correctness list is empty")]
    EmptyList,
    #[error("rollout batch is empty")]
    EmptyBatch,
    #[error("importance ratio exp({exponent}) is not finite")]
    NonFiniteRatio { exponent: f64 },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// Reward coefficients, accuracy thresholds and clip ratios.
///
/// Field names double as the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub nothink_bonus_coef: f64,
    pub count_coef: f64,
    pub block_len_coef: f64,
    pub seg_count_coef: f64,
    pub accuracy_threshold_low: f64,
    pub accuracy_threshold_high: f64,
    pub clip_ratio_low: f64,
    pub clip_ratio_high: f64,
    /// Divides mean block length before `block_len_coef` applies.
    pub block_len_normalizer: f64,
    pub length_unit: LengthUnit,
    pub pair_delta: f64,
    pub dpo_beta: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            nothink_bonus_coef: 0.1,
            count_coef: 0.05,
            block_len_coef: 0.5,
            seg_count_coef: 0.1,
            accuracy_threshold_low: 0.75,
            accuracy_threshold_high: 0.9,
            clip_ratio_low: 0.2,
            clip_ratio_high: 0.28,
            block_len_normalizer: 1.0,
            length_unit: LengthUnit::WhitespaceTokens,
            pair_delta: crate::dast::DEFAULT_PAIR_DELTA,
            dpo_beta: 0.1,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |msg: &str| Err(RlError::InvalidConfig(msg.to_string()));
        if self.lambda_star().0.iter().any(|l| !(*l >= 0.0)) {
            return bad("coefficients must be non-negative");
        }
        let (lo, hi) = (self.accuracy_threshold_low, self.accuracy_threshold_high);
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return bad("need 0 <= accuracy_threshold_low < accuracy_threshold_high <= 1");
        }
        if !(self.clip_ratio_low > 0.0 && self.clip_ratio_high > 0.0) {
            return bad("clip ratios must be positive");
        }
        if !(self.block_len_normalizer > 0.0) {
            return bad("block_len_normalizer must be positive");
        }
        if !(self.pair_delta >= 0.0) {
            return bad("pair_delta must be non-negative");
        }
        if !(self.dpo_beta > 0.0) {
            return bad("dpo_beta must be positive");
        }
        Ok(())
    }

    /// Base multipliers before accuracy scaling.
    pub fn lambda_star(&self) -> Multipliers {
        Multipliers([
            self.nothink_bonus_coef,
            self.count_coef,
            self.block_len_coef,
            self.seg_count_coef,
        ])
    }
}

/// The four Lagrange multipliers: no-think bonus, block count, mean block
/// length, format mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers(pub [f64; 4]);

impl Multipliers {
    pub const ZERO: Multipliers = Multipliers([0.0; 4]);

    pub fn nothink(&self) -> f64 {
        self.0[0]
    }
    pub fn count(&self) -> f64 {
        self.0[1]
    }
    pub fn block_len(&self) -> f64 {
        self.0[2]
    }
    pub fn mismatch(&self) -> f64 {
        self.0[3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBreakdown {
    pub task_delta: f64,
    pub nothink_bonus: f64,
    pub count_penalty: f64,
    pub block_len_penalty: f64,
    pub format_penalty: f64,
    pub total: f64,
}

/// Which samples the accuracy used for multiplier scaling is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyScope {
    #[default]
    PerProblem,
    Batch,
}

/// Monte-Carlo estimate of the reference policy's expected reward.
pub fn reference_reward_estimate(ref_correct: &[bool]) -> Result<f64, RlError> {
    if ref_correct.is_empty() {
        return Err(RlError::EmptyList);
    }
    Ok(ref_correct.iter().filter(|c| **c).count() as f64 / ref_correct.len() as f64)
}

pub fn accuracy_scale(p: f64, config: &RewardConfig) -> f64 {
    let (lo, hi) = (config.accuracy_threshold_low, config.accuracy_threshold_high);
    ((p - lo) / (hi - lo)).clamp(0.0, 1.0)
}

pub fn scaled_multipliers(config: &RewardConfig, h: f64) -> Multipliers {
    let mut m = config.lambda_star();
    for l in m.0.iter_mut() {
        *l *= h;
    }
    m
}

/// Mean length of the blocks actually present; zero for a no-think trace.
pub fn mean_block_length(response: &SampledResponse, unit: LengthUnit) -> f64 {
    let lengths = block_lengths(&response.trace, |b| unit.measure(b));
    if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
    }
}

pub fn advantage(
    response: &SampledResponse,
    r_ref: f64,
    lambdas: &Multipliers,
    config: &RewardConfig,
) -> AdvantageBreakdown {
    let reward = if response.correct { 1.0 } else { 0.0 };
    let trace = &response.trace;
    let task_delta = reward - r_ref;
    let nothink_bonus = if trace.is_no_think() {
        lambdas.nothink()
    } else {
        0.0
    };
    let count_penalty = lambdas.count() * trace.declared_count as f64;
    let block_len_penalty = lambdas.block_len()
        * (mean_block_length(response, config.length_unit) / config.block_len_normalizer);
    let format_penalty = lambdas.mismatch() * trace.mismatch() as f64;
    AdvantageBreakdown {
        task_delta,
        nothink_bonus,
        count_penalty,
        block_len_penalty,
        format_penalty,
        total: task_delta + nothink_bonus - count_penalty - block_len_penalty - format_penalty,
    }
}

/// Clipped surrogate for a known importance ratio.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * adv).min(clipped * adv)
}

/// Sequence-level PPO surrogate with asymmetric clip ratios.
pub fn ppo_surrogate(
    logp_new: f64,
    logp_old: f64,
    adv: f64,
    config: &RewardConfig,
) -> Result<f64, RlError> {
    let exponent = logp_new - logp_old;
    let ratio = exponent.exp();
    if !ratio.is_finite() || !adv.is_finite() {
        return Err(RlError::NonFiniteRatio { exponent });
    }
    Ok(clipped_surrogate(
        ratio,
        adv,
        config.clip_ratio_low,
        config.clip_ratio_high,
    ))
}

/// Empirical Lagrangian terms averaged over a rollout batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub samples: usize,
    pub mean_task_delta: f64,
    pub nothink_fraction: f64,
    pub mean_declared_count: f64,
    pub mean_block_length: f64,
    pub mean_mismatch: f64,
    pub lambdas: Multipliers,
    pub total: f64,
}

/// Sum with a fixed pairwise reduction tree, so results do not depend on how
/// callers chunk the work.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    pairwise_sum(&v) / v.len() as f64
}

pub fn rollout_objective(
    batch: &[(SampledResponse, f64)],
    lambdas: &Multipliers,
    config: &RewardConfig,
) -> Result<RolloutSummary, RlError> {
    if batch.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let mean_task_delta = mean_of(
        batch
            .iter()
            .map(|(r, r_ref)| if r.correct { 1.0 } else { 0.0 } - r_ref),
    );
    let nothink_fraction = mean_of(
        batch
            .iter()
            .map(|(r, _)| if r.trace.is_no_think() { 1.0 } else { 0.0 }),
    );
    let mean_declared_count = mean_of(batch.iter().map(|(r, _)| r.trace.declared_count as f64));
    let mean_block_length = mean_of(
        batch
            .iter()
            .map(|(r, _)| mean_block_length(r, config.length_unit) / config.block_len_normalizer),
    );
    let mean_mismatch = mean_of(batch.iter().map(|(r, _)| r.trace.mismatch() as f64));
    let total = mean_task_delta + lambdas.nothink() * nothink_fraction
        - lambdas.count() * mean_declared_count
        - lambdas.block_len() * mean_block_length
        - lambdas.mismatch() * mean_mismatch;
    Ok(RolloutSummary {
        samples: batch.len(),
        mean_task_delta,
        nothink_fraction,
        mean_declared_count,
        mean_block_length,
        mean_mismatch,
        lambdas: *lambdas,
        total,
    })
}

/// Advantages for one problem group with accuracy-scaled multipliers.
///
/// `p` is the group's own accuracy under [`AccuracyScope::PerProblem`];
/// callers pass a batch-wide accuracy for [`AccuracyScope::Batch`].
pub fn group_advantages(
    group: &[SampledResponse],
    r_ref: f64,
    p: f64,
    config: &RewardConfig,
) -> (f64, Multipliers, Vec<AdvantageBreakdown>) {
    let h = accuracy_scale(p, config);
    let lambdas = scaled_multipliers(config, h);
    let advs = group
        .iter()
        .map(|r| advantage(r, r_ref, &lambdas, config))
        .collect();
    (h, lambdas, advs)
}

/// Fraction of correct responses.
pub fn empirical_accuracy<'a>(responses: impl IntoIterator<Item = &'a SampledResponse>) -> f64 {
    let (n, c) = responses
        .into_iter()
        .fold((0usize, 0usize), |(n, c), r| (n + 1, c + usize::from(r.correct)));
    if n == 0 {
        0.0
    } else {
        c as f64 / n as f64
    }
}
