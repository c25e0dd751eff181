//! Length-budget reward calibration and preference-pair construction.
//!
//! Each problem gets a group of sampled responses. The group fixes a token
//! length budget `p * mean_length + max_length`, where `p` is the fraction of
//! correct responses. Responses are scored by how far their length sits from
//! that budget: short correct answers score high, long incorrect answers score
//! less badly than short incorrect ones. Pairs are then formed whenever the
//! score gap exceeds a threshold and the preferred response does not use more
//! reasoning blocks than the other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::SampledResponse;

/// Default pair threshold. Correct and incorrect scores are always at least
/// 0.2 apart, so 0.3 also requires some length signal.
pub const DEFAULT_PAIR_DELTA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DastError {
    #[error("response group is empty")]
    EmptyGroup,
    #[error("length budget is zero; every response in the group is empty")]
    ZeroBudget,
    #[error("response {which} is missing its {model} log-probability")]
    MissingLogProb {
        which: &'static str,
        model: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetStats {
    /// Fraction of correct responses.
    pub p: f64,
    pub mean_length: f64,
    pub max_length: usize,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub chosen_index: usize,
    pub rejected_index: usize,
    pub chosen: SampledResponse,
    pub rejected: SampledResponse,
    pub reward_chosen: f64,
    pub reward_rejected: f64,
}

impl PreferencePair {
    pub fn reward_gap(&self) -> f64 {
        self.reward_chosen - self.reward_rejected
    }
}

pub fn token_length_budget(group: &[SampledResponse]) -> Result<BudgetStats, DastError> {
    if group.is_empty() {
        return Err(DastError::EmptyGroup);
    }
    let s = group.len() as f64;
    let n_correct = group.iter().filter(|r| r.correct).count() as f64;
    let p = n_correct / s;
    let mean_length = group.iter().map(|r| r.length as f64).sum::<f64>() / s;
    let max_length = group.iter().map(|r| r.length).max().unwrap_or(0);
    Ok(BudgetStats {
        p,
        mean_length,
        max_length,
        budget: p * mean_length + max_length as f64,
    })
}

/// Scores a response relative to its group's budget.
pub fn calibrated_reward(response: &SampledResponse, stats: &BudgetStats) -> Result<f64, DastError> {
    reward_for_length(response.length as f64, response.correct, stats.budget)
}

pub fn reward_for_length(length: f64, correct: bool, budget: f64) -> Result<f64, DastError> {
    if budget <= 0.0 {
        return Err(DastError::ZeroBudget);
    }
    let lambda = (length - budget) / budget;
    Ok(if correct {
        (-0.5 * lambda + 0.5).max(0.1)
    } else {
        (0.9 * lambda - 0.1).min(-0.1)
    })
}

/// Budget and per-response rewards for one group.
pub fn score_group(group: &[SampledResponse]) -> Result<(BudgetStats, Vec<f64>), DastError> {
    let stats = token_length_budget(group)?;
    let rewards = group
        .iter()
        .map(|r| calibrated_reward(r, &stats))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((stats, rewards))
}

/// Index pairs `(chosen, rejected)` over all ordered pairs, in row-major index
/// order, whose reward gap exceeds `delta` and whose chosen block count does
/// not exceed the rejected one.
pub fn pair_indices(rewards: &[f64], block_counts: &[usize], delta: f64) -> Vec<(usize, usize)> {
    debug_assert_eq!(rewards.len(), block_counts.len());
    let mut out = Vec::new();
    for j in 0..rewards.len() {
        for k in 0..rewards.len() {
            if rewards[j] - rewards[k] > delta && block_counts[j] <= block_counts[k] {
                out.push((j, k));
            }
        }
    }
    out
}

/// Builds pairs from responses with precomputed rewards.
pub fn pairs_from_rewards(
    group: &[SampledResponse],
    rewards: &[f64],
    delta: f64,
) -> Vec<PreferencePair> {
    let counts: Vec<usize> = group.iter().map(|r| r.trace.declared_count).collect();
    pair_indices(rewards, &counts, delta)
        .into_iter()
        .map(|(j, k)| PreferencePair {
            chosen_index: j,
            rejected_index: k,
            chosen: group[j].clone(),
            rejected: group[k].clone(),
            reward_chosen: rewards[j],
            reward_rejected: rewards[k],
        })
        .collect()
}

pub fn build_preference_pairs(
    group: &[SampledResponse],
    delta: f64,
) -> Result<Vec<PreferencePair>, DastError> {
    let (_, rewards) = score_group(group)?;
    Ok(pairs_from_rewards(group, &rewards, delta))
}

/// `-ln(sigmoid(x))`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Standard DPO loss for one pair at temperature `beta`.
pub fn dpo_loss(pair: &PreferencePair, beta: f64) -> Result<f64, DastError> {
    let get = |value: Option<f64>, which, model| value.ok_or(DastError::MissingLogProb { which, model });
    let pc = get(pair.chosen.logprob_policy, "chosen", "policy")?;
    let pr = get(pair.rejected.logprob_policy, "rejected", "policy")?;
    let rc = get(pair.chosen.logprob_ref, "chosen", "reference")?;
    let rr = get(pair.rejected.logprob_ref, "rejected", "reference")?;
    Ok(neg_log_sigmoid(beta * ((pc - pr) - (rc - rr))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{LengthUnit, ReasoningTrace};

    fn resp(length: usize, correct: bool, blocks: usize) -> SampledResponse {
        let mut r = SampledResponse::from_trace(
            "p",
            ReasoningTrace::consistent(vec!["b".into(); blocks], "x"),
            correct,
            LengthUnit::WhitespaceTokens,
        );
        r.length = length;
        r
    }

    #[test]
    fn budget_example() {
        let g = vec![
            resp(100, true, 1),
            resp(200, false, 1),
            resp(300, true, 1),
            resp(400, false, 1),
        ];
        let s = token_length_budget(&g).unwrap();
        assert_eq!(s.p, 0.5);
        assert_eq!(s.mean_length, 250.0);
        assert_eq!(s.max_length, 400);
        assert_eq!(s.budget, 525.0);
    }

    #[test]
    fn budget_edge_cases() {
        let g = vec![resp(10, false, 0), resp(30, false, 0)];
        assert_eq!(token_length_budget(&g).unwrap().budget, 30.0);
        assert_eq!(token_length_budget(&[resp(80, true, 0)]).unwrap().budget, 160.0);
        assert_eq!(token_length_budget(&[]), Err(DastError::EmptyGroup));
        let equal = vec![resp(70, true, 0); 5];
        assert_eq!(token_length_budget(&equal).unwrap().budget, 140.0);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward_for_length(100.0, true, 100.0).unwrap(), 0.5);
        assert_eq!(reward_for_length(100.0, false, 100.0).unwrap(), -0.1);
        assert_eq!(reward_for_length(200.0, true, 100.0).unwrap(), 0.1);
        assert!((reward_for_length(50.0, false, 100.0).unwrap() - -0.55).abs() < 1e-15);
        assert_eq!(reward_for_length(0.0, true, 100.0).unwrap(), 1.0);
        assert_eq!(reward_for_length(0.0, true, 0.0), Err(DastError::ZeroBudget));
    }

    #[test]
    fn all_empty_group_is_zero_budget() {
        let g = vec![resp(0, true, 0), resp(0, false, 0)];
        let stats = token_length_budget(&g).unwrap();
        assert_eq!(calibrated_reward(&g[0], &stats), Err(DastError::ZeroBudget));
    }

    #[test]
    fn pair_examples() {
        assert_eq!(pair_indices(&[0.5, -0.1], &[2, 5], 0.3), vec![(0, 1)]);
        assert!(pair_indices(&[0.5, 0.45], &[2, 5], 0.3).is_empty());
        assert!(pair_indices(&[0.5, -0.1], &[6, 2], 0.3).is_empty());
        // equal counts are allowed
        assert_eq!(pair_indices(&[-0.1, 0.5], &[3, 3], 0.3), vec![(1, 0)]);
    }

    #[test]
    fn pairs_put_correct_first() {
        let g = vec![resp(100, false, 2), resp(120, true, 3), resp(90, true, 2)];
        let pairs = build_preference_pairs(&g, DEFAULT_PAIR_DELTA).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            assert!(p.reward_gap() > DEFAULT_PAIR_DELTA);
            assert!(p.chosen.trace.declared_count <= p.rejected.trace.declared_count);
            assert!(p.chosen.correct);
        }
    }

    fn pair_with(pc: f64, pr: f64, rc: f64, rr: f64) -> PreferencePair {
        PreferencePair {
            chosen_index: 0,
            rejected_index: 1,
            chosen: resp(1, true, 0).with_logprobs(pc, rc),
            rejected: resp(2, false, 0).with_logprobs(pr, rr),
            reward_chosen: 0.5,
            reward_rejected: -0.1,
        }
    }

    #[test]
    fn dpo_loss_examples() {
        let p = pair_with(-3.0, -3.0, -3.0, -3.0);
        assert!((dpo_loss(&p, 0.1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let p = pair_with(0.0, -10.0, -5.0, -5.0);
        let expected = (-10f64).exp().ln_1p();
        assert!((dpo_loss(&p, 1.0).unwrap() - expected).abs() < 1e-18);
        assert!((expected - 4.5398899e-5).abs() < 1e-12);

        let m = pair_with(-1.0, -2.5, -2.0, -2.0);
        let doubled = pair_with(-1.0, -4.0, -2.0, -2.0);
        assert!((dpo_loss(&m, 2.0).unwrap() - dpo_loss(&doubled, 1.0).unwrap()).abs() < 1e-15);

        // large negative margins stay finite
        let p = pair_with(-1000.0, 0.0, 0.0, 0.0);
        assert!((dpo_loss(&p, 1.0).unwrap() - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn dpo_loss_needs_all_logprobs() {
        let mut p = pair_with(0.0, 0.0, 0.0, 0.0);
        p.rejected.logprob_ref = None;
        assert_eq!(
            dpo_loss(&p, 1.0),
            Err(DastError::MissingLogProb {
                which: "rejected",
                model: "reference"
            })
        );
    }
}
