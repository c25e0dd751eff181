//! Synthetic block policy and cap sweeps.
//!
//! The simulated policy prefers few blocks on easy problems and many on hard
//! ones, gets more accurate as it is allowed more blocks (up to a
//! difficulty-dependent saturation point), and emits well-formed block traces
//! whose length grows with the block count. It stands in for a trained model
//! when exercising the decoder and the evaluation pipeline.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{BlockCountDistribution, BlockPolicy, CapSpec, DecodeError, Decoder};
use crate::format::{serialize_trace, LengthUnit, ReasoningTrace};
use crate::metrics::{accuracy_by_split, bad_case_breakdown, compute_length_stats, DifficultySplits};
use crate::record::{ProblemRecord, SampledResponse};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid sim policy config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Piecewise-linear curve through `(x, y)` points, flat beyond the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve(pub Vec<(f64, f64)>);

impl Curve {
    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.0;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        pts[pts.len() - 1].1
    }

    fn validate(&self, name: &str) -> Result<(), SimError> {
        if self.0.is_empty() {
            return Err(SimError::InvalidConfig(format!("{name} has no points")));
        }
        if self.0.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(SimError::InvalidConfig(format!("{name} has non-finite points")));
        }
        if self.0.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(SimError::InvalidConfig(format!(
                "{name} x values must be strictly increasing"
            )));
        }
        Ok(())
    }

    fn is_monotone(&self, increasing: bool) -> bool {
        self.0.windows(2).all(|w| {
            if increasing {
                w[1].1 >= w[0].1
            } else {
                w[1].1 <= w[0].1
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimPolicyConfig {
    /// Largest block count the policy can emit (K).
    pub max_blocks: usize,
    /// Difficulty to preferred block count; the logits peak here.
    pub preferred_blocks: Curve,
    /// Logit of count k is `-(k - preferred)^2 / (2 * spread^2)`.
    pub spread: f64,
    /// Accuracy with no reasoning blocks, by difficulty.
    pub accuracy_floor: Curve,
    /// Accuracy once enough blocks are used, by difficulty.
    pub accuracy_ceiling: Curve,
    /// Block count at which accuracy reaches the ceiling, by difficulty.
    pub saturation_blocks: Curve,
    /// Mean block length in whitespace tokens.
    pub block_length_mean: usize,
    /// Length of the final answer in whitespace tokens.
    pub response_length_base: usize,
    /// Probability that the declared count is off by one from the blocks
    /// actually generated.
    pub mismatch_rate: f64,
    pub seed: u64,
}

impl Default for SimPolicyConfig {
    fn default() -> Self {
        SimPolicyConfig {
            max_blocks: crate::decoder::DEFAULT_MAX_BLOCKS,
            preferred_blocks: Curve(vec![(2.0, 0.0), (4.5, 0.5), (5.0, 3.0), (7.5, 5.0), (9.0, 8.0)]),
            spread: 1.0,
            accuracy_floor: Curve(vec![(2.0, 0.9), (9.0, 0.2)]),
            accuracy_ceiling: Curve(vec![(2.0, 0.97), (9.0, 0.76)]),
            saturation_blocks: Curve(vec![(2.0, 1.0), (9.0, 8.0)]),
            block_length_mean: 60,
            response_length_base: 12,
            mismatch_rate: 0.0,
            seed: 0,
        }
    }
}

impl SimPolicyConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        self.preferred_blocks.validate("preferred_blocks")?;
        self.accuracy_floor.validate("accuracy_floor")?;
        self.accuracy_ceiling.validate("accuracy_ceiling")?;
        self.saturation_blocks.validate("saturation_blocks")?;
        if !(self.spread > 0.0) {
            return bad("spread must be positive");
        }
        let probs = self.accuracy_floor.0.iter().chain(&self.accuracy_ceiling.0);
        if probs.clone().any(|(_, p)| !(0.0..=1.0).contains(p)) {
            return bad("accuracies must lie in [0, 1]");
        }
        if !self.accuracy_floor.is_monotone(false) || !self.accuracy_ceiling.is_monotone(false) {
            return bad("accuracy curves must be non-increasing in difficulty");
        }
        if !self.saturation_blocks.is_monotone(true)
            || self.saturation_blocks.0.iter().any(|(_, s)| *s <= 0.0)
        {
            return bad("saturation_blocks must be positive and non-decreasing");
        }
        // Accuracy must rise from floor to ceiling everywhere; both are
        // piecewise linear, so checking every breakpoint of either suffices.
        let xs = self.accuracy_floor.0.iter().chain(&self.accuracy_ceiling.0);
        if xs
            .map(|(x, _)| *x)
            .any(|x| self.accuracy_floor.eval(x) > self.accuracy_ceiling.eval(x))
        {
            return bad("accuracy_floor must not exceed accuracy_ceiling");
        }
        if !(0.0..=1.0).contains(&self.mismatch_rate) {
            return bad("mismatch_rate must lie in [0, 1]");
        }
        if self.block_length_mean == 0 {
            return bad("block_length_mean must be positive");
        }
        Ok(())
    }

    /// Probability of a correct answer with `k` blocks at `difficulty`.
    pub fn base_accuracy(&self, difficulty: f64, k: usize) -> f64 {
        let floor = self.accuracy_floor.eval(difficulty);
        let ceiling = self.accuracy_ceiling.eval(difficulty);
        let progress = (k as f64 / self.saturation_blocks.eval(difficulty)).min(1.0);
        (floor + (ceiling - floor) * progress).clamp(0.0, 1.0)
    }
}

const VOCAB: [&str; 12] = [
    "let", "x", "then", "so", "we", "check", "the", "sum", "is", "equal", "to", "hence",
];

#[derive(Debug, Clone)]
pub struct SimPolicy {
    config: SimPolicyConfig,
}

pub fn make_sim_policy(config: SimPolicyConfig) -> Result<SimPolicy, SimError> {
    config.validate()?;
    Ok(SimPolicy { config })
}

impl SimPolicy {
    pub fn config(&self) -> &SimPolicyConfig {
        &self.config
    }

    fn words(&self, n: usize, rng: &mut dyn RngCore, out: &mut String) {
        for i in 0..n {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(VOCAB[rng.gen_range(0..VOCAB.len())]);
        }
    }
}

impl BlockPolicy for SimPolicy {
    fn predict_block_logits(&self, problem: &ProblemRecord) -> BlockCountDistribution {
        let centre = self.config.preferred_blocks.eval(problem.difficulty);
        let denom = 2.0 * self.config.spread * self.config.spread;
        BlockCountDistribution::new(
            (0..=self.config.max_blocks)
                .map(|k| -(k as f64 - centre).powi(2) / denom)
                .collect(),
        )
    }

    fn generate_conditioned(
        &self,
        problem: &ProblemRecord,
        k: usize,
        rng: &mut dyn RngCore,
    ) -> SampledResponse {
        let mean = self.config.block_length_mean;
        let blocks: Vec<String> = (0..k)
            .map(|_| {
                let len = rng.gen_range(mean.div_ceil(2)..=mean + mean / 2);
                let mut b = String::from("\n");
                self.words(len, rng, &mut b);
                b.push('\n');
                b
            })
            .collect();

        let declared = if rng.gen_bool(self.config.mismatch_rate) {
            if k == 0 || rng.gen_bool(0.5) {
                k + 1
            } else {
                k - 1
            }
        } else {
            k
        };

        let correct = rng.gen_bool(self.config.base_accuracy(problem.difficulty, k));
        let answer = if correct {
            problem.ground_truth.clone()
        } else {
            format!("not-{}", problem.ground_truth)
        };
        let mut final_response = String::from("\n");
        self.words(self.config.response_length_base.saturating_sub(4), rng, &mut final_response);
        let _ = write!(final_response, " the answer is {answer}");

        let mut trace = ReasoningTrace::new(declared, blocks, final_response);
        let text = serialize_trace(&trace).expect("sim vocabulary contains no reserved tags");
        let length = LengthUnit::WhitespaceTokens.measure(&text);
        trace.raw = Some(text);
        SampledResponse {
            problem_id: problem.id.clone(),
            trace,
            correct,
            length,
            truncated: false,
            logprob_policy: None,
            logprob_ref: None,
        }
    }
}

/// DeepMath-style difficulty levels 2.0, 2.5, ..., 9.0.
pub fn difficulty_grid() -> Vec<f64> {
    (0..=14).map(|i| 2.0 + 0.5 * i as f64).collect()
}

/// `n` problems cycling through the difficulty grid.
pub fn synthetic_problems(n: usize) -> Vec<ProblemRecord> {
    let grid = difficulty_grid();
    (0..n)
        .map(|i| {
            let difficulty = grid[i % grid.len()];
            ProblemRecord {
                id: format!("sim-{i:05}"),
                question: format!("synthetic problem {i} at difficulty {difficulty:.1}"),
                difficulty,
                ground_truth: ((i * 37 + 11) % 1000).to_string(),
            }
        })
        .collect()
}

/// Seed for one problem's random stream, independent of cap and batch order.
pub fn problem_seed(seed: u64, problem_index: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ (problem_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Decodes `n_per` responses for every problem. A policy violation keeps the
/// offending response, which then counts as a bad case.
pub fn decode_problems<P: BlockPolicy + ?Sized>(
    policy: &P,
    problems: &[ProblemRecord],
    decoder: &Decoder,
    n_per: usize,
    seed: u64,
) -> Result<Vec<SampledResponse>, DecodeError> {
    let mut out = Vec::with_capacity(problems.len() * n_per);
    for (i, problem) in problems.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(problem_seed(seed, i));
        for _ in 0..n_per {
            match decoder.decode(policy, problem, &mut rng) {
                Ok(r) => out.push(r),
                Err(DecodeError::PolicyViolation { response, .. }) => out.push(*response),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cap: String,
    pub samples: usize,
    pub mean_length: f64,
    pub std_length: f64,
    pub bad_case_ratio: f64,
    pub accuracy_overall: Option<f64>,
    pub accuracy_easy: Option<f64>,
    pub accuracy_difficult: Option<f64>,
    pub mean_blocks: f64,
    /// Accuracy change against the auto row, in percentage points.
    pub delta_acc: Option<f64>,
    /// Relative mean-length change against the auto row, in percent.
    pub delta_len: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

pub fn run_cap_sweep<P: BlockPolicy + ?Sized>(
    policy: &P,
    problems: &[ProblemRecord],
    caps: &[CapSpec],
    n_per: usize,
    seed: u64,
) -> Result<SweepReport, SimError> {
    if n_per == 0 {
        return Err(SimError::InvalidConfig("n_per must be at least 1".into()));
    }
    let difficulties: HashMap<String, f64> = problems
        .iter()
        .map(|p| (p.id.clone(), p.difficulty))
        .collect();
    let splits = DifficultySplits::default();
    let mut rows = Vec::with_capacity(caps.len());
    for cap in caps {
        let responses = decode_problems(policy, problems, &Decoder::new(*cap), n_per, seed)?;
        let lengths = compute_length_stats(&responses);
        let acc = accuracy_by_split(&responses, &difficulties, &splits)
            .expect("every response comes from a listed problem");
        let blocks: usize = responses.iter().map(|r| r.trace.actual_count()).sum();
        rows.push(SweepRow {
            cap: cap.to_string(),
            samples: responses.len(),
            mean_length: lengths.mean,
            std_length: lengths.std,
            bad_case_ratio: bad_case_breakdown(&responses).ratio,
            accuracy_overall: acc.overall,
            accuracy_easy: acc.easy,
            accuracy_difficult: acc.difficult,
            mean_blocks: blocks as f64 / responses.len().max(1) as f64,
            delta_acc: None,
            delta_len: None,
        });
    }
    if let Some(auto) = rows.iter().find(|r| r.cap == "auto").cloned() {
        for row in rows.iter_mut().filter(|r| r.cap != "auto") {
            row.delta_acc = row
                .accuracy_overall
                .zip(auto.accuracy_overall)
                .map(|(a, b)| 100.0 * (a - b));
            row.delta_len =
                (auto.mean_length > 0.0).then(|| 100.0 * (row.mean_length / auto.mean_length - 1.0));
        }
    }
    Ok(SweepReport { rows })
}

impl SweepReport {
    /// Renders the report with one row per cap.
    pub fn render_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}%", 100.0 * x));
        let delta = |v: Option<f64>| v.map_or_else(|| "--".to_string(), |x| format!("{x:+.1}%"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>9} {:>9} {:>10} {:>8} {:>8} {:>10} {:>8} {:>8}",
            "cap", "len_mean", "len_std", "bad_cases", "acc", "easy", "difficult", "d_acc", "d_len"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:>9.1} {:>9.1} {:>10} {:>8} {:>8} {:>10} {:>8} {:>8}",
                r.cap,
                r.mean_length,
                r.std_length,
                format!("{:.1}%", 100.0 * r.bad_case_ratio),
                pct(r.accuracy_overall),
                pct(r.accuracy_easy),
                pct(r.accuracy_difficult),
                delta(r.delta_acc),
                delta(r.delta_len),
            );
        }
        s
    }
}
