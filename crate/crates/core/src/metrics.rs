//! Evaluation metrics: length statistics over correct answers, split
//! accuracy, bad-case ratio and block-count histograms.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{FormatError, ReasoningTrace};
use crate::record::SampledResponse;
use crate::rl::pairwise_sum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no difficulty known for problem {0:?}")]
    MissingDifficulty(String),
}

/// Anything that can be scored: a parsed response, or a raw response whose
/// parse may have failed.
pub trait Outcome {
    fn problem_id(&self) -> &str;
    fn is_correct(&self) -> bool;
    fn length(&self) -> usize;
    fn is_truncated(&self) -> bool;
    fn trace(&self) -> Result<&ReasoningTrace, &FormatError>;
}

impl Outcome for SampledResponse {
    fn problem_id(&self) -> &str {
        &self.problem_id
    }
    fn is_correct(&self) -> bool {
        self.correct
    }
    fn length(&self) -> usize {
        self.length
    }
    fn is_truncated(&self) -> bool {
        self.truncated
    }
    fn trace(&self) -> Result<&ReasoningTrace, &FormatError> {
        Ok(&self.trace)
    }
}

/// A scored response from a corpus file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseOutcome {
    pub problem_id: String,
    pub correct: bool,
    pub length: usize,
    pub truncated: bool,
    pub trace: Result<ReasoningTrace, FormatError>,
}

impl Outcome for ResponseOutcome {
    fn problem_id(&self) -> &str {
        &self.problem_id
    }
    fn is_correct(&self) -> bool {
        self.correct
    }
    fn length(&self) -> usize {
        self.length
    }
    fn is_truncated(&self) -> bool {
        self.truncated
    }
    fn trace(&self) -> Result<&ReasoningTrace, &FormatError> {
        self.trace.as_ref()
    }
}

impl From<SampledResponse> for ResponseOutcome {
    fn from(r: SampledResponse) -> Self {
        ResponseOutcome {
            problem_id: r.problem_id,
            correct: r.correct,
            length: r.length,
            truncated: r.truncated,
            trace: Ok(r.trace),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub correct_count: usize,
    /// Set when there were no correct responses and both figures are 0.
    pub no_correct: bool,
}

/// Mean and population std of lengths over correct responses only.
pub fn compute_length_stats<O: Outcome>(responses: &[O]) -> LengthStats {
    let lengths: Vec<f64> = responses
        .iter()
        .filter(|r| r.is_correct())
        .map(|r| r.length() as f64)
        .collect();
    if lengths.is_empty() {
        return LengthStats {
            mean: 0.0,
            std: 0.0,
            correct_count: 0,
            no_correct: true,
        };
    }
    let n = lengths.len() as f64;
    let mean = pairwise_sum(&lengths) / n;
    let sq: Vec<f64> = lengths.iter().map(|l| (l - mean) * (l - mean)).collect();
    LengthStats {
        mean,
        std: (pairwise_sum(&sq) / n).sqrt(),
        correct_count: lengths.len(),
        no_correct: false,
    }
}

/// Inclusive difficulty intervals for the easy and difficult splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultySplits {
    pub easy: (f64, f64),
    pub difficult: (f64, f64),
}

impl Default for DifficultySplits {
    fn default() -> Self {
        DifficultySplits {
            easy: (2.0, 4.5),
            difficult: (8.0, 9.0),
        }
    }
}

/// Correct fractions; `None` for an empty bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub overall: Option<f64>,
    pub easy: Option<f64>,
    pub difficult: Option<f64>,
    pub easy_count: usize,
    pub difficult_count: usize,
}

#[derive(Default)]
struct Tally {
    n: usize,
    correct: usize,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
    }
    fn ratio(&self) -> Option<f64> {
        (self.n > 0).then(|| self.correct as f64 / self.n as f64)
    }
}

pub fn accuracy_by_split<O: Outcome>(
    responses: &[O],
    difficulties: &HashMap<String, f64>,
    splits: &DifficultySplits,
) -> Result<SplitAccuracy, MetricsError> {
    let (mut all, mut easy, mut hard) = (Tally::default(), Tally::default(), Tally::default());
    for r in responses {
        let d = *difficulties
            .get(r.problem_id())
            .ok_or_else(|| MetricsError::MissingDifficulty(r.problem_id().to_string()))?;
        all.add(r.is_correct());
        if (splits.easy.0..=splits.easy.1).contains(&d) {
            easy.add(r.is_correct());
        }
        if (splits.difficult.0..=splits.difficult.1).contains(&d) {
            hard.add(r.is_correct());
        }
    }
    Ok(SplitAccuracy {
        overall: all.ratio(),
        easy: easy.ratio(),
        difficult: hard.ratio(),
        easy_count: easy.n,
        difficult_count: hard.n,
    })
}

/// Bad-case counts, one per clause, plus their union.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BadCaseBreakdown {
    pub total: usize,
    pub parse_failures: usize,
    pub mismatches: usize,
    pub truncated: usize,
    pub bad_cases: usize,
    pub ratio: f64,
}

pub fn is_bad_case<O: Outcome>(r: &O) -> bool {
    match r.trace() {
        Err(_) => true,
        Ok(t) => t.mismatch() != 0 || r.is_truncated(),
    }
}

pub fn bad_case_breakdown<O: Outcome>(responses: &[O]) -> BadCaseBreakdown {
    let mut b = BadCaseBreakdown {
        total: responses.len(),
        ..Default::default()
    };
    for r in responses {
        match r.trace() {
            Err(_) => b.parse_failures += 1,
            Ok(t) if t.mismatch() != 0 => b.mismatches += 1,
            Ok(_) => {}
        }
        if r.is_truncated() {
            b.truncated += 1;
        }
        if is_bad_case(r) {
            b.bad_cases += 1;
        }
    }
    if b.total > 0 {
        b.ratio = b.bad_cases as f64 / b.total as f64;
    }
    b
}

pub fn bad_case_ratio<O: Outcome>(responses: &[O]) -> f64 {
    bad_case_breakdown(responses).ratio
}

/// Counts by actual block count. Unparseable responses have no count and are
/// left out.
pub fn block_histogram<O: Outcome>(responses: &[O]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for r in responses {
        if let Ok(t) = r.trace() {
            *h.entry(t.actual_count()).or_insert(0) += 1;
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub responses: usize,
    pub mean_length_correct: f64,
    pub std_length_correct: f64,
    pub std_convention: String,
    pub no_correct_responses: bool,
    pub bad_case_ratio: f64,
    pub bad_cases: BadCaseBreakdown,
    pub accuracy_overall: Option<f64>,
    pub accuracy_easy: Option<f64>,
    pub accuracy_difficult: Option<f64>,
    /// Accuracy with bad cases removed from both numerator and denominator.
    pub accuracy_overall_excluding_bad: Option<f64>,
    pub accuracy_easy_excluding_bad: Option<f64>,
    pub accuracy_difficult_excluding_bad: Option<f64>,
    pub block_histogram: BTreeMap<usize, usize>,
    /// Responses missing from the histogram because they failed to parse.
    pub unparsed: usize,
}

pub fn evaluate<O: Outcome + Clone>(
    responses: &[O],
    difficulties: &HashMap<String, f64>,
    splits: &DifficultySplits,
) -> Result<EvalReport, MetricsError> {
    let lengths = compute_length_stats(responses);
    let acc = accuracy_by_split(responses, difficulties, splits)?;
    let clean: Vec<O> = responses.iter().filter(|r| !is_bad_case(*r)).cloned().collect();
    let acc_clean = accuracy_by_split(&clean, difficulties, splits)?;
    let bad = bad_case_breakdown(responses);
    Ok(EvalReport {
        responses: responses.len(),
        mean_length_correct: lengths.mean,
        std_length_correct: lengths.std,
        std_convention: "population".to_string(),
        no_correct_responses: lengths.no_correct,
        bad_case_ratio: bad.ratio,
        bad_cases: bad,
        accuracy_overall: acc.overall,
        accuracy_easy: acc.easy,
        accuracy_difficult: acc.difficult,
        accuracy_overall_excluding_bad: acc_clean.overall,
        accuracy_easy_excluding_bad: acc_clean.easy,
        accuracy_difficult_excluding_bad: acc_clean.difficult,
        block_histogram: block_histogram(responses),
        unparsed: bad.parse_failures,
    })
}
