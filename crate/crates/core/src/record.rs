//! Corpus records shared by every stage.

use serde::{Deserialize, Serialize};

use crate::format::{serialize_trace, LengthUnit, ReasoningTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    #[serde(default)]
    pub question: String,
    pub difficulty: f64,
    #[serde(default)]
    pub ground_truth: String,
}

/// One sampled response to a problem, already parsed.
///
/// `length` is the full-response length (think section plus answer) in the
/// configured [`LengthUnit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub problem_id: String,
    pub trace: ReasoningTrace,
    pub correct: bool,
    pub length: usize,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_policy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob_ref: Option<f64>,
}

impl SampledResponse {
    /// Builds a response whose length is measured from the trace's text.
    pub fn from_trace(
        problem_id: impl Into<String>,
        trace: ReasoningTrace,
        correct: bool,
        unit: LengthUnit,
    ) -> Self {
        let length = unit.measure(&trace_text(&trace));
        SampledResponse {
            problem_id: problem_id.into(),
            trace,
            correct,
            length,
            truncated: false,
            logprob_policy: None,
            logprob_ref: None,
        }
    }

    pub fn with_logprobs(mut self, policy: f64, reference: f64) -> Self {
        self.logprob_policy = Some(policy);
        self.logprob_ref = Some(reference);
        self
    }

    /// The response text: the raw source if parsed, else the canonical form.
    pub fn text(&self) -> String {
        trace_text(&self.trace)
    }
}

fn trace_text(trace: &ReasoningTrace) -> String {
    match &trace.raw {
        Some(raw) => raw.clone(),
        // Non-serializable traces only arise from hand-built fixtures; fall
        // back to the visible pieces so length stays defined.
        None => serialize_trace(trace).unwrap_or_else(|_| {
            let mut s = trace.blocks.join(" ");
            s.push(' ');
            s.push_str(&trace.final_response);
            s
        }),
    }
}
