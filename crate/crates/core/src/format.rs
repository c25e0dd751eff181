//! Block-structured chain-of-thought wire format.
//!
//! A response carries its reasoning inside a think section that opens with a
//! declared block count and separates blocks with a continuation marker:
//!
//! ```text
//! <think><thought_segments>2</thought_segments>step A<continue_think>step B</think>42
//! ```
//!
//! The strict parser is byte-exact and is the inverse of [`serialize_trace`].
//! The lenient parser tolerates whitespace around tags, leading zeros in the
//! count and leading whitespace before the think section, which is what real
//! model output tends to look like.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const COUNT_OPEN: &str = "<thought_segments>";
pub const COUNT_CLOSE: &str = "</thought_segments>";
pub const BLOCK_SEPARATOR: &str = "<continue_think>";

/// Every reserved tag string, in the order they appear in a canonical trace.
pub const RESERVED_TAGS: [&str; 5] = [
    THINK_OPEN,
    COUNT_OPEN,
    COUNT_CLOSE,
    BLOCK_SEPARATOR,
    THINK_CLOSE,
];

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormatError {
    #[error("malformed tag at byte {offset}: {detail}")]
    MalformedTag { offset: usize, detail: String },
    #[error("block count {body:?} is not a base-10 non-negative integer")]
    NonIntegerCount { body: String },
    #[error("block {index} contains reserved tag {tag}")]
    ReservedTagInBody { index: usize, tag: String },
    #[error("final response contains reserved tag {tag}")]
    ReservedTagInResponse { tag: String },
    #[error("a single empty block serializes identically to zero blocks")]
    AmbiguousEmptyBlock,
}

impl FormatError {
    fn malformed(offset: usize, detail: impl Into<String>) -> Self {
        FormatError::MalformedTag {
            offset,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// A parsed block-structured response.
///
/// `raw` keeps the source text when the trace came from the parser. It is
/// provenance only and does not take part in equality.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub declared_count: usize,
    pub blocks: Vec<String>,
    pub final_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl PartialEq for ReasoningTrace {
    fn eq(&self, other: &Self) -> bool {
        self.declared_count == other.declared_count
            && self.blocks == other.blocks
            && self.final_response == other.final_response
    }
}

impl Eq for ReasoningTrace {}

impl ReasoningTrace {
    pub fn new(declared_count: usize, blocks: Vec<String>, final_response: impl Into<String>) -> Self {
        ReasoningTrace {
            declared_count,
            blocks,
            final_response: final_response.into(),
            raw: None,
        }
    }

    /// A consistent trace: the declared count equals the number of blocks.
    pub fn consistent(blocks: Vec<String>, final_response: impl Into<String>) -> Self {
        Self::new(blocks.len(), blocks, final_response)
    }

    pub fn no_think(final_response: impl Into<String>) -> Self {
        Self::new(0, Vec::new(), final_response)
    }

    pub fn actual_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_no_think(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn mismatch(&self) -> usize {
        self.declared_count.abs_diff(self.blocks.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub declared: usize,
    pub actual: usize,
    pub mismatch: usize,
    pub is_consistent: bool,
    pub parse_errors: Vec<FormatError>,
}

impl ConsistencyReport {
    /// Report for text that could not be parsed at all.
    pub fn from_parse_error(err: FormatError) -> Self {
        ConsistencyReport {
            declared: 0,
            actual: 0,
            mismatch: 0,
            is_consistent: false,
            parse_errors: vec![err],
        }
    }
}

/// How response length is measured. The default counts whitespace-separated
/// tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    Chars,
    #[default]
    WhitespaceTokens,
}

impl LengthUnit {
    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthUnit::Chars => text.chars().count(),
            LengthUnit::WhitespaceTokens => text.split_whitespace().count(),
        }
    }
}

fn first_reserved_tag(text: &str) -> Option<(usize, &'static str)> {
    RESERVED_TAGS
        .iter()
        .filter_map(|tag| text.find(tag).map(|pos| (pos, *tag)))
        .min_by_key(|(pos, _)| *pos)
}

fn parse_count(body: &str, mode: ParseMode) -> Result<usize, FormatError> {
    let digits = match mode {
        ParseMode::Strict => body,
        ParseMode::Lenient => body.trim(),
    };
    let well_formed = !digits.is_empty()
        && digits.bytes().all(|b| b.is_ascii_digit())
        && (mode == ParseMode::Lenient || digits == "0" || !digits.starts_with('0'));
    if !well_formed {
        return Err(FormatError::NonIntegerCount {
            body: body.to_string(),
        });
    }
    digits.parse().map_err(|_| FormatError::NonIntegerCount {
        body: body.to_string(),
    })
}

/// Parses a complete model output in strict mode.
pub fn parse_trace(text: &str) -> Result<ReasoningTrace, FormatError> {
    parse_trace_with(text, ParseMode::Strict)
}

pub fn parse_trace_with(text: &str, mode: ParseMode) -> Result<ReasoningTrace, FormatError> {
    let mut trace = parse_inner(text, mode)?;
    trace.raw = Some(text.to_string());
    Ok(trace)
}

fn parse_inner(text: &str, mode: ParseMode) -> Result<ReasoningTrace, FormatError> {
    let lenient = mode == ParseMode::Lenient;
    let start = if lenient {
        text.len() - text.trim_start().len()
    } else {
        0
    };

    if !text[start..].starts_with(THINK_OPEN) {
        // Bare answer: a no-think response, provided no tag appears anywhere.
        if let Some((pos, tag)) = first_reserved_tag(text) {
            return Err(FormatError::malformed(
                pos,
                format!("{tag} outside a think section"),
            ));
        }
        return Ok(ReasoningTrace::no_think(text));
    }

    let mut cursor = start + THINK_OPEN.len();
    if lenient {
        cursor += text[cursor..].len() - text[cursor..].trim_start().len();
    }
    if !text[cursor..].starts_with(COUNT_OPEN) {
        return Err(FormatError::malformed(
            cursor,
            "think section must open with a block count tag",
        ));
    }
    cursor += COUNT_OPEN.len();
    let count_len = text[cursor..]
        .find(COUNT_CLOSE)
        .ok_or_else(|| FormatError::malformed(cursor, "unclosed block count tag"))?;
    let count_body = &text[cursor..cursor + count_len];
    if let Some((pos, tag)) = first_reserved_tag(count_body) {
        return Err(FormatError::malformed(
            cursor + pos,
            format!("{tag} nested in block count tag"),
        ));
    }
    let declared_count = parse_count(count_body, mode)?;
    cursor += count_len + COUNT_CLOSE.len();

    let body_len = text[cursor..]
        .find(THINK_CLOSE)
        .ok_or_else(|| FormatError::malformed(cursor, "unclosed think section"))?;
    let body = &text[cursor..cursor + body_len];
    for tag in [THINK_OPEN, COUNT_OPEN, COUNT_CLOSE] {
        if let Some(pos) = body.find(tag) {
            return Err(FormatError::malformed(
                cursor + pos,
                format!("{tag} nested in think section"),
            ));
        }
    }

    let after_close = cursor + body_len + THINK_CLOSE.len();
    let final_response = &text[after_close..];
    if let Some((pos, tag)) = first_reserved_tag(final_response) {
        return Err(FormatError::malformed(
            after_close + pos,
            format!("{tag} after the think section"),
        ));
    }

    let body_is_empty = if lenient {
        body.trim().is_empty()
    } else {
        body.is_empty()
    };
    let blocks = if body_is_empty {
        Vec::new()
    } else {
        body.split(BLOCK_SEPARATOR)
            .map(|b| if lenient { b.trim() } else { b }.to_string())
            .collect()
    };
    let final_response = if lenient {
        final_response.trim_start()
    } else {
        final_response
    };

    Ok(ReasoningTrace::new(declared_count, blocks, final_response))
}

/// Emits the canonical layout. Zero-block traces keep the think section with a
/// `0` count so the budget stays machine-readable.
pub fn serialize_trace(trace: &ReasoningTrace) -> Result<String, FormatError> {
    for (index, block) in trace.blocks.iter().enumerate() {
        if let Some((_, tag)) = first_reserved_tag(block) {
            return Err(FormatError::ReservedTagInBody {
                index,
                tag: tag.to_string(),
            });
        }
    }
    if let Some((_, tag)) = first_reserved_tag(&trace.final_response) {
        return Err(FormatError::ReservedTagInResponse {
            tag: tag.to_string(),
        });
    }
    if trace.blocks.len() == 1 && trace.blocks[0].is_empty() {
        return Err(FormatError::AmbiguousEmptyBlock);
    }

    let body_len: usize = trace.blocks.iter().map(String::len).sum::<usize>()
        + trace.blocks.len().saturating_sub(1) * BLOCK_SEPARATOR.len();
    let mut out = String::with_capacity(64 + body_len + trace.final_response.len());
    out.push_str(THINK_OPEN);
    out.push_str(COUNT_OPEN);
    out.push_str(&trace.declared_count.to_string());
    out.push_str(COUNT_CLOSE);
    for (i, block) in trace.blocks.iter().enumerate() {
        if i > 0 {
            out.push_str(BLOCK_SEPARATOR);
        }
        out.push_str(block);
    }
    out.push_str(THINK_CLOSE);
    out.push_str(&trace.final_response);
    Ok(out)
}

pub fn validate_consistency(trace: &ReasoningTrace) -> ConsistencyReport {
    let mismatch = trace.mismatch();
    ConsistencyReport {
        declared: trace.declared_count,
        actual: trace.actual_count(),
        mismatch,
        is_consistent: mismatch == 0,
        parse_errors: Vec::new(),
    }
}

/// Parses and checks in one step; parse failures become diagnostics.
pub fn check_text(text: &str, mode: ParseMode) -> ConsistencyReport {
    match parse_trace_with(text, mode) {
        Ok(trace) => validate_consistency(&trace),
        Err(err) => ConsistencyReport::from_parse_error(err),
    }
}

pub fn block_lengths<F>(trace: &ReasoningTrace, length_fn: F) -> Vec<usize>
where
    F: Fn(&str) -> usize,
{
    trace.blocks.iter().map(|b| length_fn(b)).collect()
}
