//! Final-answer text format: an `Exact Answer:` line and an optional
//! `Confidence: NN%` line.

use thiserror::Error;

/// Confidence assumed when the agent omits the `Confidence:` line.
pub const DEFAULT_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum AnswerError {
    #[error("no \"Exact Answer:\" line; the trajectory committed no answer")]
    MissingAnswer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub answer: String,
    pub confidence: f64,
}

fn strip_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let trimmed = line.trim_start().trim_start_matches(['*', '#', '-', ' ']);
    let head = trimmed.get(..key.len())?;
    if head.eq_ignore_ascii_case(key) {
        Some(trimmed[key.len()..].trim_start_matches('*').trim())
    } else {
        None
    }
}

fn parse_confidence(raw: &str) -> Option<f64> {
    let digits: String = raw
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    let value: f64 = digits.parse().ok()?;
    Some((value / 100.0).clamp(0.0, 1.0))
}

/// Extracts the committed answer and confidence from an agent's terminal message.
///
/// The last `Exact Answer:` / `Confidence:` lines win when a message repeats them.
pub fn parse_final_answer(agent_output: &str) -> Result<ParsedAnswer, AnswerError> {
    let mut answer = None;
    let mut confidence = None;
    for line in agent_output.lines() {
        if let Some(rest) = strip_key(line, "Exact Answer:") {
            answer = Some(rest.trim_end_matches('*').trim().to_string());
        } else if let Some(rest) = strip_key(line, "Confidence:") {
            if let Some(c) = parse_confidence(rest) {
                confidence = Some(c);
            }
        }
    }
    let answer = answer.filter(|a| !a.is_empty()).ok_or(AnswerError::MissingAnswer)?;
    Ok(ParsedAnswer {
        answer,
        confidence: confidence.unwrap_or(DEFAULT_CONFIDENCE),
    })
}

/// Inverse of [`parse_final_answer`] for confidences on an integer-percent grid.
pub fn format_final_answer(answer: &str, confidence: f64) -> String {
    let pct = (confidence.clamp(0.0, 1.0) * 100.0).round() as u32;
    format!("Exact Answer: {answer}\nConfidence: {pct}%")
}
