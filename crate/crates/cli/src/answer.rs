//! Structured language-model answers.
//!
//! The answer file is line oriented:
//!
//! ```text
//! subject: the girl
//! action: dance
//! ```
//!
//! Keys are case-insensitive, values are trimmed, other lines are ignored.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerRecord {
    pub subject: String,
    pub action: String,
    #[serde(skip)]
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error(
        "answer is missing a non-empty `{0}:` line; supply the structured form \
         `subject: <who>` and `action: <what they do>` on separate lines"
    )]
    MissingField(&'static str),
    #[error("answer line {line}: `{field}:` appears more than once")]
    Duplicate { line: usize, field: &'static str },
}

pub fn parse_answer(text: &str) -> Result<AnswerRecord, AnswerError> {
    let mut subject = None;
    let mut action = None;
    for (n, line) in text.lines().enumerate() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let (slot, field) = match key.trim().to_ascii_lowercase().as_str() {
            "subject" => (&mut subject, "subject"),
            "action" => (&mut action, "action"),
            _ => continue,
        };
        if slot.is_some() {
            return Err(AnswerError::Duplicate { line: n + 1, field });
        }
        *slot = Some(value.trim().to_string());
    }
    let subject = subject
        .filter(|s| !s.is_empty())
        .ok_or(AnswerError::MissingField("subject"))?;
    let action = action
        .filter(|s| !s.is_empty())
        .ok_or(AnswerError::MissingField("action"))?;
    Ok(AnswerRecord {
        subject,
        action,
        raw: text.to_string(),
    })
}
