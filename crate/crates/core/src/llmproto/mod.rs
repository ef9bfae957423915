//! Zero-shot LLM comparison: fixed prompt templates, strict reply parsing,
//! an OpenAI-shaped chat-completion client and a cached evaluation runner.

mod client;
mod run;

pub use client::{CallError, ChatBackend};
#[cfg(feature = "http")]
pub use client::HttpChatBackend;
pub use run::{
    load_cache, prompt_sha256, run_llm_eval, CacheEntry, FailureKind, LlmEndpointConfig, LlmOutcome, LlmRun, DEFAULT_PARALLELISM,
};

use crate::error::{Error, Result};
use crate::model::Task;
use crate::taxonomy::{AttributeVector, Emotion};

/// Slot marker inside the templates below.
pub const TRANSCRIPT_SLOT: &str = "{transcript}";

pub const CATEGORICAL_TEMPLATE: &str = "Predict the emotion label of the following sentence from a podcast recording. \
Allowed predicted emotions: ['Anger', 'Contempt', 'Disgust', 'Fear', 'Happiness', 'Neutral', 'Sadness', 'Surprise']\n\
Transcription: {transcript}\n\
Just predict the answer without explanation.\n\
Answer:";

pub const ATTRIBUTE_TEMPLATE: &str = "Predict the emotional attribute label (valence, arousal, dominance) of the \
following sentence from a podcast recording.\n\
Allowed predicted ranges are from 1 to 7.\n\
Transcription:{transcript}\n\
Just predict the answer in the format of [arousal, valence, dominance], e.g., [1.0, 2.3, 4.7], without explanation.\n\
Answer:";

pub fn template(task: Task) -> &'static str {
    match task {
        Task::Categorical => CATEGORICAL_TEMPLATE,
        Task::Attributes => ATTRIBUTE_TEMPLATE,
    }
}

/// Substitutes the transcript verbatim; nothing is escaped or trimmed.
pub fn build_prompt(task: Task, transcript: &str) -> Result<String> {
    if transcript.is_empty() {
        return Err(Error::invalid("transcript", "must be non-empty"));
    }
    Ok(template(task).replacen(TRANSCRIPT_SLOT, transcript, 1))
}

pub fn build_categorical_prompt(transcript: &str) -> Result<String> {
    build_prompt(Task::Categorical, transcript)
}

pub fn build_attribute_prompt(transcript: &str) -> Result<String> {
    build_prompt(Task::Attributes, transcript)
}

fn parse_failure(raw: &str) -> Error {
    Error::ParseFailure { raw: raw.to_string() }
}

/// First alphabetic run of the reply, matched case-insensitively against the
/// eight class names.
pub fn parse_categorical_response(text: &str) -> Result<Emotion> {
    let trimmed = text.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    let word: String = trimmed
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .collect();
    Emotion::ALL
        .into_iter()
        .find(|e| e.name().eq_ignore_ascii_case(&word))
        .ok_or_else(|| parse_failure(text))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedAttributes {
    pub value: AttributeVector,
    /// Some component was outside `[1,7]` and got clamped.
    pub clamped: bool,
}

fn decimal(s: &str) -> Option<f64> {
    let s = s.trim();
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() && frac.is_empty() || !digits(int) || !digits(frac) {
        return None;
    }
    s.parse().ok().filter(|v: &f64| v.is_finite())
}

fn triple(inner: &str) -> Option<[f64; 3]> {
    let parts: Vec<&str> = inner.split(',').collect();
    if parts.len() != 3 {
        return None;
    }
    Some([decimal(parts[0])?, decimal(parts[1])?, decimal(parts[2])?])
}

/// First `[a, v, d]` triple of decimals anywhere in the reply, in
/// arousal, valence, dominance order, clamped to `[1,7]`.
pub fn parse_attribute_response(text: &str) -> Result<ParsedAttributes> {
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else { break };
        if let Some([a, v, d]) = triple(&after[..close]) {
            let (value, clamped) = AttributeVector::unchecked(a, v, d).clamped();
            return Ok(ParsedAttributes { value, clamped });
        }
        rest = after;
    }
    Err(parse_failure(text))
}

/// How a triple is written back into a reply; the inverse of
/// [`parse_attribute_response`] for in-range values.
pub fn format_attribute_answer(v: AttributeVector) -> String {
    let [a, val, d] = v.to_array();
    format!("[{a:?}, {val:?}, {d:?}]")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_have_one_slot() {
        for t in [CATEGORICAL_TEMPLATE, ATTRIBUTE_TEMPLATE] {
            assert_eq!(t.matches(TRANSCRIPT_SLOT).count(), 1);
            assert!(t.ends_with("Answer:"));
        }
    }

    #[test]
    fn prompt_length_is_template_plus_transcript() {
        for task in [Task::Categorical, Task::Attributes] {
            for tr in ["x", "I can't believe it!", "two\nlines", "naïve"] {
                let p = build_prompt(task, tr).unwrap();
                assert_eq!(p.len(), template(task).len() - TRANSCRIPT_SLOT.len() + tr.len());
                assert!(p.contains(tr));
            }
        }
    }

    #[test]
    fn slot_text_inside_transcript_is_not_expanded() {
        let p = build_categorical_prompt("say {transcript}").unwrap();
        assert!(p.contains("Transcription: say {transcript}\n"));
    }

    #[test]
    fn empty_transcript_rejected() {
        assert!(build_categorical_prompt("").is_err());
        assert!(build_attribute_prompt("").is_err());
    }

    #[test]
    fn categorical_replies() {
        assert_eq!(parse_categorical_response("Anger").unwrap(), Emotion::Anger);
        assert_eq!(parse_categorical_response(" happiness.\n").unwrap(), Emotion::Happiness);
        assert_eq!(parse_categorical_response("'SURPRISE'").unwrap(), Emotion::Surprise);
        assert_eq!(parse_categorical_response("Neutral, mostly").unwrap(), Emotion::Neutral);
        for bad in ["I think it's joy", "", "...", "Angry"] {
            match parse_categorical_response(bad) {
                Err(Error::ParseFailure { raw }) => assert_eq!(raw, bad),
                other => panic!("{bad:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn attribute_replies() {
        let p = parse_attribute_response("[1.0, 2.3, 4.7]").unwrap();
        assert_eq!(p.value.to_array(), [1.0, 2.3, 4.7]);
        assert!(!p.clamped);
        let p = parse_attribute_response("[0.5, 3.0, 9.9]").unwrap();
        assert_eq!(p.value.to_array(), [1.0, 3.0, 7.0]);
        assert!(p.clamped);
        let p = parse_attribute_response("Answer: [2, 2, 2] because [5, 5, 5]").unwrap();
        assert_eq!(p.value.to_array(), [2.0, 2.0, 2.0]);
        let p = parse_attribute_response("[arousal, valence, dominance] = [3.5,4,.5]").unwrap();
        assert_eq!(p.value.to_array(), [3.5, 4.0, 1.0]);
        for bad in ["no numbers here", "[1, 2]", "[1, 2, x]", "[1, 2, 3, 4]", "[1e2, 2, 3]", "[1, 2, 3"] {
            assert!(matches!(parse_attribute_response(bad), Err(Error::ParseFailure { .. })), "{bad}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn format_then_parse_is_identity(a in 1.0f64..=7.0, v in 1.0f64..=7.0, d in 1.0f64..=7.0) {
                let x = AttributeVector::unchecked(a, v, d);
                let p = parse_attribute_response(&format_attribute_answer(x)).unwrap();
                prop_assert_eq!(p.value, x);
                prop_assert!(!p.clamped);
            }

            #[test]
            fn prompts_are_pure(tr in "\\PC{1,80}") {
                prop_assert_eq!(build_attribute_prompt(&tr).unwrap(), build_attribute_prompt(&tr).unwrap());
                let p = build_categorical_prompt(&tr).unwrap();
                prop_assert_eq!(p.len(), CATEGORICAL_TEMPLATE.len() - TRANSCRIPT_SLOT.len() + tr.len());
            }
        }
    }
}
