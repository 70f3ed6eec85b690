//! Turning free-text critic replies into structured values, with a bounded
//! number of corrective follow-ups in the same conversation.

use regex::Regex;
use serde_json::Value;
use std::sync::OnceLock;

use super::backend::{ChatBackend, ChatRequest, Message, Slot};
use super::Exchange;
use crate::error::{CoreError, Result};
use crate::language::GripDirective;
use crate::types::{validate_action, Action};

/// Summarization attempts per conversation, including the first.
pub const MAX_ATTEMPTS: usize = 3;

/// Shape the summary must have.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Grip,
    /// A candidate index below `count`.
    Index { count: usize },
    /// A full 7-number action.
    List,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Summary {
    Grip(GripDirective),
    Index(usize),
    Action([i32; 7]),
}

fn object_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{[^{}]*\}").unwrap())
}

fn as_int(v: &Value) -> Option<i64> {
    let f = v.as_f64()?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 1e9).then_some(f as i64)
}

/// Parses one summarization reply. The error string says why it was
/// rejected.
pub fn parse_summary(text: &str, expect: Expect) -> std::result::Result<Summary, String> {
    let objects: Vec<&str> = object_re().find_iter(text).map(|m| m.as_str()).collect();
    let raw = match objects.as_slice() {
        [one] => *one,
        [] => return Err("no JSON object in reply".to_string()),
        many => return Err(format!("{} JSON objects in reply", many.len())),
    };
    let normalized = raw.replace('\'', "\"").replace("None", "null");
    let value: Value = serde_json::from_str(&normalized).map_err(|e| format!("invalid JSON {raw:?}: {e}"))?;
    let map = value.as_object().ok_or("reply is not an object")?;
    let key = match expect {
        Expect::Grip => "grip",
        Expect::Index { .. } | Expect::List => "action",
    };
    if map.len() != 1 {
        return Err(format!("expected the single key {key:?}, found {} keys", map.len()));
    }
    let v = map.get(key).ok_or_else(|| format!("missing key {key:?}"))?;
    match expect {
        Expect::Grip => match v {
            Value::Null => Ok(Summary::Grip(GripDirective::Unchanged)),
            other => match as_int(other) {
                Some(100) => Ok(Summary::Grip(GripDirective::Close)),
                Some(-100) => Ok(Summary::Grip(GripDirective::Open)),
                _ => Err(format!("grip must be null, 100 or -100, got {other}")),
            },
        },
        Expect::Index { count } => {
            let i = as_int(v).ok_or_else(|| format!("action must be a single number, got {v}"))?;
            if i < 0 || i as usize >= count {
                return Err(format!("action index {i} outside 0..{count}"));
            }
            Ok(Summary::Index(i as usize))
        }
        Expect::List => {
            let items = v.as_array().ok_or_else(|| format!("action must be a list, got {v}"))?;
            if items.len() != 7 {
                return Err(format!("action list has {} entries, expected 7", items.len()));
            }
            let mut a = [0i32; 7];
            for (slot, item) in a.iter_mut().zip(items) {
                let f = item.as_f64().filter(|f| f.is_finite()).ok_or_else(|| format!("non-numeric entry {item}"))?;
                *slot = f.round().clamp(-1e6, 1e6) as i32;
            }
            validate_action(&Action::from_array(a)).map_err(|e| format!("action {a:?}: {e}"))?;
            Ok(Summary::Action(a))
        }
    }
}

/// Result of a summarization conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct Summarized {
    pub value: Summary,
    pub attempts: usize,
}

/// Asks for a JSON summary of the last reply in `conversation`, sending the
/// corrective prompt after each malformed answer. Never issues more than
/// [`MAX_ATTEMPTS`] requests.
pub fn summarize(
    backend: &dyn ChatBackend,
    mut conversation: Vec<Message>,
    summarize_prompt: &str,
    corrective_prompt: &str,
    expect: Expect,
    temperature: f64,
    purpose: &str,
    exchanges: &mut Vec<Exchange>,
) -> Result<Summarized> {
    conversation.push(Message::user(summarize_prompt));
    let mut last_problem = String::new();
    for attempt in 1..=MAX_ATTEMPTS {
        let request = ChatRequest { slot: Slot::Summarization, messages: conversation.clone(), temperature };
        let reply = backend.complete(&request)?;
        exchanges.push(Exchange {
            purpose: purpose.to_string(),
            prompt: conversation.last().map(|m| m.content.clone()).unwrap_or_default(),
            reply: reply.clone(),
        });
        match parse_summary(&reply, expect) {
            Ok(value) => return Ok(Summarized { value, attempts: attempt }),
            Err(problem) => {
                log::debug!("{purpose}: malformed summary on attempt {attempt}: {problem}");
                last_problem = problem;
                conversation.push(Message::assistant(reply));
                conversation.push(Message::user(corrective_prompt));
            }
        }
    }
    Err(CoreError::Relabel(format!(
        "{purpose}: no well-formed summary after {MAX_ATTEMPTS} attempts ({last_problem})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_forms() {
        let e = Expect::Index { count: 8 };
        assert_eq!(parse_summary("{'action': 7}", e), Ok(Summary::Index(7)));
        assert_eq!(parse_summary("Sure: {\"action\": 4}", e), Ok(Summary::Index(4)));
        assert_eq!(parse_summary("{'action': 4.0}", e), Ok(Summary::Index(4)));
        assert!(parse_summary("{'action': 8}", e).is_err());
        assert!(parse_summary("{'action': 2} or {'action': 3}", e).is_err());
        assert!(parse_summary("{'action': [1, 2]}", e).is_err());
        assert!(parse_summary("the action is 7", e).is_err());
        assert!(parse_summary("{'action': 1, 'why': 'x'}", e).is_err());
    }

    #[test]
    fn list_forms() {
        assert_eq!(
            parse_summary("{'action': [0, 0, 20, 0, 0, -30, 100]}", Expect::List),
            Ok(Summary::Action([0, 0, 20, 0, 0, -30, 100]))
        );
        assert!(parse_summary("{'action': [0, 0, 20, 0, 0, -30]}", Expect::List).is_err());
        assert!(parse_summary("{'action': [0, 0, 20, 0, 0, -30, 0]}", Expect::List).is_err());
        assert!(parse_summary("{'action': [0, 0, 200, 0, 0, -30, 100]}", Expect::List).is_err());
    }

    #[test]
    fn grip_forms() {
        assert_eq!(parse_summary("{\"grip\": null}", Expect::Grip), Ok(Summary::Grip(GripDirective::Unchanged)));
        assert_eq!(parse_summary("{'grip': None}", Expect::Grip), Ok(Summary::Grip(GripDirective::Unchanged)));
        assert_eq!(parse_summary("{\"grip\": 100}", Expect::Grip), Ok(Summary::Grip(GripDirective::Close)));
        assert_eq!(parse_summary("{\"grip\": -100}", Expect::Grip), Ok(Summary::Grip(GripDirective::Open)));
        assert!(parse_summary("{\"grip\": 0}", Expect::Grip).is_err());
    }
}
