//! Session and trajectory data model, plus ingestion from the line-delimited
//! session format.
//!
//! Sessions arrive pre-tokenized: every message carries raw token ids, never
//! text. Branching is expressed through explicit `parent` indices; a message
//! without one continues the previous message. All types are immutable after
//! construction and safe to share across threads.

use std::collections::HashSet;
use std::io::BufRead;

use serde_json::{json, Map, Value};
use thiserror::Error;

/// Speaker role of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }

    fn from_str(s: &str) -> Option<Role> {
        match s {
            "system" => Some(Role::System),
            "user" => Some(Role::User),
            "assistant" => Some(Role::Assistant),
            "tool" => Some(Role::Tool),
            _ => None,
        }
    }
}

/// Execution outcome of a tool call issued by an assistant message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolOutcome {
    pub name: String,
    pub status: ToolStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolStatus {
    Ok,
    Error,
}

impl ToolStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolStatus::Ok => "ok",
            ToolStatus::Error => "error",
        }
    }
}

/// Context-discontinuity marker on a message.
///
/// A `Compression` message replaces prior context with a summary; a
/// `ModeSwitch` message starts a new interaction mode. Both cut the session
/// into independently trained subtrees downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    None,
    Compression,
    ModeSwitch,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::None => "none",
            Boundary::Compression => "compression",
            Boundary::ModeSwitch => "mode_switch",
        }
    }

    fn from_str(s: &str) -> Option<Boundary> {
        match s {
            "none" => Some(Boundary::None),
            "compression" => Some(Boundary::Compression),
            "mode_switch" => Some(Boundary::ModeSwitch),
            _ => None,
        }
    }
}

/// One message in a session tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    /// Non-empty token ids.
    pub tokens: Vec<u32>,
    /// Present only on assistant messages.
    pub tool_call: Option<ToolOutcome>,
    pub boundary: Boundary,
    /// Explicit parent index; absent means "previous message in the list".
    pub parent: Option<usize>,
}

/// A branching message graph rooted at message 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionTree {
    pub session_id: String,
    pub messages: Vec<Message>,
}

/// One root-to-leaf token sequence with a per-token loss mask, the unit of
/// training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub traj_id: String,
    pub tokens: Vec<u32>,
    /// 0/1 per token; 1 = token participates in the loss.
    pub loss_mask: Vec<u8>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when no token participates in the loss. Permitted, but surfaced
    /// by corpus stats.
    pub fn is_all_masked(&self) -> bool {
        self.loss_mask.iter().all(|&m| m == 0)
    }
}

/// Error from reading the session file format.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: field `{field}`: {reason}")]
    Malformed {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: session `{session_id}`: {reason}")]
    Structural {
        line: usize,
        session_id: String,
        reason: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Index out of range for a session's message list.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("message index {index} out of range for session with {message_count} messages")]
pub struct IndexError {
    pub index: usize,
    pub message_count: usize,
}

impl SessionTree {
    /// Checks all structural invariants: non-empty messages, non-empty token
    /// runs, parents strictly earlier, tool calls only on assistants.
    pub fn validate(&self) -> Result<(), String> {
        if self.messages.is_empty() {
            return Err("session has no messages".into());
        }
        if self.messages[0].parent.is_some() {
            return Err("message 0 must not declare a parent".into());
        }
        for (i, msg) in self.messages.iter().enumerate() {
            if msg.tokens.is_empty() {
                return Err(format!("message {i} has no tokens"));
            }
            if let Some(p) = msg.parent {
                if p >= i {
                    return Err(format!(
                        "message {i} declares parent {p}, which is not strictly earlier"
                    ));
                }
            }
            if msg.tool_call.is_some() && msg.role != Role::Assistant {
                return Err(format!(
                    "message {i} has a tool_call but role `{}`",
                    msg.role.as_str()
                ));
            }
        }
        Ok(())
    }

    /// Parent of message `index` after applying the "previous message"
    /// default. Message 0 is the root and has none.
    pub fn effective_parent(&self, index: usize) -> Option<usize> {
        if index == 0 {
            None
        } else {
            Some(self.messages[index].parent.unwrap_or(index - 1))
        }
    }

    /// Message indices from the root to `leaf`, inclusive.
    pub fn path_to(&self, leaf: usize) -> Result<Vec<usize>, IndexError> {
        if leaf >= self.messages.len() {
            return Err(IndexError {
                index: leaf,
                message_count: self.messages.len(),
            });
        }
        let mut path = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.effective_parent(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Indices of messages that no other message continues from.
    pub fn leaves(&self) -> Vec<usize> {
        let mut has_child = vec![false; self.messages.len()];
        for i in 0..self.messages.len() {
            if let Some(p) = self.effective_parent(i) {
                has_child[p] = true;
            }
        }
        (0..self.messages.len())
            .filter(|&i| !has_child[i])
            .collect()
    }

    /// Checks every token id against a declared vocabulary size.
    pub fn check_vocab(&self, vocab: u32) -> Result<(), String> {
        for (i, msg) in self.messages.iter().enumerate() {
            if let Some(&t) = msg.tokens.iter().find(|&&t| t >= vocab) {
                return Err(format!(
                    "message {i} contains token {t} >= declared vocabulary {vocab}"
                ));
            }
        }
        Ok(())
    }
}

/// Extracts the root-to-leaf token sequence as a trajectory with an all-ones
/// placeholder mask (replaced by the loss-masking pass downstream).
pub fn linearize(session: &SessionTree, leaf: usize) -> Result<Trajectory, IndexError> {
    let path = session.path_to(leaf)?;
    let tokens: Vec<u32> = path
        .iter()
        .flat_map(|&i| session.messages[i].tokens.iter().copied())
        .collect();
    let loss_mask = vec![1u8; tokens.len()];
    Ok(Trajectory {
        traj_id: format!("{}:{}", session.session_id, leaf),
        tokens,
        loss_mask,
    })
}

fn malformed(line: usize, field: &str, reason: impl Into<String>) -> ParseError {
    ParseError::Malformed {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn expect_object<'v>(
    value: &'v Value,
    line: usize,
    field: &str,
) -> Result<&'v Map<String, Value>, ParseError> {
    value
        .as_object()
        .ok_or_else(|| malformed(line, field, "expected an object"))
}

fn reject_unknown(
    obj: &Map<String, Value>,
    allowed: &[&str],
    line: usize,
    context: &str,
) -> Result<(), ParseError> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(malformed(
                line,
                &format!("{context}{key}"),
                "unknown field (strict mode; pass lenient to ignore)",
            ));
        }
    }
    Ok(())
}

fn parse_message(
    value: &Value,
    line: usize,
    msg_index: usize,
    strict: bool,
) -> Result<Message, ParseError> {
    let ctx = format!("messages[{msg_index}].");
    let obj = expect_object(value, line, &format!("messages[{msg_index}]"))?;
    if strict {
        reject_unknown(
            obj,
            &["role", "tokens", "tool_call", "boundary", "parent"],
            line,
            &ctx,
        )?;
    }

    let role_str = obj
        .get("role")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(line, &format!("{ctx}role"), "missing or not a string"))?;
    let role = Role::from_str(role_str).ok_or_else(|| {
        malformed(
            line,
            &format!("{ctx}role"),
            format!("unrecognized role `{role_str}`"),
        )
    })?;

    let tokens_val = obj
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(line, &format!("{ctx}tokens"), "missing or not an array"))?;
    let mut tokens = Vec::with_capacity(tokens_val.len());
    for (k, t) in tokens_val.iter().enumerate() {
        let id = t.as_u64().ok_or_else(|| {
            malformed(
                line,
                &format!("{ctx}tokens[{k}]"),
                "token ids must be non-negative integers",
            )
        })?;
        let id = u32::try_from(id)
            .map_err(|_| malformed(line, &format!("{ctx}tokens[{k}]"), "token id exceeds u32"))?;
        tokens.push(id);
    }

    let tool_call = match obj.get("tool_call") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let call = expect_object(v, line, &format!("{ctx}tool_call"))?;
            if strict {
                reject_unknown(call, &["name", "status"], line, &format!("{ctx}tool_call."))?;
            }
            let name = call
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    malformed(
                        line,
                        &format!("{ctx}tool_call.name"),
                        "missing or not a string",
                    )
                })?
                .to_string();
            if name.is_empty() {
                return Err(malformed(
                    line,
                    &format!("{ctx}tool_call.name"),
                    "empty name",
                ));
            }
            let status = match call.get("status").and_then(Value::as_str) {
                Some("ok") => ToolStatus::Ok,
                Some("error") => ToolStatus::Error,
                Some(other) => {
                    return Err(malformed(
                        line,
                        &format!("{ctx}tool_call.status"),
                        format!("unrecognized status `{other}`"),
                    ))
                }
                None => {
                    return Err(malformed(
                        line,
                        &format!("{ctx}tool_call.status"),
                        "missing or not a string",
                    ))
                }
            };
            Some(ToolOutcome { name, status })
        }
    };

    let boundary = match obj.get("boundary") {
        None | Some(Value::Null) => Boundary::None,
        Some(Value::String(s)) => Boundary::from_str(s).ok_or_else(|| {
            malformed(
                line,
                &format!("{ctx}boundary"),
                format!("unrecognized boundary `{s}`"),
            )
        })?,
        Some(_) => {
            return Err(malformed(
                line,
                &format!("{ctx}boundary"),
                "expected a string",
            ))
        }
    };

    let parent = match obj.get("parent") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let p = v.as_u64().ok_or_else(|| {
                malformed(
                    line,
                    &format!("{ctx}parent"),
                    "expected a non-negative integer",
                )
            })?;
            Some(p as usize)
        }
    };

    Ok(Message {
        role,
        tokens,
        tool_call,
        boundary,
        parent,
    })
}

fn parse_session_line(text: &str, line: usize, strict: bool) -> Result<SessionTree, ParseError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| malformed(line, "<record>", format!("invalid JSON: {e}")))?;
    let obj = expect_object(&value, line, "<record>")?;
    if strict {
        reject_unknown(obj, &["session_id", "messages"], line, "")?;
    }

    let session_id = obj
        .get("session_id")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(line, "session_id", "missing or not a string"))?
        .to_string();
    let messages_val = obj
        .get("messages")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(line, "messages", "missing or not an array"))?;

    let mut messages = Vec::with_capacity(messages_val.len());
    for (i, m) in messages_val.iter().enumerate() {
        messages.push(parse_message(m, line, i, strict)?);
    }

    let session = SessionTree {
        session_id,
        messages,
    };
    session
        .validate()
        .map_err(|reason| ParseError::Structural {
            line,
            session_id: session.session_id.clone(),
            reason,
        })?;
    Ok(session)
}

/// Reads line-delimited session records, one JSON object per line. Blank
/// lines are skipped. With `strict`, unknown fields are rejected; structural
/// invariants are enforced either way. Input order is preserved.
pub fn parse_sessions(input: impl BufRead, strict: bool) -> Result<Vec<SessionTree>, ParseError> {
    let mut sessions = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let session = parse_session_line(&text, line_no, strict)?;
        if !seen_ids.insert(session.session_id.clone()) {
            return Err(ParseError::Structural {
                line: line_no,
                session_id: session.session_id.clone(),
                reason: "duplicate session_id".into(),
            });
        }
        sessions.push(session);
    }
    Ok(sessions)
}

/// Serializes one session to its canonical single-line JSON form. Optional
/// fields are omitted when absent so that parse ∘ serialize is the identity.
pub fn session_to_json(session: &SessionTree) -> String {
    let messages: Vec<Value> = session
        .messages
        .iter()
        .map(|m| {
            let mut obj = Map::new();
            obj.insert("role".into(), json!(m.role.as_str()));
            obj.insert("tokens".into(), json!(m.tokens));
            if let Some(call) = &m.tool_call {
                obj.insert(
                    "tool_call".into(),
                    json!({"name": call.name, "status": call.status.as_str()}),
                );
            }
            if m.boundary != Boundary::None {
                obj.insert("boundary".into(), json!(m.boundary.as_str()));
            }
            if let Some(p) = m.parent {
                obj.insert("parent".into(), json!(p));
            }
            Value::Object(obj)
        })
        .collect();
    let record = json!({
        "session_id": session.session_id,
        "messages": messages,
    });
    record.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse_one(text: &str) -> Result<Vec<SessionTree>, ParseError> {
        parse_sessions(Cursor::new(text), true)
    }

    #[test]
    fn linear_two_message_session_parses() {
        let line = r#"{"session_id":"s0","messages":[
            {"role":"user","tokens":[1,2]},{"role":"assistant","tokens":[3]}]}"#
            .replace('\n', "");
        let sessions = parse_one(&line).unwrap();
        assert_eq!(sessions.len(), 1);
        let s = &sessions[0];
        assert_eq!(s.messages.len(), 2);
        assert_eq!(s.effective_parent(1), Some(0));
        assert_eq!(s.leaves(), vec![1]);
    }

    #[test]
    fn self_parent_is_structural_error() {
        let line = r#"{"session_id":"s0","messages":[{"role":"user","tokens":[1]},{"role":"user","tokens":[2],"parent":1}]}"#;
        match parse_one(line) {
            Err(ParseError::Structural { reason, .. }) => {
                assert!(reason.contains("strictly earlier"), "{reason}");
            }
            other => panic!("expected structural error, got {other:?}"),
        }
    }

    #[test]
    fn file_order_preserved() {
        let text = r#"{"session_id":"a","messages":[{"role":"user","tokens":[1]}]}
{"session_id":"b","messages":[{"role":"user","tokens":[2]}]}
{"session_id":"c","messages":[{"role":"user","tokens":[3]}]}"#;
        let sessions = parse_one(text).unwrap();
        let ids: Vec<_> = sessions.iter().map(|s| s.session_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn unknown_field_rejected_in_strict_mode_only() {
        let line = r#"{"session_id":"s0","extra":1,"messages":[{"role":"user","tokens":[1]}]}"#;
        match parse_one(line) {
            Err(ParseError::Malformed { field, line, .. }) => {
                assert_eq!(field, "extra");
                assert_eq!(line, 1);
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
        assert!(parse_sessions(Cursor::new(line), false).is_ok());
    }

    #[test]
    fn tool_call_on_non_assistant_rejected() {
        let line = r#"{"session_id":"s0","messages":[{"role":"user","tokens":[1],"tool_call":{"name":"sh","status":"ok"}}]}"#;
        assert!(matches!(
            parse_one(line),
            Err(ParseError::Structural { .. })
        ));
    }

    #[test]
    fn empty_tokens_rejected() {
        let line = r#"{"session_id":"s0","messages":[{"role":"user","tokens":[]}]}"#;
        assert!(matches!(
            parse_one(line),
            Err(ParseError::Structural { .. })
        ));
    }

    #[test]
    fn malformed_error_names_line_and_field() {
        let text = r#"{"session_id":"a","messages":[{"role":"user","tokens":[1]}]}
{"session_id":"b","messages":[{"role":"user","tokens":["x"]}]}"#;
        match parse_one(text) {
            Err(ParseError::Malformed { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "messages[0].tokens[0]");
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn linearize_concatenates_along_path() {
        let line = r#"{"session_id":"s0","messages":[{"role":"user","tokens":[1,2,3]},{"role":"assistant","tokens":[4,5]}]}"#;
        let session = &parse_one(line).unwrap()[0];
        let traj = linearize(session, 1).unwrap();
        assert_eq!(traj.tokens, vec![1, 2, 3, 4, 5]);
        assert_eq!(traj.loss_mask, vec![1; 5]);
    }

    #[test]
    fn linearize_branching_shares_prefix() {
        let line = r#"{"session_id":"s0","messages":[
            {"role":"user","tokens":[1,2]},
            {"role":"assistant","tokens":[3]},
            {"role":"assistant","tokens":[4],"parent":0}]}"#
            .replace('\n', "");
        let session = &parse_one(&line).unwrap()[0];
        let a = linearize(session, 1).unwrap();
        let b = linearize(session, 2).unwrap();
        assert_eq!(a.tokens, vec![1, 2, 3]);
        assert_eq!(b.tokens, vec![1, 2, 4]);
        assert_eq!(&a.tokens[..2], &b.tokens[..2]);
    }

    #[test]
    fn linearize_leaf_zero_is_root_tokens() {
        let line = r#"{"session_id":"s0","messages":[{"role":"user","tokens":[9,8]},{"role":"assistant","tokens":[7]}]}"#;
        let session = &parse_one(line).unwrap()[0];
        let traj = linearize(session, 0).unwrap();
        assert_eq!(traj.tokens, vec![9, 8]);
    }

    #[test]
    fn linearize_invalid_leaf_is_range_error() {
        let line = r#"{"session_id":"s0","messages":[{"role":"user","tokens":[1]}]}"#;
        let session = &parse_one(line).unwrap()[0];
        assert_eq!(
            linearize(session, 5),
            Err(IndexError {
                index: 5,
                message_count: 1
            })
        );
    }

    #[test]
    fn serialize_round_trips() {
        let line = r#"{"session_id":"s0","messages":[
            {"role":"user","tokens":[1,2]},
            {"role":"assistant","tokens":[3],"tool_call":{"name":"grep","status":"error"}},
            {"role":"tool","tokens":[4]},
            {"role":"assistant","tokens":[5],"boundary":"compression","parent":1}]}"#
            .replace('\n', "");
        let session = &parse_one(&line).unwrap()[0];
        let serialized = session_to_json(session);
        let reparsed = &parse_one(&serialized).unwrap()[0];
        assert_eq!(session, reparsed);
    }

    #[test]
    fn vocab_check_flags_oversized_tokens() {
        let line = r#"{"session_id":"s0","messages":[{"role":"user","tokens":[1,9]}]}"#;
        let session = &parse_one(line).unwrap()[0];
        assert!(session.check_vocab(10).is_ok());
        assert!(session.check_vocab(9).is_err());
    }
}
