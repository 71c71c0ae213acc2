//! On-disk record formats: pack output lines and advantage group records.
//!
//! Pack lines are emitted by hand so float weights print with 17 significant
//! digits (`{:.16e}`), enough to reproduce the exact f64 bit pattern on
//! re-parse and to make repeated runs byte-identical. Reading goes through
//! serde; every writer here round-trips through its reader.

use serde::Deserialize;
use serde_json::{Map, Value};

use triepack::encoder::EncodedPack;

/// 17-significant-digit decimal form of an f64; parses back bit-exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_usize_array(values: &[usize]) -> String {
    let items: Vec<String> = values.iter().map(usize::to_string).collect();
    format!("[{}]", items.join(","))
}

/// First line of a pack file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PackHeader {
    pub budget: usize,
    pub normalization: String,
    pub n_trajectories: usize,
    pub n_packs: usize,
    pub total_cost: usize,
    pub unpacked_tokens: usize,
    pub unique_tokens: usize,
}

impl PackHeader {
    pub fn to_line(&self) -> String {
        format!(
            "{{\"budget\":{},\"normalization\":\"{}\",\"n_trajectories\":{},\"n_packs\":{},\"total_cost\":{},\"unpacked_tokens\":{},\"unique_tokens\":{}}}",
            self.budget,
            self.normalization,
            self.n_trajectories,
            self.n_packs,
            self.total_cost,
            self.unpacked_tokens,
            self.unique_tokens
        )
    }
}

/// One pack: membership, cost, flattened arrays, and weighted targets.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PackRecord {
    pub pack_id: usize,
    pub trajectories: Vec<String>,
    pub cost: usize,
    pub tokens: Vec<u32>,
    pub parent: Vec<i64>,
    pub depth: Vec<usize>,
    pub segment: Vec<usize>,
    /// (context_pos, target_token, weight)
    pub targets: Vec<(usize, u32, f64)>,
}

impl PackRecord {
    pub fn new(pack_id: usize, trajectories: Vec<String>, cost: usize, pack: &EncodedPack) -> Self {
        PackRecord {
            pack_id,
            trajectories,
            cost,
            tokens: pack.tokens.clone(),
            parent: pack.parent.clone(),
            depth: pack.depth.clone(),
            segment: pack.segment.clone(),
            targets: pack
                .targets
                .iter()
                .map(|t| (t.context_pos, t.target_token, t.weight))
                .collect(),
        }
    }

    pub fn to_line(&self) -> String {
        let trajectories = serde_json::to_string(&self.trajectories).expect("string array");
        let tokens = serde_json::to_string(&self.tokens).expect("int array");
        let parent = serde_json::to_string(&self.parent).expect("int array");
        let targets: Vec<String> = self
            .targets
            .iter()
            .map(|(c, t, w)| format!("[{c},{t},{}]", fmt_f64(*w)))
            .collect();
        format!(
            "{{\"pack_id\":{},\"trajectories\":{},\"cost\":{},\"tokens\":{},\"parent\":{},\"depth\":{},\"segment\":{},\"targets\":[{}]}}",
            self.pack_id,
            trajectories,
            self.cost,
            tokens,
            parent,
            fmt_usize_array(&self.depth),
            fmt_usize_array(&self.segment),
            targets.join(",")
        )
    }
}

/// Input record for the advantage command.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRecord {
    pub group_id: String,
    pub rewards: Vec<f64>,
    pub entropies: Vec<f64>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub candidate: Option<Vec<u32>>,
    pub references: Option<Vec<Vec<u32>>>,
}

fn field_err(line: usize, field: &str, reason: &str) -> String {
    format!("line {line}: field `{field}`: {reason}")
}

fn f64_array(value: &Value, line: usize, field: &str) -> Result<Vec<f64>, String> {
    let arr = value
        .as_array()
        .ok_or_else(|| field_err(line, field, "expected an array of numbers"))?;
    arr.iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| field_err(line, field, "expected a number"))
        })
        .collect()
}

fn token_array(value: &Value, line: usize, field: &str) -> Result<Vec<u32>, String> {
    let arr = value
        .as_array()
        .ok_or_else(|| field_err(line, field, "expected an array of token ids"))?;
    arr.iter()
        .map(|v| {
            v.as_u64()
                .and_then(|t| u32::try_from(t).ok())
                .ok_or_else(|| field_err(line, field, "token ids must be non-negative integers"))
        })
        .collect()
}

impl GroupRecord {
    pub fn parse(text: &str, line: usize, strict: bool) -> Result<GroupRecord, String> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| field_err(line, "<record>", &format!("invalid JSON: {e}")))?;
        let obj: &Map<String, Value> = value
            .as_object()
            .ok_or_else(|| field_err(line, "<record>", "expected an object"))?;
        const ALLOWED: [&str; 7] = [
            "group_id",
            "rewards",
            "entropies",
            "lambda",
            "mu",
            "candidate",
            "references",
        ];
        if strict {
            for key in obj.keys() {
                if !ALLOWED.contains(&key.as_str()) {
                    return Err(field_err(line, key, "unknown field"));
                }
            }
        }
        let group_id = obj
            .get("group_id")
            .and_then(Value::as_str)
            .ok_or_else(|| field_err(line, "group_id", "missing or not a string"))?
            .to_string();
        let rewards = f64_array(
            obj.get("rewards")
                .ok_or_else(|| field_err(line, "rewards", "missing"))?,
            line,
            "rewards",
        )?;
        let entropies = f64_array(
            obj.get("entropies")
                .ok_or_else(|| field_err(line, "entropies", "missing"))?,
            line,
            "entropies",
        )?;
        let scalar = |name: &str| -> Result<Option<f64>, String> {
            match obj.get(name) {
                None | Some(Value::Null) => Ok(None),
                Some(v) => v
                    .as_f64()
                    .map(Some)
                    .ok_or_else(|| field_err(line, name, "expected a number")),
            }
        };
        let candidate = match obj.get("candidate") {
            None | Some(Value::Null) => None,
            Some(v) => Some(token_array(v, line, "candidate")?),
        };
        let references = match obj.get("references") {
            None | Some(Value::Null) => None,
            Some(v) => {
                let arr = v
                    .as_array()
                    .ok_or_else(|| field_err(line, "references", "expected an array of arrays"))?;
                Some(
                    arr.iter()
                        .map(|r| token_array(r, line, "references"))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
        };
        Ok(GroupRecord {
            group_id,
            rewards,
            entropies,
            lambda: scalar("lambda")?,
            mu: scalar("mu")?,
            candidate,
            references,
        })
    }
}
