//! Trajectory data model and the line-delimited rollout log format.
//!
//! Only agent turns are stored. User messages and tool responses are reduced
//! to one `errored` flag per tool call, which is all that tier classification
//! and advantage estimation read.
//!
//! One record per line:
//!
//! ```text
//! {"rollout_id": "...", "group_id": "...", "task_id": "...", "outcome": 0|1,
//!  "golden_actions": [{"name": "...", "args": {...}}],
//!  "turns": [{"index": 0, "text": "...",
//!             "tool_calls": [{"name": "...", "args": {...}, "errored": false}]}]}
//! ```
//!
//! Unknown fields are ignored on input.

mod value;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use value::ArgValue;

/// A tool invocation issued by the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub name: String,
    pub args: ArgValue,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, args: ArgValue) -> Self {
        Self {
            name: name.into(),
            args,
        }
    }
}

/// A ground-truth tool call from the task definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenAction {
    pub name: String,
    pub args: ArgValue,
}

impl GoldenAction {
    pub fn new(name: impl Into<String>, args: ArgValue) -> Self {
        Self {
            name: name.into(),
            args,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Role {
    #[default]
    Agent,
}

/// One agent response. `tool_errored[j]` is the environment's error flag for
/// `tool_calls[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    pub text: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    pub tool_errored: Vec<bool>,
}

impl Turn {
    pub fn message(index: usize, text: impl Into<String>) -> Self {
        Self {
            index,
            role: Role::Agent,
            text: Some(text.into()),
            tool_calls: Vec::new(),
            tool_errored: Vec::new(),
        }
    }

    pub fn with_calls(index: usize, calls: Vec<(ToolCall, bool)>) -> Self {
        let (tool_calls, tool_errored) = calls.into_iter().unzip();
        Self {
            index,
            role: Role::Agent,
            text: None,
            tool_calls,
            tool_errored,
        }
    }

    /// Calls paired with their error flags. Missing flags read as `false`.
    pub fn calls(&self) -> impl Iterator<Item = (&ToolCall, bool)> {
        self.tool_calls
            .iter()
            .enumerate()
            .map(|(j, c)| (c, self.tool_errored.get(j).copied().unwrap_or(false)))
    }

    pub fn is_message_only(&self) -> bool {
        self.tool_calls.is_empty()
    }
}

/// One multi-turn conversation with its binary task outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RolloutRecord", into = "RolloutRecord")]
pub struct Rollout {
    pub rollout_id: String,
    pub group_id: String,
    pub task_id: String,
    pub turns: Vec<Turn>,
    pub golden_actions: Vec<GoldenAction>,
    pub outcome: u8,
}

impl Rollout {
    pub fn passed(&self) -> bool {
        self.outcome == 1
    }

    pub fn outcome_f64(&self) -> f64 {
        f64::from(self.outcome)
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct RolloutRecord {
    rollout_id: String,
    group_id: String,
    task_id: String,
    outcome: u8,
    golden_actions: Vec<GoldenAction>,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default)]
    tool_calls: Vec<CallRecord>,
}

#[derive(Serialize, Deserialize)]
struct CallRecord {
    name: String,
    args: ArgValue,
    #[serde(default)]
    errored: bool,
}

impl From<RolloutRecord> for Rollout {
    fn from(r: RolloutRecord) -> Self {
        let turns = r
            .turns
            .into_iter()
            .map(|t| {
                let (tool_calls, tool_errored) = t
                    .tool_calls
                    .into_iter()
                    .map(|c| (ToolCall::new(c.name, c.args), c.errored))
                    .unzip();
                Turn {
                    index: t.index,
                    role: Role::Agent,
                    text: t.text,
                    tool_calls,
                    tool_errored,
                }
            })
            .collect();
        Rollout {
            rollout_id: r.rollout_id,
            group_id: r.group_id,
            task_id: r.task_id,
            turns,
            golden_actions: r.golden_actions,
            outcome: r.outcome,
        }
    }
}

impl From<Rollout> for RolloutRecord {
    fn from(r: Rollout) -> Self {
        let turns = r
            .turns
            .iter()
            .map(|t| TurnRecord {
                index: t.index,
                text: t.text.clone(),
                tool_calls: t
                    .calls()
                    .map(|(c, errored)| CallRecord {
                        name: c.name.clone(),
                        args: c.args.clone(),
                        errored,
                    })
                    .collect(),
            })
            .collect();
        RolloutRecord {
            rollout_id: r.rollout_id,
            group_id: r.group_id,
            task_id: r.task_id,
            outcome: r.outcome,
            golden_actions: r.golden_actions,
            turns,
        }
    }
}

/// One broken invariant found by [`validate_rollout`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(field: &'static str, detail: impl Into<String>) -> Self {
        Self {
            field,
            detail: detail.into(),
        }
    }
}

/// Lists every invariant the rollout violates. An empty list means valid.
pub fn validate_rollout(r: &Rollout) -> Vec<Violation> {
    let mut out = Vec::new();
    if r.rollout_id.is_empty() {
        out.push(Violation::new("rollout_id", "must be non-empty"));
    }
    if r.group_id.is_empty() {
        out.push(Violation::new("group_id", "must be non-empty"));
    }
    if r.outcome > 1 {
        out.push(Violation::new(
            "outcome",
            format!("must be 0 or 1, got {}", r.outcome),
        ));
    }
    if r.turns.is_empty() {
        out.push(Violation::new("turns", "a rollout needs at least one turn"));
    }
    let mut finite = true;
    for (pos, turn) in r.turns.iter().enumerate() {
        if turn.index != pos {
            out.push(Violation::new(
                "turn.index",
                format!("expected index {pos}, found {}", turn.index),
            ));
        }
        if turn.tool_calls.is_empty() && turn.text.as_deref().is_none_or(str::is_empty) {
            out.push(Violation::new(
                "turn.text",
                format!("turn {pos} has neither tool calls nor text"),
            ));
        }
        if turn.tool_errored.len() != turn.tool_calls.len() {
            out.push(Violation::new(
                "turn.tool_errored",
                format!(
                    "turn {pos} has {} error flags for {} calls",
                    turn.tool_errored.len(),
                    turn.tool_calls.len()
                ),
            ));
        }
        for call in &turn.tool_calls {
            if call.name.is_empty() {
                out.push(Violation::new(
                    "tool_call.name",
                    format!("empty tool name in turn {pos}"),
                ));
            }
            if call.args.as_map().is_none() {
                out.push(Violation::new(
                    "tool_call.args",
                    format!("arguments of `{}` in turn {pos} are not a map", call.name),
                ));
            }
            finite &= call.args.is_finite();
        }
    }
    for (j, g) in r.golden_actions.iter().enumerate() {
        if g.name.is_empty() {
            out.push(Violation::new(
                "golden_action.name",
                format!("golden action {j} has no name"),
            ));
        }
        if g.args.as_map().is_none() {
            out.push(Violation::new(
                "golden_action.args",
                format!("arguments of golden action {j} are not a map"),
            ));
        }
        finite &= g.args.is_finite();
    }
    if !finite {
        out.push(Violation::new(
            "ArgValue finiteness",
            "NaN or infinite number in arguments",
        ));
    }
    out
}

/// Reads a rollout log. Blank lines are skipped; every record is validated.
pub fn parse_buffer<R: BufRead>(reader: R) -> Result<Vec<Rollout>> {
    let mut buffer = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rollout: Rollout = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut fields: Vec<String> = validate_rollout(&rollout)
            .into_iter()
            .map(|v| format!("{} ({})", v.field, v.detail))
            .collect();
        if !seen.insert(rollout.rollout_id.clone()) {
            fields.push("rollout_id (duplicate id in buffer)".to_owned());
        }
        if !fields.is_empty() {
            return Err(Error::Validation {
                line: line_no,
                rollout_id: rollout.rollout_id,
                fields,
            });
        }
        buffer.push(rollout);
    }
    Ok(buffer)
}

pub fn parse_str(s: &str) -> Result<Vec<Rollout>> {
    parse_buffer(s.as_bytes())
}

/// Writes rollouts in the line-delimited format, one record per line.
pub fn write_buffer<W: Write>(rollouts: &[Rollout], mut writer: W) -> Result<()> {
    for r in rollouts {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(rollouts: &[Rollout]) -> Result<String> {
    let mut out = Vec::new();
    write_buffer(rollouts, &mut out)?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

/// Rollouts that share one prompt; the normalization unit for advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub group_id: String,
    pub task_id: String,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    /// Group normalization needs at least two rollouts.
    pub fn is_usable(&self) -> bool {
        self.rollouts.len() >= 2
    }

    pub fn golden_actions(&self) -> &[GoldenAction] {
        self.rollouts
            .first()
            .map(|r| r.golden_actions.as_slice())
            .unwrap_or(&[])
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.rollouts.iter().map(Rollout::outcome_f64).collect()
    }
}

/// Partitions a buffer by `group_id`, keeping first-appearance order of groups
/// and input order within each group. Singleton groups are returned; check
/// [`RolloutGroup::is_usable`] before normalizing.
pub fn group_rollouts(buffer: &[Rollout]) -> Result<Vec<RolloutGroup>> {
    let mut groups: Vec<RolloutGroup> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for r in buffer {
        match slot.get(r.group_id.as_str()) {
            Some(&i) => {
                let g = &mut groups[i];
                if g.task_id != r.task_id {
                    return Err(Error::Consistency {
                        group_id: r.group_id.clone(),
                        reason: format!(
                            "rollout `{}` has task `{}`, group has `{}`",
                            r.rollout_id, r.task_id, g.task_id
                        ),
                    });
                }
                if g.golden_actions() != r.golden_actions.as_slice() {
                    return Err(Error::Consistency {
                        group_id: r.group_id.clone(),
                        reason: format!("rollout `{}` has different golden actions", r.rollout_id),
                    });
                }
                g.rollouts.push(r.clone());
            }
            None => {
                slot.insert(&r.group_id, groups.len());
                groups.push(RolloutGroup {
                    group_id: r.group_id.clone(),
                    task_id: r.task_id.clone(),
                    rollouts: vec![r.clone()],
                });
            }
        }
    }
    Ok(groups)
}
