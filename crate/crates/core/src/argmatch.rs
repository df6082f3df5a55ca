//! Deep argument comparison and golden-action matching.
//!
//! Two argument trees that differ only in key order, numeric representation
//! (`"123"` vs `123`), padding with empty values, or the order of a list of
//! objects are treated as the same call. Normalization rules, applied
//! bottom-up:
//!
//! 1. strings that spell a finite number become numbers (optional sign,
//!    digits, optional fractional part; zero-padded forms like `"007"` stay
//!    strings so identifiers survive);
//! 2. map entries and list elements that are null, `""`, `[]` or `{}` are
//!    dropped;
//! 3. lists made up entirely of maps are sorted by each element's canonical
//!    JSON text.
//!
//! Integral numbers compare exactly; other numbers use a relative tolerance
//! of [`FLOAT_REL_TOL`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rollout::{ArgValue, GoldenAction, Rollout, ToolCall};

pub const FLOAT_REL_TOL: f64 = 1e-9;

/// Upper end of the soft-match band. A call that carries every golden
/// argument plus extras would otherwise score 1.0 without being exact.
pub const SOFT_SCORE_MAX: f64 = 0.99;

pub fn normalize_value(v: &ArgValue) -> ArgValue {
    match v {
        ArgValue::Str(s) => coerce_numeric(s).unwrap_or_else(|| v.clone()),
        ArgValue::Float(x) => ArgValue::number(*x),
        ArgValue::List(items) => {
            let mut out: Vec<ArgValue> = items
                .iter()
                .map(normalize_value)
                .filter(|x| !is_empty_value(x))
                .collect();
            if !out.is_empty() && out.iter().all(|x| matches!(x, ArgValue::Map(_))) {
                out.sort_by_cached_key(canonical_text);
            }
            ArgValue::List(out)
        }
        ArgValue::Map(m) => ArgValue::Map(
            m.iter()
                .map(|(k, v)| (k.clone(), normalize_value(v)))
                .filter(|(_, v)| !is_empty_value(v))
                .collect(),
        ),
        ArgValue::Null | ArgValue::Bool(_) | ArgValue::Int(_) => v.clone(),
    }
}

fn is_empty_value(v: &ArgValue) -> bool {
    match v {
        ArgValue::Null => true,
        ArgValue::Str(s) => s.is_empty(),
        ArgValue::List(items) => items.is_empty(),
        ArgValue::Map(m) => m.is_empty(),
        _ => false,
    }
}

fn canonical_text(v: &ArgValue) -> String {
    serde_json::to_string(v).unwrap_or_else(|_| format!("{v:?}"))
}

fn coerce_numeric(s: &str) -> Option<ArgValue> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let all_digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || (int_part.len() > 1 && int_part.starts_with('0')) {
        return None;
    }
    match frac_part {
        None => s.parse::<i64>().ok().map(ArgValue::Int),
        Some(f) if all_digits(f) => {
            let x: f64 = s.parse().ok()?;
            x.is_finite().then(|| ArgValue::number(x))
        }
        Some(_) => None,
    }
}

fn numbers_equal(x: f64, y: f64) -> bool {
    if x.fract() == 0.0 && y.fract() == 0.0 {
        return x == y;
    }
    (x - y).abs() <= FLOAT_REL_TOL * x.abs().max(y.abs())
}

/// Structural equality on already-normalized trees.
fn normalized_equal(a: &ArgValue, b: &ArgValue) -> bool {
    use ArgValue::*;
    match (a, b) {
        (Null, Null) => true,
        (Bool(x), Bool(y)) => x == y,
        (Int(x), Int(y)) => x == y,
        (Int(_) | Float(_), Int(_) | Float(_)) => {
            numbers_equal(a.as_f64().unwrap(), b.as_f64().unwrap())
        }
        (Str(x), Str(y)) => x == y,
        (List(xs), List(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| normalized_equal(x, y))
        }
        (Map(xm), Map(ym)) => {
            xm.len() == ym.len()
                && xm
                    .iter()
                    .zip(ym)
                    .all(|((kx, vx), (ky, vy))| kx == ky && normalized_equal(vx, vy))
        }
        _ => false,
    }
}

pub fn deep_equal(a: &ArgValue, b: &ArgValue) -> bool {
    normalized_equal(&normalize_value(a), &normalize_value(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Soft,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub kind: MatchKind,
    pub score: f64,
    pub matched_golden_index: Option<usize>,
}

impl MatchScore {
    pub const NONE: MatchScore = MatchScore {
        kind: MatchKind::None,
        score: 0.0,
        matched_golden_index: None,
    };

    fn exact() -> Self {
        Self {
            kind: MatchKind::Exact,
            score: 1.0,
            matched_golden_index: None,
        }
    }

    fn soft(score: f64) -> Self {
        Self {
            kind: MatchKind::Soft,
            score,
            matched_golden_index: None,
        }
    }

    fn at(self, golden: usize) -> Self {
        Self {
            matched_golden_index: Some(golden),
            ..self
        }
    }

    pub fn is_exact(&self) -> bool {
        self.kind == MatchKind::Exact
    }
}

fn empty_args() -> &'static BTreeMap<String, ArgValue> {
    static EMPTY: BTreeMap<String, ArgValue> = BTreeMap::new();
    &EMPTY
}

/// Scores one call against one golden action.
///
/// Exact when names agree and arguments are deep-equal; soft when names agree
/// and at least one golden argument key carries a deep-equal value in the
/// call, scored `0.5 + 0.5 * shared / golden_keys` (capped at
/// [`SOFT_SCORE_MAX`]); none otherwise, including the case of a golden action
/// with no arguments that is not matched exactly.
pub fn match_call(call: &ToolCall, golden: &GoldenAction) -> MatchScore {
    if call.name != golden.name {
        return MatchScore::NONE;
    }
    let call_args = normalize_value(&call.args);
    let gold_args = normalize_value(&golden.args);
    if normalized_equal(&call_args, &gold_args) {
        return MatchScore::exact();
    }
    let gold_map = gold_args.as_map().unwrap_or(empty_args());
    let call_map = call_args.as_map().unwrap_or(empty_args());
    if gold_map.is_empty() {
        return MatchScore::NONE;
    }
    let shared = gold_map
        .iter()
        .filter(|(k, gv)| call_map.get(*k).is_some_and(|cv| normalized_equal(cv, gv)))
        .count();
    if shared == 0 {
        return MatchScore::NONE;
    }
    let raw = 0.5 + 0.5 * shared as f64 / gold_map.len() as f64;
    MatchScore::soft(raw.min(SOFT_SCORE_MAX))
}

/// Per-call match results for a whole rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenAlignment {
    /// `calls[k][j]` scores call `j` of turn `k`.
    pub calls: Vec<Vec<MatchScore>>,
    /// `consumed[g]` is set once golden action `g` has been matched exactly.
    pub consumed: Vec<bool>,
}

impl GoldenAlignment {
    pub fn turn(&self, k: usize) -> &[MatchScore] {
        self.calls.get(k).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Greedy in-order alignment of a rollout's calls against its golden actions.
///
/// Each call takes the earliest unconsumed golden action it matches exactly.
/// Failing that it records its best soft score against any unconsumed golden
/// action (earliest index wins ties) without consuming it.
pub fn align_golden(r: &Rollout) -> GoldenAlignment {
    let mut consumed = vec![false; r.golden_actions.len()];
    let calls = r
        .turns
        .iter()
        .map(|turn| {
            turn.tool_calls
                .iter()
                .map(|call| {
                    let mut best: Option<MatchScore> = None;
                    for (g, golden) in r.golden_actions.iter().enumerate() {
                        if consumed[g] {
                            continue;
                        }
                        let m = match_call(call, golden);
                        match m.kind {
                            MatchKind::Exact => {
                                consumed[g] = true;
                                return m.at(g);
                            }
                            MatchKind::Soft if best.is_none_or(|b| m.score > b.score) => {
                                best = Some(m.at(g));
                            }
                            _ => {}
                        }
                    }
                    best.unwrap_or(MatchScore::NONE)
                })
                .collect()
        })
        .collect();
    GoldenAlignment { calls, consumed }
}
