//! Reward tiers: per-turn classification and the tier → reward mapping.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::argmatch::{align_golden, normalize_value, GoldenAlignment, MatchKind, MatchScore};
use crate::error::{Error, Result};
use crate::rollout::{ArgValue, Rollout, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    GoldExact,
    SoftMatch,
    ReadOnly,
    StateChange,
    MessageOnly,
    Error,
    Duplicate,
}

impl Tier {
    pub const ALL: [Tier; 7] = [
        Tier::GoldExact,
        Tier::SoftMatch,
        Tier::ReadOnly,
        Tier::StateChange,
        Tier::MessageOnly,
        Tier::Error,
        Tier::Duplicate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tier::GoldExact => "gold_exact",
            Tier::SoftMatch => "soft_match",
            Tier::ReadOnly => "read_only",
            Tier::StateChange => "state_change",
            Tier::MessageOnly => "message_only",
            Tier::Error => "error",
            Tier::Duplicate => "duplicate",
        }
    }

    /// Rank used when a turn holds several calls; the highest wins.
    fn priority(self) -> u8 {
        match self {
            Tier::GoldExact => 6,
            Tier::SoftMatch => 5,
            Tier::Error => 4,
            Tier::Duplicate => 3,
            Tier::StateChange => 2,
            Tier::ReadOnly => 1,
            Tier::MessageOnly => 0,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tier `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolKind {
    ReadOnly,
    StateChanging,
}

/// Tool names split into read-only and state-changing sets. An entry ending
/// in `*` matches every tool name with that prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolRegistry {
    pub read_only: Vec<String>,
    pub state_changing: Vec<String>,
}

fn pattern_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => pattern == name,
    }
}

fn patterns_overlap(a: &str, b: &str) -> bool {
    match (a.strip_suffix('*'), b.strip_suffix('*')) {
        (Some(pa), Some(pb)) => pa.starts_with(pb) || pb.starts_with(pa),
        (Some(_), None) => pattern_matches(a, b),
        (None, Some(_)) => pattern_matches(b, a),
        (None, None) => a == b,
    }
}

impl ToolRegistry {
    pub fn new(read_only: Vec<String>, state_changing: Vec<String>) -> Result<Self> {
        let reg = Self {
            read_only,
            state_changing,
        };
        reg.validate()?;
        Ok(reg)
    }

    /// The airline tool lists.
    pub fn airline() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
        Self {
            read_only: s(&[
                "get_user_details",
                "get_reservation_details",
                "search_direct_flight",
                "search_onestop_flight",
                "list_all_airports",
                "calculate",
            ]),
            state_changing: s(&[
                "book_reservation",
                "cancel_reservation",
                "update_reservation_*",
                "send_certificate",
                "transfer_to_human_agents",
            ]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.read_only {
            if let Some(s) = self.state_changing.iter().find(|s| patterns_overlap(r, s)) {
                return Err(Error::Config(format!(
                    "tool registry sets overlap: `{r}` (read-only) and `{s}` (state-changing)"
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self, tool: &str) -> Result<ToolKind> {
        if self.read_only.iter().any(|p| pattern_matches(p, tool)) {
            Ok(ToolKind::ReadOnly)
        } else if self.state_changing.iter().any(|p| pattern_matches(p, tool)) {
            Ok(ToolKind::StateChanging)
        } else {
            Err(Error::UnknownTool(tool.to_owned()))
        }
    }
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::airline()
    }
}

/// Reward assigned to one tier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TierReward {
    Constant(f64),
    /// Use the soft-match score itself, which already lies in [0.5, 1.0).
    ScorePassthrough,
}

impl TierReward {
    pub const PASSTHROUGH_NAME: &'static str = "score-passthrough";

    /// Sign used for alignment checks; passthrough counts as positive.
    pub fn sign(self) -> i8 {
        match self {
            TierReward::ScorePassthrough => 1,
            TierReward::Constant(x) if x > 0.0 => 1,
            TierReward::Constant(x) if x < 0.0 => -1,
            TierReward::Constant(_) => 0,
        }
    }

    pub fn is_zero(self) -> bool {
        self == TierReward::Constant(0.0)
    }
}

impl fmt::Display for TierReward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TierReward::Constant(x) => write!(f, "{x}"),
            TierReward::ScorePassthrough => f.write_str(Self::PASSTHROUGH_NAME),
        }
    }
}

impl Serialize for TierReward {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TierReward::Constant(x) => s.serialize_f64(*x),
            TierReward::ScorePassthrough => s.serialize_str(Self::PASSTHROUGH_NAME),
        }
    }
}

impl<'de> Deserialize<'de> for TierReward {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(TierReward::Constant(x)),
            Raw::Text(t) if t == Self::PASSTHROUGH_NAME => Ok(TierReward::ScorePassthrough),
            Raw::Text(t) => Err(de::Error::custom(format!(
                "expected a number or \"{}\", got \"{t}\"",
                Self::PASSTHROUGH_NAME
            ))),
        }
    }
}

/// Scalar reward for every tier. All constants lie in [-1, 1]; only
/// `soft_match` may use [`TierReward::ScorePassthrough`].
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    values: BTreeMap<Tier, TierReward>,
}

impl RewardTable {
    pub fn new(values: impl IntoIterator<Item = (Tier, TierReward)>) -> Result<Self> {
        let values: BTreeMap<_, _> = values.into_iter().collect();
        for tier in Tier::ALL {
            match values.get(&tier) {
                None => {
                    return Err(Error::Config(format!(
                        "reward table is missing tier `{tier}`"
                    )))
                }
                Some(TierReward::Constant(x)) if !(-1.0..=1.0).contains(x) => {
                    return Err(Error::Config(format!(
                        "reward for `{tier}` is {x}, outside [-1, 1]"
                    )))
                }
                Some(TierReward::ScorePassthrough) if tier != Tier::SoftMatch => {
                    return Err(Error::Config(format!(
                        "`{tier}` cannot use score-passthrough"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { values })
    }

    fn from_constants(
        gold: f64,
        soft: TierReward,
        read: f64,
        state: f64,
        msg: f64,
        err: f64,
        dup: f64,
    ) -> Self {
        use TierReward::Constant as C;
        Self::new([
            (Tier::GoldExact, C(gold)),
            (Tier::SoftMatch, soft),
            (Tier::ReadOnly, C(read)),
            (Tier::StateChange, C(state)),
            (Tier::MessageOnly, C(msg)),
            (Tier::Error, C(err)),
            (Tier::Duplicate, C(dup)),
        ])
        .expect("built-in tables are valid")
    }

    /// The intuition-driven dense table.
    pub fn naive() -> Self {
        Self::from_constants(1.0, TierReward::ScorePassthrough, 0.3, 0.1, 0.0, -0.1, -0.2)
    }

    /// The naive table after discriminative recalibration: read-only zeroed
    /// and state-change flipped negative.
    pub fn calibrated() -> Self {
        Self::from_constants(
            1.0,
            TierReward::ScorePassthrough,
            0.0,
            -0.1,
            0.0,
            -0.1,
            -0.2,
        )
    }

    /// Outcome-only training: every tier is worth zero.
    pub fn sparse() -> Self {
        Self::from_constants(0.0, TierReward::Constant(0.0), 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn get(&self, tier: Tier) -> TierReward {
        self.values[&tier]
    }

    pub fn set(&mut self, tier: Tier, reward: TierReward) -> Result<()> {
        let mut values = self.values.clone();
        values.insert(tier, reward);
        *self = Self::new(values)?;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (Tier, TierReward)> + '_ {
        self.values.iter().map(|(t, r)| (*t, *r))
    }

    /// Reward for a turn of `tier`, given the soft score when one applies.
    pub fn reward(&self, tier: Tier, soft_score: Option<f64>) -> f64 {
        match self.get(tier) {
            TierReward::Constant(x) => x,
            TierReward::ScorePassthrough => soft_score.unwrap_or(0.0),
        }
    }

    /// Tier → sign of its reward (passthrough is positive).
    pub fn signs(&self) -> BTreeMap<Tier, i8> {
        self.iter().map(|(t, r)| (t, r.sign())).collect()
    }
}

/// `(naive, calibrated)`.
pub fn default_tables() -> (RewardTable, RewardTable) {
    (RewardTable::naive(), RewardTable::calibrated())
}

impl Serialize for RewardTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.values.len()))?;
        for (tier, reward) in &self.values {
            map.serialize_entry(tier.name(), reward)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for RewardTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<Tier, TierReward>::deserialize(d)?;
        RewardTable::new(raw).map_err(de::Error::custom)
    }
}

/// Calls already issued earlier in a rollout, in normalized form.
#[derive(Debug, Default, Clone)]
pub struct CallHistory {
    seen: Vec<(String, ArgValue)>,
}

impl CallHistory {
    pub fn new() -> Self {
        Self::default()
    }

    fn contains(&self, name: &str, normalized: &ArgValue) -> bool {
        self.seen
            .iter()
            .any(|(n, a)| n == name && crate::argmatch::deep_equal(a, normalized))
    }

    pub fn record_turn(&mut self, turn: &Turn) {
        for call in &turn.tool_calls {
            self.seen
                .push((call.name.clone(), normalize_value(&call.args)));
        }
    }
}

/// Tier of a single turn.
///
/// Each call is tiered on its own (exact → gold, soft → soft, errored →
/// error, repeat of an earlier call → duplicate, otherwise by registry) and
/// the turn takes the highest-priority call tier. Turns without calls are
/// message-only.
pub fn classify_turn(
    turn: &Turn,
    matches: &[MatchScore],
    history: &CallHistory,
    registry: &ToolRegistry,
) -> Result<Tier> {
    Ok(classify_with_match(turn, matches, history, registry)?.0)
}

fn classify_with_match(
    turn: &Turn,
    matches: &[MatchScore],
    history: &CallHistory,
    registry: &ToolRegistry,
) -> Result<(Tier, Option<MatchScore>)> {
    if turn.is_message_only() {
        return Ok((Tier::MessageOnly, None));
    }
    let mut within = CallHistory::new();
    let mut best: Option<(Tier, Option<MatchScore>)> = None;
    for (j, (call, errored)) in turn.calls().enumerate() {
        let kind = registry.kind(&call.name)?;
        let m = matches.get(j).copied().unwrap_or(MatchScore::NONE);
        let normalized = normalize_value(&call.args);
        let tier = match m.kind {
            MatchKind::Exact => Tier::GoldExact,
            MatchKind::Soft => Tier::SoftMatch,
            MatchKind::None if errored => Tier::Error,
            MatchKind::None
                if history.contains(&call.name, &normalized)
                    || within.contains(&call.name, &normalized) =>
            {
                Tier::Duplicate
            }
            MatchKind::None => match kind {
                ToolKind::ReadOnly => Tier::ReadOnly,
                ToolKind::StateChanging => Tier::StateChange,
            },
        };
        within.seen.push((call.name.clone(), normalized));
        let contributing = (m.kind != MatchKind::None).then_some(m);
        best = match best {
            Some((t, bm)) if t.priority() > tier.priority() => Some((t, bm)),
            Some((t, Some(bm))) if t == tier && bm.score >= m.score => Some((t, Some(bm))),
            _ => Some((tier, contributing)),
        };
    }
    Ok(best.expect("turn has at least one call"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TurnRewards {
    pub tier: Tier,
    pub reward: f64,
    pub matched: Option<MatchScore>,
}

/// Tiers every turn of a rollout. Alignment and duplicate history are built
/// internally.
pub fn classify_rollout(
    r: &Rollout,
    registry: &ToolRegistry,
) -> Result<Vec<(Tier, Option<MatchScore>)>> {
    let alignment: GoldenAlignment = align_golden(r);
    let mut history = CallHistory::new();
    let mut out = Vec::with_capacity(r.turns.len());
    for (k, turn) in r.turns.iter().enumerate() {
        out.push(classify_with_match(
            turn,
            alignment.turn(k),
            &history,
            registry,
        )?);
        history.record_turn(turn);
    }
    Ok(out)
}

pub fn assign_rewards(
    r: &Rollout,
    table: &RewardTable,
    registry: &ToolRegistry,
) -> Result<Vec<TurnRewards>> {
    Ok(classify_rollout(r, registry)?
        .into_iter()
        .map(|(tier, matched)| TurnRewards {
            tier,
            reward: table.reward(tier, matched.map(|m| m.score)),
            matched,
        })
        .collect())
}

/// Rewards for every rollout of a buffer, in buffer order.
pub fn assign_buffer(
    buffer: &[Rollout],
    table: &RewardTable,
    registry: &ToolRegistry,
) -> Result<Vec<Vec<TurnRewards>>> {
    buffer
        .iter()
        .map(|r| assign_rewards(r, table, registry))
        .collect()
}

/// Re-prices already-classified turns under another table.
pub fn reprice(turns: &[TurnRewards], table: &RewardTable) -> Vec<TurnRewards> {
    turns
        .iter()
        .map(|t| TurnRewards {
            reward: table.reward(t.tier, t.matched.map(|m| m.score)),
            ..*t
        })
        .collect()
}
