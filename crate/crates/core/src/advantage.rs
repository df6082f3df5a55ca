//! Group-relative advantage estimators.
//!
//! Every estimator works on one [`RolloutGroup`] at a time. Per-turn terms are
//! normalized across the rollouts that reach a given turn position; a position
//! reached by fewer than two rollouts contributes zero.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::RolloutGroup;
use crate::tiers::TurnRewards;

pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_LAMBDA: f64 = 0.3;
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_DEAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Outcome advantage broadcast to every turn.
    Grpo,
    /// Suffix sum of per-turn advantages plus the outcome advantage.
    MtGrpo,
    /// Normalized discounted returns.
    Gtpo,
    /// Normalized discounted returns plus a damped outcome advantage.
    Hybrid,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Grpo,
        EstimatorKind::MtGrpo,
        EstimatorKind::Gtpo,
        EstimatorKind::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Grpo => "grpo",
            EstimatorKind::MtGrpo => "mt_grpo",
            EstimatorKind::Gtpo => "gtpo",
            EstimatorKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Argument(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub gamma: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub dead_tol: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Hybrid,
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            dead_tol: DEFAULT_DEAD_TOL,
        }
    }
}

impl EstimatorConfig {
    pub fn with_kind(kind: EstimatorKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_owned()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be a positive finite number");
        }
        if self.dead_tol.is_nan() || self.dead_tol < 0.0 {
            return bad("dead_tol must be >= 0");
        }
        Ok(())
    }
}

/// Advantages for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTensor {
    pub kind: EstimatorKind,
    pub rollout_ids: Vec<String>,
    /// `advantages[i][k]` is the advantage of turn `k` of rollout `i`.
    pub advantages: Vec<Vec<f64>>,
    /// Normalized outcome per rollout.
    pub outcome: Vec<f64>,
    /// The normalized per-turn term, for estimators that have one.
    pub turn_component: Option<Vec<Vec<f64>>>,
}

impl AdvantageTensor {
    pub fn turn_count(&self) -> usize {
        self.advantages.iter().map(Vec::len).sum()
    }

    /// `(rollout, turn, advantage)` for every turn.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.advantages
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(k, a)| (i, k, *a)))
    }

    pub fn records(&self) -> Vec<AdvantageRecord> {
        self.iter()
            .map(|(i, k, a)| AdvantageRecord {
                rollout_id: self.rollout_ids[i].clone(),
                turn_index: k,
                advantage: tidy(a),
                a_outcome: tidy(self.outcome[i]),
                a_turn_component: self.turn_component.as_ref().map(|c| tidy(c[i][k])),
            })
            .collect()
    }
}

/// One line of the advantage export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub rollout_id: String,
    pub turn_index: usize,
    pub advantage: f64,
    pub a_outcome: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_turn_component: Option<f64>,
}

/// Writes one JSON record per turn.
pub fn write_records<'a, W: Write>(
    tensors: impl IntoIterator<Item = &'a AdvantageTensor>,
    mut w: W,
) -> Result<()> {
    for t in tensors {
        for rec in t.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn tidy(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

/// `(x - mean) / (population std + epsilon)` for each element.
pub fn group_normalize(values: &[f64], epsilon: f64) -> Vec<f64> {
    if values.iter().all(|x| *x == values[0]) {
        return vec![0.0; values.len()];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let denom = std + epsilon;
    values
        .iter()
        .map(|x| {
            let d = x - mean;
            if d == 0.0 {
                0.0
            } else {
                d / denom
            }
        })
        .collect()
}

/// Normalizes `rows[i][l]` across `i` at each position `l`, using only the rows
/// long enough to have position `l`.
pub fn positionwise_normalize(rows: &[Vec<f64>], epsilon: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = rows.iter().map(|r| vec![0.0; r.len()]).collect();
    let depth = rows.iter().map(Vec::len).max().unwrap_or(0);
    for l in 0..depth {
        let members: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].len() > l).collect();
        if members.len() < 2 {
            continue;
        }
        let column: Vec<f64> = members.iter().map(|&i| rows[i][l]).collect();
        for (&i, g) in members.iter().zip(group_normalize(&column, epsilon)) {
            out[i][l] = g;
        }
    }
    out
}

/// Return at each turn: `sum_{l>=k} gamma^(l-k) r_l + gamma^(K-k) outcome`.
pub fn discounted_return(rewards: &[f64], outcome: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    // Running value of the suffix starting at k + 1, including the outcome term.
    let mut acc = outcome;
    for k in (0..rewards.len()).rev() {
        acc = rewards[k] + gamma * acc;
        out[k] = acc;
    }
    out
}

/// Per-turn reward values, dropping tier detail.
pub fn reward_values(rewards: &[Vec<TurnRewards>]) -> Vec<Vec<f64>> {
    rewards
        .iter()
        .map(|r| r.iter().map(|t| t.reward).collect())
        .collect()
}

fn check_group(group: &RolloutGroup) -> Result<()> {
    if !group.is_usable() {
        return Err(Error::Estimator(format!(
            "group `{}` has {} rollout(s); at least 2 are required",
            group.group_id,
            group.len()
        )));
    }
    Ok(())
}

fn check_rewards(group: &RolloutGroup, rewards: &[Vec<f64>]) -> Result<()> {
    if rewards.len() != group.len() {
        return Err(Error::Estimator(format!(
            "group `{}`: {} reward rows for {} rollouts",
            group.group_id,
            rewards.len(),
            group.len()
        )));
    }
    for (r, row) in group.rollouts.iter().zip(rewards) {
        if row.len() != r.turns.len() {
            return Err(Error::Estimator(format!(
                "rollout `{}`: {} rewards for {} turns",
                r.rollout_id,
                row.len(),
                r.turns.len()
            )));
        }
    }
    Ok(())
}

fn outcome_advantage(group: &RolloutGroup, epsilon: f64) -> Vec<f64> {
    group_normalize(&group.outcomes(), epsilon)
}

fn ids(group: &RolloutGroup) -> Vec<String> {
    group
        .rollouts
        .iter()
        .map(|r| r.rollout_id.clone())
        .collect()
}

pub fn grpo_advantages(group: &RolloutGroup, epsilon: f64) -> Result<AdvantageTensor> {
    check_group(group)?;
    let outcome = outcome_advantage(group, epsilon);
    let advantages = group
        .rollouts
        .iter()
        .zip(&outcome)
        .map(|(r, a)| vec![*a; r.turns.len()])
        .collect();
    Ok(AdvantageTensor {
        kind: EstimatorKind::Grpo,
        rollout_ids: ids(group),
        advantages,
        outcome,
        turn_component: None,
    })
}

pub fn mt_grpo_advantages(
    group: &RolloutGroup,
    rewards: &[Vec<f64>],
    epsilon: f64,
) -> Result<AdvantageTensor> {
    check_group(group)?;
    check_rewards(group, rewards)?;
    let outcome = outcome_advantage(group, epsilon);
    let turn = positionwise_normalize(rewards, epsilon);
    let advantages = turn
        .iter()
        .zip(&outcome)
        .map(|(row, a_o)| {
            let mut out = vec![0.0; row.len()];
            let mut suffix = 0.0;
            for k in (0..row.len()).rev() {
                suffix += row[k];
                out[k] = suffix + a_o;
            }
            out
        })
        .collect();
    Ok(AdvantageTensor {
        kind: EstimatorKind::MtGrpo,
        rollout_ids: ids(group),
        advantages,
        outcome,
        turn_component: Some(turn),
    })
}

fn normalized_returns(
    group: &RolloutGroup,
    rewards: &[Vec<f64>],
    gamma: f64,
    epsilon: f64,
) -> Vec<Vec<f64>> {
    let returns: Vec<Vec<f64>> = group
        .rollouts
        .iter()
        .zip(rewards)
        .map(|(r, row)| discounted_return(row, r.outcome_f64(), gamma))
        .collect();
    positionwise_normalize(&returns, epsilon)
}

pub fn gtpo_advantages(
    group: &RolloutGroup,
    rewards: &[Vec<f64>],
    gamma: f64,
    epsilon: f64,
) -> Result<AdvantageTensor> {
    check_group(group)?;
    check_rewards(group, rewards)?;
    let turn = normalized_returns(group, rewards, gamma, epsilon);
    Ok(AdvantageTensor {
        kind: EstimatorKind::Gtpo,
        rollout_ids: ids(group),
        advantages: turn.clone(),
        outcome: outcome_advantage(group, epsilon),
        turn_component: Some(turn),
    })
}

pub fn hybrid_advantages(
    group: &RolloutGroup,
    rewards: &[Vec<f64>],
    config: &EstimatorConfig,
) -> Result<AdvantageTensor> {
    check_group(group)?;
    check_rewards(group, rewards)?;
    let turn = normalized_returns(group, rewards, config.gamma, config.epsilon);
    let outcome = outcome_advantage(group, config.epsilon);
    let advantages = turn
        .iter()
        .zip(&outcome)
        .map(|(row, a_o)| row.iter().map(|g| g + config.lambda * a_o).collect())
        .collect();
    Ok(AdvantageTensor {
        kind: EstimatorKind::Hybrid,
        rollout_ids: ids(group),
        advantages,
        outcome,
        turn_component: Some(turn),
    })
}

/// Dispatches on `config.kind`.
pub fn compute(
    group: &RolloutGroup,
    rewards: &[Vec<f64>],
    config: &EstimatorConfig,
) -> Result<AdvantageTensor> {
    match config.kind {
        EstimatorKind::Grpo => {
            check_rewards(group, rewards)?;
            grpo_advantages(group, config.epsilon)
        }
        EstimatorKind::MtGrpo => mt_grpo_advantages(group, rewards, config.epsilon),
        EstimatorKind::Gtpo => gtpo_advantages(group, rewards, config.gamma, config.epsilon),
        EstimatorKind::Hybrid => hybrid_advantages(group, rewards, config),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeadTurns {
    pub mask: Vec<Vec<bool>>,
    pub dead: usize,
    pub total: usize,
}

impl DeadTurns {
    /// Dead turns over all turns; 0 for an empty tensor.
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.dead as f64 / self.total as f64
        }
    }
}

/// Marks turns with `|A| <= dead_tol`.
pub fn dead_turn_mask(tensor: &AdvantageTensor, dead_tol: f64) -> DeadTurns {
    let mask: Vec<Vec<bool>> = tensor
        .advantages
        .iter()
        .map(|row| row.iter().map(|a| a.abs() <= dead_tol).collect())
        .collect();
    let dead = mask.iter().flatten().filter(|d| **d).count();
    DeadTurns {
        total: tensor.turn_count(),
        dead,
        mask,
    }
}
