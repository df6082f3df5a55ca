//! Iterative reward calibration.
//!
//! Each iteration collects a buffer, measures how strongly each tier's
//! presence separates passing from failing rollouts, proposes rewards
//! proportional to that correlation, and checks that the proposed rewards
//! push advantages in the intended directions. The loop stops once no tier is
//! misaligned and mean per-turn reward correlates with outcome above a target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::advantage::{EstimatorConfig, EstimatorKind};
use crate::diagnostics::{self, AlignmentReport, Correlation, ScoredBuffer, TierStats};
use crate::error::{Error, Result};
use crate::rollout::{group_rollouts, Rollout};
use crate::tiers::{RewardTable, Tier, TierReward, ToolRegistry};

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_ETA: f64 = 0.4;

/// How a tier correlation `rho` becomes a reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "alpha")]
pub enum AlphaPolicy {
    /// `alpha = 1 / |rho_gold|`, so gold maps to magnitude 1.
    GoldAnchored,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrcConfig {
    /// Tiers with `|rho| <= delta` get reward 0.
    pub delta: f64,
    pub alpha: AlphaPolicy,
    /// Required correlation between mean per-turn reward and outcome.
    pub eta: f64,
    /// Outcome weight used by the alignment check.
    pub lambda: f64,
    pub max_iterations: usize,
    pub estimator: EstimatorKind,
    pub gamma: f64,
    pub epsilon: f64,
    pub dead_tol: f64,
    /// Tiers whose reward is fixed rather than proposed.
    pub pinned: BTreeMap<Tier, f64>,
}

impl Default for IrcConfig {
    fn default() -> Self {
        let est = EstimatorConfig::default();
        Self {
            delta: DEFAULT_DELTA,
            alpha: AlphaPolicy::GoldAnchored,
            eta: DEFAULT_ETA,
            lambda: est.lambda,
            max_iterations: 5,
            estimator: EstimatorKind::Hybrid,
            gamma: est.gamma,
            epsilon: est.epsilon,
            dead_tol: est.dead_tol,
            pinned: BTreeMap::from([(Tier::GoldExact, 1.0)]),
        }
    }
}

impl IrcConfig {
    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            kind: self.estimator,
            gamma: self.gamma,
            lambda: self.lambda,
            epsilon: self.epsilon,
            dead_tol: self.dead_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_owned()));
        if self.delta.is_nan() || self.delta < 0.0 {
            return bad("delta must be >= 0");
        }
        if !(-1.0..=1.0).contains(&self.eta) {
            return bad("eta must lie in [-1, 1]");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1");
        }
        if let AlphaPolicy::Fixed(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return bad("a fixed alpha must be positive and finite");
            }
        }
        if self.pinned.values().any(|v| !(-1.0..=1.0).contains(v)) {
            return bad("pinned rewards must lie in [-1, 1]");
        }
        self.estimator_config().validate()
    }
}

/// Proposes a reward table from tier statistics.
///
/// Non-pinned tiers get `alpha * rho` when `|rho| > delta` and 0 otherwise,
/// clamped to [-1, 1]. A positively discriminative soft tier keeps its
/// per-call score; a negatively discriminative one gets the constant.
pub fn propose_rewards(stats: &TierStats, config: &IrcConfig) -> Result<RewardTable> {
    if stats.single_outcome {
        return Err(Error::Calibration(format!(
            "buffer has {} passing and {} failing rollouts; both outcomes are required",
            stats.passing, stats.failing
        )));
    }
    let alpha = match config.alpha {
        AlphaPolicy::Fixed(a) => a,
        AlphaPolicy::GoldAnchored => {
            let gold = stats.row(Tier::GoldExact).rho;
            if gold.zero_variance || gold.value == 0.0 {
                return Err(Error::Anchor(Tier::GoldExact));
            }
            1.0 / gold.value.abs()
        }
    };
    let mut values = Vec::with_capacity(Tier::ALL.len());
    for tier in Tier::ALL {
        if let Some(&pin) = config.pinned.get(&tier) {
            values.push((tier, TierReward::Constant(pin)));
            continue;
        }
        let rho = stats.row(tier).rho.value;
        let reward = if rho.abs() <= config.delta {
            TierReward::Constant(0.0)
        } else if tier == Tier::SoftMatch && rho > 0.0 {
            TierReward::ScorePassthrough
        } else {
            TierReward::Constant((alpha * rho).clamp(-1.0, 1.0))
        };
        values.push((tier, reward));
    }
    RewardTable::new(values)
}

/// Alignment of `buffer` under `table`, with each tier's intended sign taken
/// from the sign of its reward.
pub fn check_alignment(
    buffer: &ScoredBuffer,
    table: &RewardTable,
    config: &IrcConfig,
) -> Result<AlignmentReport> {
    diagnostics::alignment_report(
        &buffer.reprice(table),
        &config.estimator_config(),
        &table.signs(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrcIteration {
    pub iteration: usize,
    pub rollouts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tier_stats: Option<TierStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposed: Option<RewardTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentReport>,
    /// Correlation of mean per-turn reward with outcome under `proposed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward_outcome_correlation: Option<Correlation>,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrcTrace {
    pub config: IrcConfig,
    pub iterations: Vec<IrcIteration>,
    pub converged: bool,
    pub final_table: RewardTable,
}

/// Runs the calibration loop.
///
/// `buffer_source(iteration, current_table)` supplies the rollouts for each
/// iteration. An iteration whose buffer cannot anchor a proposal (one outcome
/// class, or a constant gold tier) is recorded with its error and the loop
/// moves on. Stops at the first converged iteration or after
/// `max_iterations`; the returned table is the last one proposed, or
/// `initial` if none was.
pub fn calibrate<F>(
    mut buffer_source: F,
    initial: &RewardTable,
    registry: &ToolRegistry,
    config: &IrcConfig,
) -> Result<(RewardTable, IrcTrace)>
where
    F: FnMut(usize, &RewardTable) -> Result<Vec<Rollout>>,
{
    config.validate()?;
    let mut current = initial.clone();
    let mut iterations = Vec::new();
    let mut converged = false;
    for it in 0..config.max_iterations {
        let rollouts = buffer_source(it, &current)?;
        let count = rollouts.len();
        let mut record = IrcIteration {
            iteration: it,
            rollouts: count,
            tier_stats: None,
            proposed: None,
            alignment: None,
            reward_outcome_correlation: None,
            converged: false,
            error: None,
        };
        let buffer = ScoredBuffer::score(group_rollouts(&rollouts)?, &current, registry)?;
        let stats = match buffer.tier_stats() {
            Ok(s) => s,
            Err(e) => {
                record.error = Some(e.to_string());
                iterations.push(record);
                continue;
            }
        };
        record.tier_stats = Some(stats.clone());
        let proposed = match propose_rewards(&stats, config) {
            Ok(t) => t,
            Err(e @ (Error::Calibration(_) | Error::Anchor(_))) => {
                record.error = Some(e.to_string());
                iterations.push(record);
                continue;
            }
            Err(e) => return Err(e),
        };
        let alignment = check_alignment(&buffer, &proposed, config)?;
        let corr = diagnostics::reward_outcome_correlation(&buffer.reprice(&proposed))?;
        record.converged =
            alignment.mismatches == 0 && !corr.zero_variance && corr.value > config.eta;
        record.alignment = Some(alignment);
        record.reward_outcome_correlation = Some(corr);
        record.proposed = Some(proposed.clone());
        current = proposed;
        converged = record.converged;
        iterations.push(record);
        if converged {
            break;
        }
    }
    let trace = IrcTrace {
        config: config.clone(),
        iterations,
        converged,
        final_table: current.clone(),
    };
    Ok((current, trace))
}
