//! Reports relating tiers, rewards and advantages to outcomes.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::advantage::{self, dead_turn_mask, EstimatorConfig, EstimatorKind};
use crate::error::{Error, Result};
use crate::rollout::{Rollout, RolloutGroup};
use crate::tiers::{self, RewardTable, Tier, ToolRegistry, TurnRewards};

/// A correlation that is reported as 0 when either input is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub value: f64,
    pub zero_variance: bool,
}

impl Correlation {
    const DEGENERATE: Correlation = Correlation {
        value: 0.0,
        zero_variance: true,
    };
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.zero_variance {
            f.write_str("n/a")
        } else {
            write!(f, "{:+.3}", self.value)
        }
    }
}

/// Pearson correlation of two equal-length samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Argument(
            "correlation needs at least 2 samples".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation::DEGENERATE);
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        zero_variance: false,
    })
}

/// Pearson correlation of two binary vectors.
pub fn point_biserial(presence: &[bool], outcomes: &[bool]) -> Result<Correlation> {
    let f = |v: &[bool]| {
        v.iter()
            .map(|b| f64::from(u8::from(*b)))
            .collect::<Vec<_>>()
    };
    pearson(&f(presence), &f(outcomes))
}

/// Sign convention used for intended reward directions.
pub fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn sign_symbol(s: i8) -> &'static str {
    match s {
        1 => "+",
        -1 => "-",
        _ => "0",
    }
}

/// Intended advantage direction per tier after calibration: gold and soft up;
/// error, duplicate and state change down; read-only and message neutral.
pub fn default_intended_signs() -> BTreeMap<Tier, i8> {
    BTreeMap::from([
        (Tier::GoldExact, 1),
        (Tier::SoftMatch, 1),
        (Tier::Error, -1),
        (Tier::Duplicate, -1),
        (Tier::StateChange, -1),
        (Tier::ReadOnly, 0),
        (Tier::MessageOnly, 0),
    ])
}

/// Rewarded rollouts, grouped. `rewards[g][i][k]` belongs to turn `k` of
/// rollout `i` in group `g`.
#[derive(Debug, Clone)]
pub struct ScoredBuffer {
    pub groups: Vec<RolloutGroup>,
    pub rewards: Vec<Vec<Vec<TurnRewards>>>,
}

impl ScoredBuffer {
    pub fn score(
        groups: Vec<RolloutGroup>,
        table: &RewardTable,
        registry: &ToolRegistry,
    ) -> Result<Self> {
        let rewards = groups
            .iter()
            .map(|g| tiers::assign_buffer(&g.rollouts, table, registry))
            .collect::<Result<_>>()?;
        Ok(Self { groups, rewards })
    }

    /// Same tiers, rewards re-read from `table`.
    pub fn reprice(&self, table: &RewardTable) -> Self {
        Self {
            groups: self.groups.clone(),
            rewards: self
                .rewards
                .iter()
                .map(|g| g.iter().map(|r| tiers::reprice(r, table)).collect())
                .collect(),
        }
    }

    pub fn rollouts(&self) -> impl Iterator<Item = (&Rollout, &[TurnRewards])> {
        self.groups
            .iter()
            .zip(&self.rewards)
            .flat_map(|(g, rw)| g.rollouts.iter().zip(rw.iter().map(Vec::as_slice)))
    }

    pub fn rollout_count(&self) -> usize {
        self.groups.iter().map(RolloutGroup::len).sum()
    }

    pub fn tier_stats(&self) -> Result<TierStats> {
        let (rollouts, tiers): (Vec<Rollout>, Vec<Vec<Tier>>) = self
            .rollouts()
            .map(|(r, rw)| (r.clone(), rw.iter().map(|t| t.tier).collect()))
            .unzip();
        discriminative_table(&rollouts, &tiers)
    }

    /// Per-turn tensors for every group with at least two rollouts, with the
    /// index of the group each came from.
    fn tensors(
        &self,
        config: &EstimatorConfig,
    ) -> Result<Vec<(usize, advantage::AdvantageTensor)>> {
        let mut out = Vec::new();
        for (gi, (g, rw)) in self.groups.iter().zip(&self.rewards).enumerate() {
            if !g.is_usable() {
                continue;
            }
            let values = advantage::reward_values(rw);
            out.push((gi, advantage::compute(g, &values, config)?));
        }
        Ok(out)
    }

    pub fn skipped_groups(&self) -> usize {
        self.groups.iter().filter(|g| !g.is_usable()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierRow {
    pub tier: Tier,
    /// Percentage of passing rollouts with at least one turn of this tier.
    pub pass_pct: f64,
    /// Percentage of failing rollouts with at least one turn of this tier.
    pub fail_pct: f64,
    /// `pass_pct - fail_pct`, in percentage points.
    pub gap: f64,
    pub rho: Correlation,
    pub rollouts_with_tier: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierStats {
    pub rollouts: usize,
    pub passing: usize,
    pub failing: usize,
    /// Set when only one outcome class is present; gaps are then not meaningful.
    pub single_outcome: bool,
    pub tiers: Vec<TierRow>,
}

impl TierStats {
    pub fn row(&self, tier: Tier) -> &TierRow {
        self.tiers
            .iter()
            .find(|r| r.tier == tier)
            .expect("every tier has a row")
    }
}

/// Per-rollout tier presence split by outcome.
pub fn discriminative_table(buffer: &[Rollout], tiers: &[Vec<Tier>]) -> Result<TierStats> {
    if buffer.is_empty() {
        return Err(Error::Argument(
            "cannot build tier statistics for an empty buffer".into(),
        ));
    }
    if buffer.len() != tiers.len() {
        return Err(Error::Argument(format!(
            "{} tier rows for {} rollouts",
            tiers.len(),
            buffer.len()
        )));
    }
    let outcomes: Vec<bool> = buffer.iter().map(Rollout::passed).collect();
    let passing = outcomes.iter().filter(|o| **o).count();
    let failing = buffer.len() - passing;
    let pct = |count: usize, of: usize| {
        if of == 0 {
            0.0
        } else {
            100.0 * count as f64 / of as f64
        }
    };
    let mut rows = Vec::with_capacity(Tier::ALL.len());
    for tier in Tier::ALL {
        let presence: Vec<bool> = tiers.iter().map(|ts| ts.contains(&tier)).collect();
        let in_pass = presence
            .iter()
            .zip(&outcomes)
            .filter(|(p, o)| **p && **o)
            .count();
        let in_fail = presence
            .iter()
            .zip(&outcomes)
            .filter(|(p, o)| **p && !**o)
            .count();
        let (pass_pct, fail_pct) = (pct(in_pass, passing), pct(in_fail, failing));
        let rho = if buffer.len() >= 2 {
            point_biserial(&presence, &outcomes)?
        } else {
            Correlation::DEGENERATE
        };
        rows.push(TierRow {
            tier,
            pass_pct,
            fail_pct,
            gap: pass_pct - fail_pct,
            rho,
            rollouts_with_tier: in_pass + in_fail,
        });
    }
    Ok(TierStats {
        rollouts: buffer.len(),
        passing,
        failing,
        single_outcome: passing == 0 || failing == 0,
        tiers: rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    Aligned,
    Misaligned,
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub tier: Tier,
    pub turns: usize,
    /// Mean per-turn component over turns of this tier.
    pub mean_turn_component: f64,
    /// Mean of the per-turn component plus the weighted outcome advantage.
    pub mean_total: f64,
    pub intended_sign: i8,
    pub status: AlignmentStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub estimator: EstimatorKind,
    pub mismatches: usize,
    pub skipped_groups: usize,
    pub tiers: Vec<AlignmentRow>,
}

impl AlignmentReport {
    pub fn row(&self, tier: Tier) -> &AlignmentRow {
        self.tiers
            .iter()
            .find(|r| r.tier == tier)
            .expect("every tier has a row")
    }

    pub fn misaligned(&self) -> impl Iterator<Item = Tier> + '_ {
        self.tiers
            .iter()
            .filter(|r| r.status == AlignmentStatus::Misaligned)
            .map(|r| r.tier)
    }
}

/// Weight on the outcome advantage in an estimator's per-turn "total":
/// `A^I + A^O` for MT-GRPO, the hybrid advantage itself (`lambda`), pure
/// returns for GTPO and the outcome alone for GRPO.
fn outcome_weight(config: &EstimatorConfig) -> f64 {
    match config.kind {
        EstimatorKind::Grpo | EstimatorKind::MtGrpo => 1.0,
        EstimatorKind::Gtpo => 0.0,
        EstimatorKind::Hybrid => config.lambda,
    }
}

/// Conditional mean of the per-turn component and of the total per tier,
/// compared against `intended` (+1, 0 or -1 per tier; missing tiers are 0).
pub fn alignment_report(
    buffer: &ScoredBuffer,
    config: &EstimatorConfig,
    intended: &BTreeMap<Tier, i8>,
) -> Result<AlignmentReport> {
    let w = outcome_weight(config);
    let mut sums: BTreeMap<Tier, (usize, f64, f64)> = BTreeMap::new();
    for (gi, tensor) in buffer.tensors(config)? {
        for (i, k, _) in tensor.iter() {
            let tier = buffer.rewards[gi][i][k].tier;
            let a_i = tensor.turn_component.as_ref().map_or(0.0, |c| c[i][k]);
            let total = a_i + w * tensor.outcome[i];
            let e = sums.entry(tier).or_default();
            e.0 += 1;
            e.1 += a_i;
            e.2 += total;
        }
    }
    let mut rows = Vec::with_capacity(Tier::ALL.len());
    for tier in Tier::ALL {
        let want = intended.get(&tier).copied().unwrap_or(0);
        let row = match sums.get(&tier) {
            None => AlignmentRow {
                tier,
                turns: 0,
                mean_turn_component: 0.0,
                mean_total: 0.0,
                intended_sign: want,
                status: AlignmentStatus::NoData,
            },
            Some(&(n, s_i, s_t)) => {
                let mean_total = s_t / n as f64;
                let aligned = if want == 0 {
                    mean_total.abs() < config.dead_tol
                } else {
                    sign(mean_total) == want
                };
                AlignmentRow {
                    tier,
                    turns: n,
                    mean_turn_component: s_i / n as f64,
                    mean_total,
                    intended_sign: want,
                    status: if aligned {
                        AlignmentStatus::Aligned
                    } else {
                        AlignmentStatus::Misaligned
                    },
                }
            }
        };
        rows.push(row);
    }
    Ok(AlignmentReport {
        estimator: config.kind,
        mismatches: rows
            .iter()
            .filter(|r| r.status == AlignmentStatus::Misaligned)
            .count(),
        skipped_groups: buffer.skipped_groups(),
        tiers: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub config: EstimatorConfig,
    pub mismatches: usize,
    /// Correlation of each turn's advantage with its rollout's outcome.
    pub correlation: Correlation,
    pub dead_fraction: f64,
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorComparison {
    pub rows: Vec<EstimatorRow>,
}

impl EstimatorComparison {
    pub fn row(&self, kind: EstimatorKind) -> Option<&EstimatorRow> {
        self.rows.iter().find(|r| r.config.kind == kind)
    }
}

pub fn compare_estimators(
    buffer: &ScoredBuffer,
    configs: &[EstimatorConfig],
    intended: &BTreeMap<Tier, i8>,
) -> Result<EstimatorComparison> {
    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let report = alignment_report(buffer, config, intended)?;
        let (mut adv, mut out) = (Vec::new(), Vec::new());
        let (mut dead, mut total) = (0, 0);
        for (gi, tensor) in buffer.tensors(config)? {
            for (i, _, a) in tensor.iter() {
                adv.push(a);
                out.push(buffer.groups[gi].rollouts[i].outcome_f64());
            }
            let d = dead_turn_mask(&tensor, config.dead_tol);
            dead += d.dead;
            total += d.total;
        }
        let correlation = if adv.len() >= 2 {
            pearson(&adv, &out)?
        } else {
            Correlation::DEGENERATE
        };
        rows.push(EstimatorRow {
            config: *config,
            mismatches: report.mismatches,
            correlation,
            dead_fraction: if total == 0 {
                0.0
            } else {
                dead as f64 / total as f64
            },
            turns: total,
        });
    }
    Ok(EstimatorComparison { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetCategory {
    /// Gold-exact and soft-match turns.
    GoldenTarget,
    /// Read-only and state-change turns.
    Exploratory,
    Other,
}

impl TargetCategory {
    pub fn of(tier: Tier) -> Self {
        match tier {
            Tier::GoldExact | Tier::SoftMatch => TargetCategory::GoldenTarget,
            Tier::ReadOnly | Tier::StateChange => TargetCategory::Exploratory,
            _ => TargetCategory::Other,
        }
    }
}

/// Share of live-turn absolute advantage per target category.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientAllocation {
    pub estimator: EstimatorKind,
    pub golden_target_share: f64,
    pub exploratory_share: f64,
    pub other_share: f64,
    /// Set when no turn is live; shares are then reported as 0.
    pub undefined: bool,
    pub dead_fraction: f64,
    pub live_turns: usize,
    pub turns: usize,
}

pub fn gradient_allocation(
    buffer: &ScoredBuffer,
    config: &EstimatorConfig,
) -> Result<GradientAllocation> {
    let mut mass: BTreeMap<&'static str, f64> = BTreeMap::new();
    let (mut live, mut total) = (0, 0);
    for (gi, tensor) in buffer.tensors(config)? {
        for (i, k, a) in tensor.iter() {
            total += 1;
            if a.abs() <= config.dead_tol {
                continue;
            }
            live += 1;
            let key = match TargetCategory::of(buffer.rewards[gi][i][k].tier) {
                TargetCategory::GoldenTarget => "golden",
                TargetCategory::Exploratory => "exploratory",
                TargetCategory::Other => "other",
            };
            *mass.entry(key).or_default() += a.abs();
        }
    }
    let sum: f64 = mass.values().sum();
    let share = |k: &str| {
        if sum > 0.0 {
            mass.get(k).copied().unwrap_or(0.0) / sum
        } else {
            0.0
        }
    };
    Ok(GradientAllocation {
        estimator: config.kind,
        golden_target_share: share("golden"),
        exploratory_share: share("exploratory"),
        other_share: share("other"),
        undefined: sum == 0.0,
        dead_fraction: if total == 0 {
            0.0
        } else {
            (total - live) as f64 / total as f64
        },
        live_turns: live,
        turns: total,
    })
}

/// Correlation between each rollout's mean per-turn reward and its outcome.
pub fn reward_outcome_correlation(buffer: &ScoredBuffer) -> Result<Correlation> {
    let (mut means, mut outs) = (Vec::new(), Vec::new());
    for (r, rw) in buffer.rollouts() {
        let mean = if rw.is_empty() {
            0.0
        } else {
            rw.iter().map(|t| t.reward).sum::<f64>() / rw.len() as f64
        };
        means.push(mean);
        outs.push(r.outcome_f64());
    }
    if means.len() < 2 {
        return Ok(Correlation::DEGENERATE);
    }
    pearson(&means, &outs)
}

/// Summary counts for a buffer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferSummary {
    pub rollouts: usize,
    pub groups: usize,
    pub skipped_groups: usize,
    pub passing: usize,
    pub failing: usize,
    pub turns: usize,
}

impl BufferSummary {
    pub fn of(buffer: &ScoredBuffer) -> Self {
        let passing = buffer.rollouts().filter(|(r, _)| r.passed()).count();
        let rollouts = buffer.rollout_count();
        Self {
            rollouts,
            groups: buffer.groups.len(),
            skipped_groups: buffer.skipped_groups(),
            passing,
            failing: rollouts - passing,
            turns: buffer.rollouts().map(|(r, _)| r.turns.len()).sum(),
        }
    }
}

/// Everything `diagnose` reports for one buffer under one reward table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub buffer: BufferSummary,
    pub reward_table: RewardTable,
    pub estimator: EstimatorConfig,
    pub tier_stats: TierStats,
    pub alignment: AlignmentReport,
    pub comparison: EstimatorComparison,
    pub gradient: GradientAllocation,
    pub reward_outcome_correlation: Correlation,
}

/// Runs every report. The comparison covers all four estimators with the
/// remaining parameters taken from `config`.
pub fn diagnose(
    buffer: &ScoredBuffer,
    table: &RewardTable,
    config: &EstimatorConfig,
    intended: &BTreeMap<Tier, i8>,
) -> Result<DiagnosticReport> {
    let configs: Vec<EstimatorConfig> = EstimatorKind::ALL
        .into_iter()
        .map(|kind| EstimatorConfig { kind, ..*config })
        .collect();
    Ok(DiagnosticReport {
        buffer: BufferSummary::of(buffer),
        reward_table: table.clone(),
        estimator: *config,
        tier_stats: buffer.tier_stats()?,
        alignment: alignment_report(buffer, config, intended)?,
        comparison: compare_estimators(buffer, &configs, intended)?,
        gradient: gradient_allocation(buffer, config)?,
        reward_outcome_correlation: reward_outcome_correlation(buffer)?,
    })
}

impl fmt::Display for TierStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Discriminative power by tier ({} rollouts: {} pass, {} fail)",
            self.rollouts, self.passing, self.failing
        )?;
        if self.single_outcome {
            writeln!(
                f,
                "warning: only one outcome class present; gaps are not meaningful"
            )?;
        }
        writeln!(
            f,
            "{:<14} {:>8} {:>8} {:>8} {:>8}",
            "tier", "pass%", "fail%", "gap", "rho"
        )?;
        for r in &self.tiers {
            writeln!(
                f,
                "{:<14} {:>8.1} {:>8.1} {:>+8.1} {:>8}",
                r.tier.name(),
                r.pass_pct,
                r.fail_pct,
                r.gap,
                r.rho.to_string()
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for AlignmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Advantage direction by tier ({})", self.estimator)?;
        writeln!(
            f,
            "{:<14} {:>7} {:>10} {:>10} {:>8} {:>8}",
            "tier", "turns", "mean A^I", "mean tot", "intended", "status"
        )?;
        for r in &self.tiers {
            let status = match r.status {
                AlignmentStatus::Aligned => "ok",
                AlignmentStatus::Misaligned => "MISMATCH",
                AlignmentStatus::NoData => "no data",
            };
            if r.status == AlignmentStatus::NoData {
                writeln!(
                    f,
                    "{:<14} {:>7} {:>10} {:>10} {:>8} {:>8}",
                    r.tier.name(),
                    0,
                    "-",
                    "-",
                    sign_symbol(r.intended_sign),
                    status
                )?;
            } else {
                writeln!(
                    f,
                    "{:<14} {:>7} {:>+10.3} {:>+10.3} {:>8} {:>8}",
                    r.tier.name(),
                    r.turns,
                    r.mean_turn_component,
                    r.mean_total,
                    sign_symbol(r.intended_sign),
                    status
                )?;
            }
        }
        writeln!(f, "mismatches: {}", self.mismatches)
    }
}

impl fmt::Display for EstimatorComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Estimator comparison")?;
        writeln!(
            f,
            "{:<10} {:>10} {:>12} {:>8}",
            "estimator", "mismatches", "corr(adv,o)", "dead%"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>10} {:>12} {:>8.1}",
                r.config.kind.name(),
                r.mismatches,
                r.correlation.to_string(),
                100.0 * r.dead_fraction
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for GradientAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Gradient allocation ({})", self.estimator)?;
        if self.undefined {
            writeln!(f, "no live turns; shares undefined")?;
        }
        writeln!(f, "{:<22} {:>8}", "target", "share%")?;
        writeln!(
            f,
            "{:<22} {:>8.1}",
            "gold + soft",
            100.0 * self.golden_target_share
        )?;
        writeln!(
            f,
            "{:<22} {:>8.1}",
            "read + state",
            100.0 * self.exploratory_share
        )?;
        writeln!(f, "{:<22} {:>8.1}", "other", 100.0 * self.other_share)?;
        writeln!(
            f,
            "dead turns: {:.1}% of {}",
            100.0 * self.dead_fraction,
            self.turns
        )
    }
}

impl fmt::Display for DiagnosticReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.buffer;
        writeln!(
            f,
            "{} rollouts in {} groups ({} skipped with fewer than 2 rollouts), {} turns",
            b.rollouts, b.groups, b.skipped_groups, b.turns
        )?;
        writeln!(
            f,
            "reward/outcome correlation: {}",
            self.reward_outcome_correlation
        )?;
        writeln!(f)?;
        write!(f, "{}", self.tier_stats)?;
        writeln!(f)?;
        write!(f, "{}", self.alignment)?;
        writeln!(f)?;
        write!(f, "{}", self.comparison)?;
        writeln!(f)?;
        write!(f, "{}", self.gradient)
    }
}
