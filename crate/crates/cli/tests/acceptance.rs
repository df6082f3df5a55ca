//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.
//!
//! Every criterion is checked at its stated tolerance and runtime bound.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde_json::Value;
use tempfile::tempdir;
use turncal::advantage::{self, EstimatorConfig, EstimatorKind};
use turncal::argmatch::deep_equal;
use turncal::diagnostics::{self, AlignmentStatus, ScoredBuffer};
use turncal::rollout::{group_rollouts, parse_str, ArgValue, Rollout, RolloutGroup, Turn};
use turncal::synthenv::{generate_buffer, PolicyParams};
use turncal::tiers::{RewardTable, Tier, TierReward, ToolRegistry};

use common::{code, fixture, stderr, turncal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Runs one criterion, applying its runtime bound if it has one.
fn run(id: &str, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let mut v = f();
    let took = start.elapsed();
    if let Some(limit) = limit {
        if took >= limit {
            v.pass = false;
            v.detail = format!("{}; runtime {took:?} exceeds {limit:?}", v.detail);
        }
    }
    println!(
        "{} {id:<4} {name}: {} [{:.0?}]",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        took
    );
    v.pass
}

struct Rng(SplitMix64);

impl Rng {
    fn new(seed: u64) -> Self {
        Rng(SplitMix64::seed_from_u64(seed))
    }

    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    fn below(&mut self, n: usize) -> usize {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }

    fn bit(&mut self) -> bool {
        self.0.next_u64() >> 63 == 1
    }
}

// ---------------------------------------------------------------- C1

const EQUAL_PAIRS: &[(&str, &str)] = &[
    // key order
    (r#"{"a":1,"b":2}"#, r#"{"b":2,"a":1}"#),
    (
        r#"{"reservation_id":"QX7T2M","cabin":"economy"}"#,
        r#"{"cabin":"economy","reservation_id":"QX7T2M"}"#,
    ),
    (
        r#"{"x":{"p":1,"q":2},"y":3}"#,
        r#"{"y":3,"x":{"q":2,"p":1}}"#,
    ),
    (
        r#"{"user":{"id":"mia_2041","tier":"gold"},"n":2}"#,
        r#"{"n":2,"user":{"tier":"gold","id":"mia_2041"}}"#,
    ),
    (r#"{"a":[1,2],"b":true}"#, r#"{"b":true,"a":[1,2]}"#),
    (
        r#"{"origin":"JFK","destination":"MCO","date":"2024-05-01"}"#,
        r#"{"date":"2024-05-01","destination":"MCO","origin":"JFK"}"#,
    ),
    (
        r#"{"a":{"b":{"c":1,"d":2}}}"#,
        r#"{"a":{"b":{"d":2,"c":1}}}"#,
    ),
    (
        r#"{"z":1,"y":2,"x":3,"w":4}"#,
        r#"{"w":4,"x":3,"y":2,"z":1}"#,
    ),
    (
        r#"{"items":[{"a":1,"b":2}]}"#,
        r#"{"items":[{"b":2,"a":1}]}"#,
    ),
    (r#"{"flag":false,"count":0}"#, r#"{"count":0,"flag":false}"#),
    // numeric strings
    (r#"{"n":"5"}"#, r#"{"n":5}"#),
    (r#"{"passengers":"2"}"#, r#"{"passengers":2}"#),
    (r#"{"price":"12.50"}"#, r#"{"price":12.5}"#),
    (r#"{"x":"-3"}"#, r#"{"x":-3}"#),
    (r#"{"x":"0"}"#, r#"{"x":0}"#),
    (r#"{"x":"1.0"}"#, r#"{"x":1}"#),
    (r#"{"x":3.0}"#, r#"{"x":3}"#),
    (r#"{"x":"+7"}"#, r#"{"x":7}"#),
    (r#"{"ids":["1","2"]}"#, r#"{"ids":[1,2]}"#),
    (r#"{"a":{"b":"100"}}"#, r#"{"a":{"b":100}}"#),
    (r#"{"amount":"0.25"}"#, r#"{"amount":0.25}"#),
    (r#"["3",4]"#, r#"[3,"4"]"#),
    (r#"{"a":1.5}"#, r#"{"a":"1.50"}"#),
    (r#"42"#, r#""42""#),
    // empty values
    (r#"{"a":1,"b":null}"#, r#"{"a":1}"#),
    (r#"{"a":1,"b":""}"#, r#"{"a":1}"#),
    (r#"{"a":1,"b":[]}"#, r#"{"a":1}"#),
    (r#"{"a":1,"b":{}}"#, r#"{"a":1}"#),
    (r#"{"a":{"b":null}}"#, r#"{}"#),
    (r#"{"a":[null,1]}"#, r#"{"a":[1]}"#),
    (r#"{"a":["",2]}"#, r#"{"a":[2]}"#),
    (r#"{"q":"x","opts":{"note":"","tags":[]}}"#, r#"{"q":"x"}"#),
    (r#"{}"#, r#"{"x":null}"#),
    (r#"{"a":[[],{},1]}"#, r#"{"a":[1]}"#),
    (r#"{"a":[{"b":null}]}"#, r#"{}"#),
    (
        r#"{"cabin":"business","note":null,"extra":""}"#,
        r#"{"cabin":"business"}"#,
    ),
    // lists of maps
    (r#"[{"id":1},{"id":2}]"#, r#"[{"id":2},{"id":1}]"#),
    (
        r#"{"pax":[{"name":"A","age":3},{"name":"B","age":5}]}"#,
        r#"{"pax":[{"name":"B","age":5},{"name":"A","age":3}]}"#,
    ),
    (
        r#"{"legs":[{"o":"JFK","d":"MCO"},{"o":"MCO","d":"JFK"}]}"#,
        r#"{"legs":[{"o":"MCO","d":"JFK"},{"o":"JFK","d":"MCO"}]}"#,
    ),
    (
        r#"[{"a":1},{"a":2},{"a":3}]"#,
        r#"[{"a":3},{"a":1},{"a":2}]"#,
    ),
    (r#"{"x":[{"k":"1"},{"k":2}]}"#, r#"{"x":[{"k":2},{"k":1}]}"#),
    (r#"[{"a":1,"b":null},{"c":2}]"#, r#"[{"c":2},{"a":1}]"#),
    (r#"[{"id":"b"},{"id":"a"}]"#, r#"[{"id":"a"},{"id":"b"}]"#),
    (
        r#"{"outer":[{"inner":[{"v":2},{"v":1}]}]}"#,
        r#"{"outer":[{"inner":[{"v":1},{"v":2}]}]}"#,
    ),
    (
        r#"[{"p":{"q":1}},{"p":{"q":0}}]"#,
        r#"[{"p":{"q":0}},{"p":{"q":1}}]"#,
    ),
    (
        r#"{"passengers":[{"first":"Mia","last":"Ng","dob":"1990-01-01"},{"first":"Ola","last":"Ek","dob":"1985-02-02"}]}"#,
        r#"{"passengers":[{"dob":"1985-02-02","last":"Ek","first":"Ola"},{"last":"Ng","first":"Mia","dob":"1990-01-01"}]}"#,
    ),
    // mixed and identical
    (
        r#"{"a":"1","b":[{"y":"2"},{"x":null,"y":"1"}]}"#,
        r#"{"b":[{"y":1},{"y":2}],"a":1}"#,
    ),
    (r#""abc""#, r#""abc""#),
    (r#"true"#, r#"true"#),
    (r#"null"#, r#"null"#),
    (r#"[1,2,3]"#, r#"[1,2,3]"#),
    (r#"{"user_id":"mia_2041"}"#, r#"{"user_id":"mia_2041"}"#),
];

const DIFFERENT_PAIRS: &[(&str, &str)] = &[
    (r#"{"a":1}"#, r#"{"a":2}"#),
    (
        r#"{"reservation_id":"QX7T2M"}"#,
        r#"{"reservation_id":"HL4K9P"}"#,
    ),
    (r#"[1,2]"#, r#"[2,1]"#),
    (r#"{"a":"007"}"#, r#"{"a":7}"#),
    (r#"{"a":"abc"}"#, r#"{"a":"ABC"}"#),
    (r#"{"a":true}"#, r#"{"a":1}"#),
    (r#"{"a":false}"#, r#"{"a":0}"#),
    (r#"{"a":0}"#, r#"{"a":null}"#),
    (r#"{"a":false}"#, r#"{}"#),
    (r#"{"a":1}"#, r#"{"a":1,"b":2}"#),
    (r#"[{"id":1}]"#, r#"[{"id":1},{"id":2}]"#),
    (r#"{"a":"1e3"}"#, r#"{"a":1000}"#),
    (r#"{"a":" 5"}"#, r#"{"a":5}"#),
    (r#"{"a":[1,[2]]}"#, r#"{"a":[1,2]}"#),
    (r#"{"a":{"b":1}}"#, r#"{"a":{"c":1}}"#),
    (r#"{"cabin":"economy"}"#, r#"{"cabin":"business"}"#),
    (r#"[{"a":1},{"b":2}]"#, r#"[{"a":1},{"b":3}]"#),
    (r#"{"a":1.5}"#, r#"{"a":1.6}"#),
    (r#""x""#, r#"["x"]"#),
    (r#"{"a":"1."}"#, r#"{"a":1}"#),
    (r#"{"a":"NaN"}"#, r#"{"a":"nan"}"#),
    (r#"{"a":[1,2,3]}"#, r#"{"a":[1,2]}"#),
    (
        r#"{"origin":"JFK","destination":"MCO"}"#,
        r#"{"origin":"MCO","destination":"JFK"}"#,
    ),
];

/// `[+-]?(0|[1-9][0-9]*)(\.[0-9]+)?`
fn is_numeric_text(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = usize::from(matches!(b.first(), Some(b'+' | b'-')));
    let start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let int_len = i - start;
    if int_len == 0 || (int_len > 1 && b[start] == b'0') {
        return false;
    }
    if i == b.len() {
        return true;
    }
    if b[i] != b'.' {
        return false;
    }
    let frac = &b[i + 1..];
    !frac.is_empty() && frac.iter().all(u8::is_ascii_digit)
}

fn is_empty_json(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::String(s) => s.is_empty(),
        Value::Array(a) => a.is_empty(),
        Value::Object(o) => o.is_empty(),
        _ => false,
    }
}

/// Canonical form: numbers as f64, numeric strings as numbers, empties
/// dropped, lists of objects sorted by their serialized text.
fn canon(v: &Value) -> Value {
    let num = |x: f64| Value::from(x);
    match v {
        Value::String(s) if is_numeric_text(s) => num(s.parse::<f64>().unwrap()),
        Value::Number(n) => num(n.as_f64().unwrap()),
        Value::Array(items) => {
            let mut out: Vec<Value> = items
                .iter()
                .map(canon)
                .filter(|x| !is_empty_json(x))
                .collect();
            if !out.is_empty() && out.iter().all(Value::is_object) {
                out.sort_by_key(|x| x.to_string());
            }
            Value::Array(out)
        }
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, x)| (k.clone(), canon(x)))
                .filter(|(_, x)| !is_empty_json(x))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn c1() -> Verdict {
    let mut disagreements = Vec::new();
    let mut check = |pairs: &[(&str, &str)], expect: bool| {
        for (a, b) in pairs {
            let oracle = canon(&serde_json::from_str(a).unwrap())
                == canon(&serde_json::from_str(b).unwrap());
            let got = deep_equal(
                &a.parse::<ArgValue>().unwrap(),
                &b.parse::<ArgValue>().unwrap(),
            );
            if oracle != expect || got != oracle {
                disagreements.push(format!("{a} vs {b}: oracle {oracle}, deep_equal {got}"));
            }
        }
    };
    check(EQUAL_PAIRS, true);
    check(DIFFERENT_PAIRS, false);
    let sized = EQUAL_PAIRS.len() >= 50 && DIFFERENT_PAIRS.len() >= 20;
    verdict(
        sized && disagreements.is_empty(),
        format!(
            "{} equal and {} different pairs, {} disagreements{}",
            EQUAL_PAIRS.len(),
            DIFFERENT_PAIRS.len(),
            disagreements.len(),
            disagreements
                .first()
                .map(|d| format!(" (first: {d})"))
                .unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- C2

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn c2() -> Verdict {
    let z = advantage::group_normalize(&[1.0, 0.0, 0.0, 0.0], 1e-4);
    let stated = [1.7314, -0.5771, -0.5771, -0.5771];
    let literal_err = z
        .iter()
        .zip(stated)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut rng = Rng::new(2);
    let mut worst = 0.0f64;
    let mut vectors = 0;
    while vectors < 1000 {
        let n = 2 + rng.below(49);
        let xs: Vec<f64> = (0..n).map(|_| rng.range(-10.0, 10.0)).collect();
        if pop_std(&xs) == 0.0 {
            continue;
        }
        vectors += 1;
        let z = advantage::group_normalize(&xs, 0.0);
        worst = worst.max(mean(&z).abs()).max((pop_std(&z) - 1.0).abs());
    }
    let literal_ok = literal_err <= 1e-4;
    verdict(
        literal_ok && worst <= 1e-9,
        format!(
            "[1,0,0,0] -> [{:.6}, {:.6}, ..], max error vs stated [1.7314, -0.5771] = {literal_err:.2e} (tol 1e-4{}); \
             {vectors} random vectors, worst mean/std deviation {worst:.1e} (tol 1e-9)",
            z[0],
            z[1],
            if literal_ok { "" } else { ", exceeded" }
        ),
    )
}

// ---------------------------------------------------------------- C3, C4

fn message_group(lengths: &[usize], outcomes: &[u8]) -> RolloutGroup {
    let rollouts: Vec<Rollout> = lengths
        .iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (&len, &outcome))| Rollout {
            rollout_id: format!("r{i}"),
            group_id: "g".into(),
            task_id: "t".into(),
            turns: (0..len).map(|k| Turn::message(k, "ok")).collect(),
            golden_actions: Vec::new(),
            outcome,
        })
        .collect();
    group_rollouts(&rollouts).unwrap().remove(0)
}

fn c3() -> Verdict {
    let mut rng = Rng::new(3);
    let mut failures = 0;
    for _ in 0..100 {
        let n = 2 + rng.below(7);
        let lengths: Vec<usize> = (0..n).map(|_| 1 + rng.below(8)).collect();
        let outcomes: Vec<u8> = (0..n).map(|_| rng.bit() as u8).collect();
        let rewards: Vec<Vec<f64>> = lengths
            .iter()
            .map(|&l| (0..l).map(|_| rng.range(-1.0, 1.0)).collect())
            .collect();
        let zeros: Vec<Vec<f64>> = lengths.iter().map(|&l| vec![0.0; l]).collect();
        let g = message_group(&lengths, &outcomes);
        let gamma = rng.unit();
        let eps = 1e-4;

        let mt = advantage::mt_grpo_advantages(&g, &zeros, eps).unwrap();
        let grpo = advantage::grpo_advantages(&g, eps).unwrap();
        let cfg = EstimatorConfig {
            kind: EstimatorKind::Hybrid,
            gamma,
            lambda: 0.0,
            epsilon: eps,
            ..EstimatorConfig::default()
        };
        let hybrid = advantage::hybrid_advantages(&g, &rewards, &cfg).unwrap();
        let gtpo = advantage::gtpo_advantages(&g, &rewards, gamma, eps).unwrap();
        failures += usize::from(mt.advantages != grpo.advantages)
            + usize::from(hybrid.advantages != gtpo.advantages);
    }
    verdict(
        failures == 0,
        format!("100 random groups, {failures} inexact comparisons (mt_grpo vs grpo, hybrid lambda=0 vs gtpo)"),
    )
}

fn c4() -> Verdict {
    let (gamma, lambda): (f64, f64) = (0.9, 0.3);
    let rewards = vec![vec![0.3, 1.0], vec![0.3, 0.0]];
    let outcomes = [1.0, 0.0];

    // Independent evaluation: returns by explicit sum, then per-position
    // standardization, then the damped outcome term.
    let returns: Vec<Vec<f64>> = rewards
        .iter()
        .zip(outcomes)
        .map(|(r, o)| {
            let k_len = r.len();
            (0..k_len)
                .map(|k| {
                    let mut g = 0.0;
                    for (l, &rl) in r.iter().enumerate().skip(k) {
                        g += gamma.powi((l - k) as i32) * rl;
                    }
                    g + gamma.powi((k_len - k) as i32) * o
                })
                .collect()
        })
        .collect();
    let standardize = |xs: &[f64]| -> Vec<f64> {
        let m = mean(xs);
        let s = pop_std(xs);
        xs.iter()
            .map(|x| if s == 0.0 { 0.0 } else { (x - m) / s })
            .collect()
    };
    let a_o = standardize(&outcomes);
    let mut expected = vec![vec![0.0; 2]; 2];
    for k in 0..2 {
        let col: Vec<f64> = returns.iter().map(|r| r[k]).collect();
        for (i, z) in standardize(&col).into_iter().enumerate() {
            expected[i][k] = z + lambda * a_o[i];
        }
    }

    let g = message_group(&[2, 2], &[1, 0]);
    let cfg = EstimatorConfig {
        kind: EstimatorKind::Hybrid,
        gamma,
        lambda,
        epsilon: 0.0,
        ..EstimatorConfig::default()
    };
    let got = advantage::hybrid_advantages(&g, &rewards, &cfg)
        .unwrap()
        .advantages;
    let err = got
        .iter()
        .flatten()
        .zip(expected.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    verdict(
        err <= 1e-9,
        format!("got {got:?}, oracle {expected:?}, max error {err:.1e} (tol 1e-9)"),
    )
}

// ---------------------------------------------------------------- C5, C6, C7

fn scored(rollouts: &[Rollout], table: &RewardTable) -> ScoredBuffer {
    ScoredBuffer::score(
        group_rollouts(rollouts).unwrap(),
        table,
        &ToolRegistry::airline(),
    )
    .unwrap()
}

fn c5() -> Verdict {
    let rollouts = parse_str(&fs::read_to_string(fixture()).unwrap()).unwrap();
    let table = RewardTable::naive();
    let buffer = scored(&rollouts, &table);
    let intended = table.signs();
    let mt = diagnostics::alignment_report(
        &buffer,
        &EstimatorConfig::with_kind(EstimatorKind::MtGrpo),
        &intended,
    )
    .unwrap();
    let hybrid_cfg = EstimatorConfig {
        kind: EstimatorKind::Hybrid,
        gamma: 0.9,
        lambda: 0.3,
        ..EstimatorConfig::default()
    };
    let hy = diagnostics::alignment_report(&buffer, &hybrid_cfg, &intended).unwrap();
    let flipped: Vec<String> = mt
        .tiers
        .iter()
        .filter(|r| {
            r.status == AlignmentStatus::Misaligned
                && r.mean_turn_component > 0.0
                && r.mean_total < 0.0
        })
        .map(|r| {
            format!(
                "{} (A^I {:+.3}, total {:+.3})",
                r.tier, r.mean_turn_component, r.mean_total
            )
        })
        .collect();
    verdict(
        mt.mismatches >= 1 && !flipped.is_empty() && hy.mismatches == 0,
        format!(
            "mt_grpo {} mismatch(es), flipped: {}; hybrid {} mismatch(es)",
            mt.mismatches,
            if flipped.is_empty() {
                "none".into()
            } else {
                flipped.join(", ")
            },
            hy.mismatches
        ),
    )
}

fn c6() -> Verdict {
    let rollouts = generate_buffer(100, 4, &PolicyParams::patterned(), 7).unwrap();
    let sparse = scored(&rollouts, &RewardTable::sparse());
    let dense = sparse.reprice(&RewardTable::naive());
    let mixed = sparse
        .groups
        .iter()
        .filter(|g| {
            g.rollouts.iter().any(Rollout::passed) && !g.rollouts.iter().all(Rollout::passed)
        })
        .count();
    let cfg = EstimatorConfig::with_kind(EstimatorKind::MtGrpo);
    let s = diagnostics::gradient_allocation(&sparse, &cfg).unwrap();
    let d = diagnostics::gradient_allocation(&dense, &cfg).unwrap();
    let dead_ok = s.dead_fraction > d.dead_fraction;
    let sparse_share_ok = !s.undefined && s.exploratory_share == 0.0;
    let dense_share_ok = !d.undefined && d.exploratory_share > 0.0;
    verdict(
        mixed >= 50 && dead_ok && sparse_share_ok && dense_share_ok,
        format!(
            "{mixed} mixed-outcome groups of 4; dead fraction sparse {:.4} vs dense {:.4} ({}); \
             read+state share sparse {:.4} (required 0.0: {}), dense {:.4} (required > 0: {})",
            s.dead_fraction,
            d.dead_fraction,
            if dead_ok { "ok" } else { "not higher" },
            s.exploratory_share,
            if sparse_share_ok { "ok" } else { "not met" },
            d.exploratory_share,
            if dense_share_ok { "ok" } else { "not met" },
        ),
    )
}

fn c7() -> Verdict {
    let rollouts = generate_buffer(500, 4, &PolicyParams::patterned(), 7).unwrap();
    let stats = scored(&rollouts, &RewardTable::naive())
        .tier_stats()
        .unwrap();
    let gap = |t| stats.row(t).gap;
    let (gold, read, error, state) = (
        gap(Tier::GoldExact),
        gap(Tier::ReadOnly),
        gap(Tier::Error),
        gap(Tier::StateChange),
    );
    verdict(
        stats.rollouts >= 200 && gold > 30.0 && read.abs() < 5.0 && error < -30.0 && state < 0.0,
        format!(
            "{} rollouts; gaps gold {gold:+.1}pp, read_only {read:+.1}pp, error {error:+.1}pp, state_change {state:+.1}pp",
            stats.rollouts
        ),
    )
}

// ---------------------------------------------------------------- C8

fn c8() -> Verdict {
    let dir = tempdir().unwrap();
    let p = dir.path();
    let out = turncal(
        &["calibrate", "-o", "table.toml", "--trace", "trace.json"],
        p,
    );
    if code(&out) != 0 {
        return verdict(
            false,
            format!("exit code {}: {}", code(&out), stderr(&out).trim()),
        );
    }
    let trace: Value =
        serde_json::from_str(&fs::read_to_string(p.join("trace.json")).unwrap()).unwrap();
    let iterations = trace["iterations"].as_array().unwrap().len();
    let doc: toml::Table = fs::read_to_string(p.join("table.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let table: RewardTable = doc["rewards"].clone().try_into().unwrap();
    let value = |t| match table.get(t) {
        TierReward::Constant(v) => v,
        TierReward::ScorePassthrough => f64::NAN,
    };
    let (gold, read, state, error) = (
        value(Tier::GoldExact),
        value(Tier::ReadOnly),
        value(Tier::StateChange),
        value(Tier::Error),
    );
    verdict(
        trace["converged"] == true && iterations <= 3 && gold == 1.0 && read == 0.0 && state < 0.0 && error < 0.0,
        format!("exit 0, {iterations} iteration(s); gold {gold}, read_only {read}, state_change {state:.3}, error {error:.3}"),
    )
}

// ---------------------------------------------------------------- C9

/// Pearson correlation by explicit sums; `None` when either side is constant.
fn brute_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn c9() -> Verdict {
    let mut rng = Rng::new(9);
    let mut worst = 0.0f64;
    let mut flag_mismatch = 0;
    let mut degenerate = 0;
    for _ in 0..1000 {
        let n = 2 + rng.below(99);
        let bias = rng.unit();
        let x: Vec<bool> = (0..n).map(|_| rng.unit() < bias).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.bit()).collect();
        let f = |v: &[bool]| {
            v.iter()
                .map(|&b| f64::from(u8::from(b)))
                .collect::<Vec<_>>()
        };
        let got = diagnostics::point_biserial(&x, &y).unwrap();
        match brute_pearson(&f(&x), &f(&y)) {
            Some(r) => worst = worst.max((got.value - r).abs()),
            None => {
                degenerate += 1;
                flag_mismatch += usize::from(!got.zero_variance);
            }
        }
    }
    verdict(
        worst <= 1e-12 && flag_mismatch == 0,
        format!("1000 pairs ({degenerate} constant), max deviation {worst:.1e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------- C10

/// Runs every stage; artifacts and exit codes are returned for comparison.
/// Calibration may legitimately stop unconverged (exit 3).
fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let steps: [&[&str]; 9] = [
        &[
            "simulate",
            "--tasks",
            "50",
            "--group-size",
            "4",
            "--seed",
            "10",
            "-o",
            "buf.jsonl",
        ],
        &[
            "simulate",
            "--tasks",
            "50",
            "--seed",
            "11",
            "-o",
            "bufs/1.jsonl",
        ],
        &[
            "simulate",
            "--tasks",
            "50",
            "--seed",
            "12",
            "-o",
            "bufs/2.jsonl",
        ],
        &["classify", "-i", "buf.jsonl", "-o", "tiers.jsonl"],
        &[
            "advantages",
            "-i",
            "buf.jsonl",
            "--estimator",
            "hybrid",
            "-o",
            "adv.jsonl",
        ],
        &[
            "diagnose",
            "-i",
            "buf.jsonl",
            "--format",
            "json",
            "-o",
            "report.json",
        ],
        &["diagnose", "-i", "buf.jsonl", "-o", "report.txt"],
        &[
            "calibrate",
            "--buffer-dir",
            "bufs",
            "-o",
            "table.toml",
            "--trace",
            "trace.json",
        ],
        &[
            "calibrate",
            "--tasks",
            "50",
            "--seed",
            "10",
            "-o",
            "table_gen.toml",
            "--trace",
            "trace_gen.json",
        ],
    ];
    fs::create_dir(dir.join("bufs")).unwrap();
    let mut artifacts = BTreeMap::new();
    for (i, args) in steps.iter().enumerate() {
        let out = turncal(args, dir);
        let c = code(&out);
        if !(c == 0 || (args[0] == "calibrate" && c == 3)) {
            return Err(format!("{args:?} exited {c}: {}", stderr(&out).trim()));
        }
        artifacts.insert(format!("step {i} exit code"), c.to_string().into_bytes());
        artifacts.insert(format!("step {i} stdout"), out.stdout);
        if i == 0 {
            fs::copy(dir.join("buf.jsonl"), dir.join("bufs/0.jsonl")).unwrap();
        }
    }
    for f in [
        "buf.jsonl",
        "bufs/1.jsonl",
        "tiers.jsonl",
        "adv.jsonl",
        "report.json",
        "report.txt",
        "table.toml",
        "trace.json",
        "table_gen.toml",
        "trace_gen.json",
    ] {
        artifacts.insert(f.to_owned(), fs::read(dir.join(f)).unwrap());
    }
    Ok(artifacts)
}

fn c10() -> Verdict {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&String> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
            verdict(
                differing.is_empty(),
                format!("{} artifacts compared, differing: {differing:?}", x.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, e),
    }
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run(
            "C1",
            "deep_equal corpus vs canonical oracle",
            Some(secs(1)),
            c1,
        ),
        run(
            "C2",
            "group_normalize values and standardization",
            Some(secs(1)),
            c2,
        ),
        run("C3", "estimator equivalences", Some(secs(5)), c3),
        run("C4", "hybrid advantages vs step-by-step oracle", None, c4),
        run("C5", "misalignment reproduction", Some(secs(10)), c5),
        run("C6", "dead turns and gradient focusing", None, c6),
        run("C7", "discriminative gap directions", None, c7),
        run("C8", "calibration convergence via CLI", Some(secs(60)), c8),
        run("C9", "point-biserial vs brute-force Pearson", None, c9),
        run("C10", "end-to-end determinism", None, c10),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
