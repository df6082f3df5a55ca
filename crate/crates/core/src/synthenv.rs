//! A seeded micro-airline environment with a scripted agent.
//!
//! A [`Task`] is a small world (one customer, a few reservations, some
//! flights) plus the golden actions that turn it into a target state: look up
//! a reservation, then cancel it or change its cabin, possibly followed by a
//! second change to another reservation. [`run_episode`] plays a scripted
//! agent through the task, corrupting arguments and flagging errors at
//! configurable rates, and scores the rollout by comparing the final world to
//! the target.
//!
//! # Turn layout
//!
//! Every rollout of a task follows the same turn layout: a greeting, then for
//! each golden action an optional extra lookup followed by the action itself,
//! then a closing message. The layout is drawn from the task's own stream, so
//! rollouts in a group differ only in what happens inside a turn (arguments
//! and error flags), except when `p_duplicate` inserts repeated lookups.
//!
//! # Randomness
//!
//! All draws come from SplitMix64 (`rand_xoshiro::SplitMix64`, state seeded
//! directly with the `u64` seed). A draw in `[0, 1)` is `(x >> 11) * 2^-53`;
//! an index below `n` is `(x * n) >> 64` in 128-bit arithmetic. Child seeds
//! are `SplitMix64(parent + (stream + 1) * 0x9E3779B97F4A7C15).next()`.
//! Buffers are therefore reproducible from the seed by any implementation
//! following these rules.

use std::collections::BTreeMap;

use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{ArgValue, GoldenAction, Rollout, ToolCall, Turn};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const AIRPORTS: [&str; 10] = [
    "ATL", "BOS", "DFW", "JFK", "LAX", "MCO", "MIA", "ORD", "SEA", "SFO",
];
const CABINS: [&str; 3] = ["basic_economy", "economy", "business"];
const FIRST_NAMES: [&str; 8] = [
    "ava", "liam", "mia", "noah", "omar", "yara", "ivan", "sofia",
];

const GREETING: &str = "Hi, I can help with your reservation.";
const CLOSING: &str = "Your request has been handled. Anything else?";

/// Stream ids for child seeds.
const LAYOUT_STREAM: u64 = 0x4C41_594F_5554;

/// Seed of child stream `stream` of `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    SplitMix64::seed_from_u64(
        parent.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
    )
    .next_u64()
}

struct Draw(SplitMix64);

impl Draw {
    fn new(seed: u64) -> Self {
        Draw(SplitMix64::seed_from_u64(seed))
    }

    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    fn below(&mut self, n: usize) -> usize {
        ((u128::from(self.0.next_u64()) * n as u128) >> 64) as usize
    }

    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }

    fn take<T>(&mut self, xs: &mut Vec<T>) -> T {
        let i = self.below(xs.len());
        xs.remove(i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub name: String,
    pub membership: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub user_id: String,
    pub origin: String,
    pub destination: String,
    pub cabin: String,
    pub passengers: u32,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flight {
    pub origin: String,
    pub destination: String,
    pub flight_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MicroWorld {
    pub users: BTreeMap<String, User>,
    pub reservations: BTreeMap<String, Reservation>,
    pub flights: Vec<Flight>,
}

/// Why a tool call failed against the world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallFailure {
    UnknownTool,
    MissingArgument(&'static str),
    NotFound(String),
    AlreadyCancelled(String),
}

impl MicroWorld {
    /// Every reservation's route uses airports that some flight serves.
    pub fn is_consistent(&self) -> bool {
        let served = |a: &str| {
            self.flights
                .iter()
                .any(|f| f.origin == a || f.destination == a)
        };
        self.reservations.values().all(|r| {
            served(&r.origin) && served(&r.destination) && self.users.contains_key(&r.user_id)
        })
    }

    fn reservation_arg(args: &ArgValue) -> std::result::Result<&str, CallFailure> {
        args.as_map()
            .and_then(|m| m.get("reservation_id"))
            .and_then(ArgValue::as_str)
            .ok_or(CallFailure::MissingArgument("reservation_id"))
    }

    /// Executes a call. Reads leave the world untouched; a failed call changes
    /// nothing.
    pub fn execute(&mut self, call: &ToolCall) -> std::result::Result<(), CallFailure> {
        let args = &call.args;
        let str_arg = |key: &'static str| {
            args.as_map()
                .and_then(|m| m.get(key))
                .and_then(ArgValue::as_str)
                .ok_or(CallFailure::MissingArgument(key))
        };
        match call.name.as_str() {
            "get_user_details" => {
                let id = str_arg("user_id")?;
                self.users
                    .get(id)
                    .map(|_| ())
                    .ok_or_else(|| CallFailure::NotFound(id.to_owned()))
            }
            "get_reservation_details" => {
                let id = Self::reservation_arg(args)?;
                self.reservations
                    .get(id)
                    .map(|_| ())
                    .ok_or_else(|| CallFailure::NotFound(id.to_owned()))
            }
            "search_direct_flight" => {
                str_arg("origin")?;
                str_arg("destination")?;
                Ok(())
            }
            "list_all_airports" => Ok(()),
            "cancel_reservation" => {
                let id = Self::reservation_arg(args)?;
                let r = self
                    .reservations
                    .get_mut(id)
                    .ok_or_else(|| CallFailure::NotFound(id.to_owned()))?;
                if r.status == "cancelled" {
                    return Err(CallFailure::AlreadyCancelled(id.to_owned()));
                }
                r.status = "cancelled".into();
                Ok(())
            }
            "update_reservation_cabin" => {
                let id = Self::reservation_arg(args)?;
                let cabin = str_arg("cabin")?.to_owned();
                let r = self
                    .reservations
                    .get_mut(id)
                    .ok_or_else(|| CallFailure::NotFound(id.to_owned()))?;
                if r.status == "cancelled" {
                    return Err(CallFailure::AlreadyCancelled(id.to_owned()));
                }
                r.cabin = cabin;
                Ok(())
            }
            _ => Err(CallFailure::UnknownTool),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub seed: u64,
    pub user_id: String,
    pub initial: MicroWorld,
    /// A lookup of the first target reservation, then one or two changes.
    pub golden_actions: Vec<GoldenAction>,
    pub target: MicroWorld,
}

impl Task {
    /// Ids of reservations that some golden state change touches.
    fn targeted(&self) -> Vec<&str> {
        self.golden_actions[1..]
            .iter()
            .filter_map(|g| MicroWorld::reservation_arg(&g.args).ok())
            .collect()
    }
}

fn obj(entries: &[(&str, &str)]) -> ArgValue {
    ArgValue::map(entries.iter().map(|(k, v)| (*k, ArgValue::from(*v))))
}

/// Builds the task for `seed`.
pub fn build_task(seed: u64) -> Task {
    let mut d = Draw::new(seed);
    let task_id = format!("task-{seed:016x}");
    let user_id = format!("{}_{}", d.pick(&FIRST_NAMES), 1000 + d.below(9000));
    let mut initial = MicroWorld::default();
    initial.users.insert(
        user_id.clone(),
        User {
            name: user_id.split('_').next().unwrap_or_default().to_owned(),
            membership: d.pick(&["regular", "silver", "gold"]).to_string(),
        },
    );

    let n_res = 2 + d.below(3);
    let mut ids = Vec::with_capacity(n_res);
    while ids.len() < n_res {
        let id: String = (0..6)
            .map(|_| char::from(b"ABCDEFGHJKLMNPQRSTUVWXY3456789"[d.below(30)]))
            .collect();
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    for (n, id) in ids.iter().enumerate() {
        let origin = *d.pick(&AIRPORTS);
        let mut destination = *d.pick(&AIRPORTS);
        while destination == origin {
            destination = *d.pick(&AIRPORTS);
        }
        initial.flights.push(Flight {
            origin: origin.into(),
            destination: destination.into(),
            flight_id: format!("HAT{:03}", 100 + 7 * n + d.below(7)),
        });
        initial.reservations.insert(
            id.clone(),
            Reservation {
                user_id: user_id.clone(),
                origin: origin.into(),
                destination: destination.into(),
                cabin: d.pick(&CABINS).to_string(),
                passengers: 1 + d.below(3) as u32,
                status: "active".into(),
            },
        );
    }

    // At least one reservation stays untouched so corrupted calls have a real
    // wrong target.
    let n_changes = if n_res >= 3 { 1 + d.below(2) } else { 1 };
    let mut pool = ids.clone();
    let targets: Vec<String> = (0..n_changes).map(|_| d.take(&mut pool)).collect();

    let mut golden = vec![GoldenAction::new(
        "get_reservation_details",
        obj(&[("reservation_id", &targets[0])]),
    )];
    for t in &targets {
        if d.chance(0.5) {
            golden.push(GoldenAction::new(
                "cancel_reservation",
                obj(&[("reservation_id", t)]),
            ));
        } else {
            let current = &initial.reservations[t].cabin;
            let options: Vec<&str> = CABINS.iter().copied().filter(|c| c != current).collect();
            let cabin = *d.pick(&options);
            golden.push(GoldenAction::new(
                "update_reservation_cabin",
                obj(&[("reservation_id", t), ("cabin", cabin)]),
            ));
        }
    }

    let mut target = initial.clone();
    for g in &golden {
        target
            .execute(&ToolCall::new(g.name.clone(), g.args.clone()))
            .expect("golden actions succeed on the initial world");
    }
    Task {
        task_id,
        seed,
        user_id,
        initial,
        golden_actions: golden,
        target,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// Extra lookups fail at rate `p_error`, regardless of outcome.
    Independent,
    /// A corrupted state change uses a nonexistent reservation id at rate
    /// `p_error`; the call and its lookup then fail.
    FailureLinked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    /// Per state change: probability it corrupts one argument.
    pub p_wrong_arg: f64,
    /// Per golden action: probability the layout adds an extra lookup before it.
    pub p_extra_read: f64,
    pub p_error: f64,
    /// Per lookup turn: probability the agent immediately repeats it.
    pub p_duplicate: f64,
    pub error_mode: ErrorMode,
    pub seed: u64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::patterned()
    }
}

impl PolicyParams {
    /// A faithful agent: every action matches its golden action.
    pub fn faithful() -> Self {
        Self {
            p_wrong_arg: 0.0,
            p_extra_read: 0.0,
            p_error: 0.0,
            p_duplicate: 0.0,
            error_mode: ErrorMode::FailureLinked,
            seed: 0,
        }
    }

    /// Rates giving gold a strong positive gap, extra lookups no gap, wrong
    /// state changes a negative gap and errors a strongly negative one.
    pub fn patterned() -> Self {
        Self {
            p_wrong_arg: 0.3,
            p_extra_read: 0.8,
            p_error: 0.7,
            p_duplicate: 0.0,
            error_mode: ErrorMode::FailureLinked,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_wrong_arg", self.p_wrong_arg),
            ("p_extra_read", self.p_extra_read),
            ("p_error", self.p_error),
            ("p_duplicate", self.p_duplicate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Greeting,
    Extra(ToolCall),
    Golden(usize),
    Closing,
}

/// Extra lookups available for a task: none of them is a golden action and no
/// two are the same call.
fn extra_read_pool(task: &Task) -> Vec<ToolCall> {
    let lookup = &task.golden_actions[0].args;
    let mut pool = vec![
        ToolCall::new("get_user_details", obj(&[("user_id", &task.user_id)])),
        ToolCall::new("list_all_airports", ArgValue::empty_map()),
    ];
    for (id, r) in &task.initial.reservations {
        let args = obj(&[("reservation_id", id)]);
        if &args != lookup {
            pool.push(ToolCall::new("get_reservation_details", args));
        }
        let route = obj(&[("origin", &r.origin), ("destination", &r.destination)]);
        if !pool
            .iter()
            .any(|c| c.name == "search_direct_flight" && c.args == route)
        {
            pool.push(ToolCall::new("search_direct_flight", route));
        }
    }
    pool
}

fn layout(task: &Task, params: &PolicyParams) -> Vec<Step> {
    let mut d = Draw::new(derive_seed(task.seed, LAYOUT_STREAM));
    let mut pool = extra_read_pool(task);
    let mut steps = vec![Step::Greeting];
    for g in 0..task.golden_actions.len() {
        if d.chance(params.p_extra_read) && !pool.is_empty() {
            steps.push(Step::Extra(d.take(&mut pool)));
        }
        steps.push(Step::Golden(g));
    }
    steps.push(Step::Closing);
    steps
}

#[derive(Debug, Clone, PartialEq)]
enum Corruption {
    None,
    /// A nonexistent reservation id.
    Hallucinated(String),
    /// A real reservation no golden action touches.
    OtherReservation(String),
    /// Right reservation, wrong cabin.
    Cabin(String),
}

fn plan_corruption(task: &Task, params: &PolicyParams, d: &mut Draw) -> Vec<Corruption> {
    let targeted = task.targeted();
    let untouched: Vec<&String> = task
        .initial
        .reservations
        .keys()
        .filter(|id| !targeted.contains(&id.as_str()))
        .collect();
    task.golden_actions[1..]
        .iter()
        .map(|g| {
            if !d.chance(params.p_wrong_arg) {
                return Corruption::None;
            }
            if params.error_mode == ErrorMode::FailureLinked && d.chance(params.p_error) {
                let suffix: String = (0..4)
                    .map(|_| char::from(b'0' + d.below(10) as u8))
                    .collect();
                return Corruption::Hallucinated(format!("ZZ{suffix}"));
            }
            if g.name == "update_reservation_cabin" && d.chance(0.5) {
                let cabin = g
                    .args
                    .as_map()
                    .and_then(|m| m.get("cabin"))
                    .and_then(ArgValue::as_str);
                let options: Vec<&str> = CABINS
                    .iter()
                    .copied()
                    .filter(|c| Some(*c) != cabin)
                    .collect();
                return Corruption::Cabin(d.pick(&options).to_string());
            }
            Corruption::OtherReservation(d.pick(&untouched).to_string())
        })
        .collect()
}

fn corrupted(golden: &GoldenAction, c: &Corruption) -> ToolCall {
    let mut args = golden.args.clone();
    if let ArgValue::Map(m) = &mut args {
        match c {
            Corruption::None => {}
            Corruption::Hallucinated(id) | Corruption::OtherReservation(id) => {
                m.insert("reservation_id".into(), id.as_str().into());
            }
            Corruption::Cabin(cabin) => {
                m.insert("cabin".into(), cabin.as_str().into());
            }
        }
    }
    ToolCall::new(golden.name.clone(), args)
}

/// Plays one rollout of `task`. Deterministic in `(task, params)`.
pub fn run_episode(task: &Task, params: &PolicyParams) -> Rollout {
    let mut d = Draw::new(params.seed);
    let plan = plan_corruption(task, params, &mut d);
    let mut world = task.initial.clone();
    let mut turns: Vec<Turn> = Vec::new();

    let act =
        |turns: &mut Vec<Turn>, world: &mut MicroWorld, call: ToolCall, forced_error: bool| {
            let failed = world.execute(&call).is_err();
            turns.push(Turn::with_calls(
                turns.len(),
                vec![(call, failed || forced_error)],
            ));
        };

    for step in layout(task, params) {
        let is_read = match step {
            Step::Greeting => {
                turns.push(Turn::message(turns.len(), GREETING));
                false
            }
            Step::Closing => {
                turns.push(Turn::message(turns.len(), CLOSING));
                false
            }
            Step::Extra(call) => {
                let forced =
                    params.error_mode == ErrorMode::Independent && d.chance(params.p_error);
                act(&mut turns, &mut world, call, forced);
                true
            }
            Step::Golden(0) => {
                let call = match &plan[0] {
                    Corruption::Hallucinated(id) => {
                        ToolCall::new("get_reservation_details", obj(&[("reservation_id", id)]))
                    }
                    _ => ToolCall::new(
                        task.golden_actions[0].name.clone(),
                        task.golden_actions[0].args.clone(),
                    ),
                };
                act(&mut turns, &mut world, call, false);
                true
            }
            Step::Golden(g) => {
                let call = corrupted(&task.golden_actions[g], &plan[g - 1]);
                act(&mut turns, &mut world, call, false);
                false
            }
        };
        if is_read && d.chance(params.p_duplicate) {
            let last = turns.last().expect("a lookup turn was just pushed");
            let (call, errored) = (last.tool_calls[0].clone(), last.tool_errored[0]);
            turns.push(Turn::with_calls(turns.len(), vec![(call, errored)]));
        }
    }

    Rollout {
        rollout_id: String::new(),
        group_id: String::new(),
        task_id: task.task_id.clone(),
        turns,
        golden_actions: task.golden_actions.clone(),
        outcome: u8::from(world == task.target),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub tasks: usize,
    pub group_size: usize,
    pub seed: u64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            tasks: 500,
            group_size: 4,
            seed: 0,
        }
    }
}

/// `task_count` groups of `group_size` rollouts. Task `t` uses seed
/// `derive_seed(seed, t)`; rollout `i` of it uses `derive_seed(task_seed, i)`.
pub fn generate_buffer(
    task_count: usize,
    group_size: usize,
    params: &PolicyParams,
    seed: u64,
) -> Result<Vec<Rollout>> {
    if group_size < 2 {
        return Err(Error::Argument(format!(
            "group size must be at least 2, got {group_size}"
        )));
    }
    params.validate()?;
    let mut out = Vec::with_capacity(task_count * group_size);
    for t in 0..task_count {
        let task = build_task(derive_seed(seed, t as u64));
        let group_id = format!("g{t:05}");
        for i in 0..group_size {
            let p = PolicyParams {
                seed: derive_seed(task.seed, i as u64),
                ..*params
            };
            let mut r = run_episode(&task, &p);
            r.rollout_id = format!("{group_id}-r{i}");
            r.group_id = group_id.clone();
            out.push(r);
        }
    }
    Ok(out)
}
