use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use turncal::advantage::{self, EstimatorConfig};
use turncal::config::Config;
use turncal::diagnostics::{self, ScoredBuffer};
use turncal::irc::{self, IrcConfig};
use turncal::rollout::{self, Rollout};
use turncal::synthenv::{self, GenerationSettings, PolicyParams};
use turncal::tiers::{RewardTable, Tier, ToolRegistry, TurnRewards};
use turncal::Error;

use crate::io::{
    self as cio, emit, read_buffer, require_dir, require_file, require_writable, write_atomic,
};
use crate::{
    AdvantagesArgs, CalibrateArgs, ClassifyArgs, DiagnoseArgs, EstimatorArgs, Failure, Format,
    GenerationArgs, Intended, PolicyPreset, Preset, SimulateArgs, TableArgs,
};

fn table(args: &TableArgs, config: &Config) -> Result<RewardTable, Failure> {
    if let Some(path) = &args.reward_table {
        require_file(path)?;
        return Config::load(path)?
            .rewards
            .ok_or_else(|| Failure::Data(format!("{}: no [rewards] table", path.display())));
    }
    Ok(match args.preset {
        Some(Preset::Naive) => RewardTable::naive(),
        Some(Preset::Calibrated) => RewardTable::calibrated(),
        Some(Preset::Sparse) => RewardTable::sparse(),
        None => config.rewards.clone().unwrap_or_else(RewardTable::naive),
    })
}

fn registry(args: &TableArgs, config: &Config) -> Result<ToolRegistry, Failure> {
    if let Some(path) = &args.registry {
        require_file(path)?;
        return Config::load(path)?
            .registry
            .ok_or_else(|| Failure::Data(format!("{}: no [registry] table", path.display())));
    }
    Ok(config
        .registry
        .clone()
        .unwrap_or_else(ToolRegistry::airline))
}

fn estimator(args: &EstimatorArgs, config: &Config) -> Result<EstimatorConfig, Failure> {
    let mut est = config.estimator.unwrap_or_default();
    if let Some(k) = args.estimator {
        est.kind = k;
    }
    est.gamma = args.gamma.unwrap_or(est.gamma);
    est.lambda = args.lambda.unwrap_or(est.lambda);
    est.epsilon = args.epsilon.unwrap_or(est.epsilon);
    est.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(est)
}

fn generation(
    args: &GenerationArgs,
    config: &Config,
) -> Result<(GenerationSettings, PolicyParams), Failure> {
    let mut gen = config.generation.unwrap_or_default();
    gen.tasks = args.tasks.unwrap_or(gen.tasks);
    gen.seed = args.seed.unwrap_or(gen.seed);
    if let Some(n) = args.group_size {
        gen.group_size = n as usize;
    }
    if gen.group_size < 2 {
        return Err(Failure::Usage(format!(
            "group size must be at least 2, got {}",
            gen.group_size
        )));
    }
    let policy = match (args.policy, config.policy) {
        (Some(PolicyPreset::Faithful), _) => PolicyParams::faithful(),
        (Some(PolicyPreset::Patterned), _) => PolicyParams::patterned(),
        (None, Some(p)) => p,
        (None, None) => PolicyParams::patterned(),
    };
    Ok((gen, policy))
}

fn score(
    rollouts: &[Rollout],
    table: &RewardTable,
    registry: &ToolRegistry,
) -> Result<ScoredBuffer, Failure> {
    Ok(ScoredBuffer::score(
        rollout::group_rollouts(rollouts)?,
        table,
        registry,
    )?)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    require_writable(&args.output)?;
    let config = cio::load_config(args.config.config.as_deref())?;
    let (gen, policy) = generation(&args.generation, &config)?;
    let rollouts = synthenv::generate_buffer(gen.tasks, gen.group_size, &policy, gen.seed)?;
    write_atomic(&args.output, rollout::to_jsonl(&rollouts)?.as_bytes())?;
    let passed = rollouts.iter().filter(|r| r.passed()).count();
    let rate = if rollouts.is_empty() {
        0.0
    } else {
        100.0 * passed as f64 / rollouts.len() as f64
    };
    println!(
        "wrote {} rollouts in {} groups to {}; pass rate {rate:.1}%",
        rollouts.len(),
        gen.tasks,
        args.output.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ClassifiedTurn<'a> {
    index: usize,
    #[serde(flatten)]
    rewards: &'a TurnRewards,
}

#[derive(Serialize)]
struct ClassifiedRollout<'a> {
    rollout_id: &'a str,
    group_id: &'a str,
    task_id: &'a str,
    outcome: u8,
    turns: Vec<ClassifiedTurn<'a>>,
}

pub fn classify(args: &ClassifyArgs) -> Result<(), Failure> {
    require_file(&args.input)?;
    if let Some(o) = &args.output {
        require_writable(o)?;
    }
    let config = cio::load_config(args.config.config.as_deref())?;
    let table = table(&args.table, &config)?;
    let registry = registry(&args.table, &config)?;
    let buffer = score(&read_buffer(&args.input)?, &table, &registry)?;
    let mut out = Vec::new();
    for (r, rw) in buffer.rollouts() {
        let rec = ClassifiedRollout {
            rollout_id: &r.rollout_id,
            group_id: &r.group_id,
            task_id: &r.task_id,
            outcome: r.outcome,
            turns: rw
                .iter()
                .enumerate()
                .map(|(index, rewards)| ClassifiedTurn { index, rewards })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(Error::from)?;
        out.push(b'\n');
    }
    emit(args.output.as_deref(), &out)
}

pub fn advantages(args: &AdvantagesArgs) -> Result<(), Failure> {
    require_file(&args.input)?;
    if let Some(o) = &args.output {
        require_writable(o)?;
    }
    let config = cio::load_config(args.config.config.as_deref())?;
    let table = table(&args.table, &config)?;
    let registry = registry(&args.table, &config)?;
    let est = estimator(&args.estimator, &config)?;
    let buffer = score(&read_buffer(&args.input)?, &table, &registry)?;
    let mut tensors = Vec::new();
    for (g, rw) in buffer.groups.iter().zip(&buffer.rewards) {
        if g.is_usable() {
            tensors.push(advantage::compute(g, &advantage::reward_values(rw), &est)?);
        }
    }
    let mut out = Vec::new();
    advantage::write_records(&tensors, &mut out)?;
    if buffer.skipped_groups() > 0 {
        eprintln!(
            "turncal: skipped {} group(s) with fewer than 2 rollouts",
            buffer.skipped_groups()
        );
    }
    emit(args.output.as_deref(), &out)
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), Failure> {
    require_file(&args.input)?;
    if let Some(o) = &args.output {
        require_writable(o)?;
    }
    let config = cio::load_config(args.config.config.as_deref())?;
    let table = table(&args.table, &config)?;
    let registry = registry(&args.table, &config)?;
    let est = estimator(&args.estimator, &config)?;
    let buffer = score(&read_buffer(&args.input)?, &table, &registry)?;
    let intended: BTreeMap<Tier, i8> = match args.intended {
        Intended::Table => table.signs(),
        Intended::Fixed => diagnostics::default_intended_signs(),
    };
    let report = diagnostics::diagnose(&buffer, &table, &est, &intended)?;
    let text = match args.format {
        Format::Text => report.to_string(),
        Format::Json => serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
    };
    emit(args.output.as_deref(), text.as_bytes())
}

pub fn calibrate(args: &CalibrateArgs) -> Result<(), Failure> {
    for p in [&args.output, &args.trace].into_iter().flatten() {
        require_writable(p)?;
    }
    if let Some(d) = &args.buffer_dir {
        require_dir(d)?;
    }
    let config = cio::load_config(args.config.config.as_deref())?;
    let initial = table(&args.table, &config)?;
    let registry = registry(&args.table, &config)?;
    let mut irc_cfg: IrcConfig = config.irc.clone().unwrap_or_default();
    irc_cfg.max_iterations = args.max_iterations.unwrap_or(irc_cfg.max_iterations);
    irc_cfg.delta = args.delta.unwrap_or(irc_cfg.delta);
    irc_cfg.eta = args.eta.unwrap_or(irc_cfg.eta);
    if let Some(k) = args.estimator.estimator {
        irc_cfg.estimator = k;
    }
    irc_cfg.gamma = args.estimator.gamma.unwrap_or(irc_cfg.gamma);
    irc_cfg.lambda = args.estimator.lambda.unwrap_or(irc_cfg.lambda);
    irc_cfg.epsilon = args.estimator.epsilon.unwrap_or(irc_cfg.epsilon);

    let (table, trace) = match &args.buffer_dir {
        Some(dir) => {
            let files = cio::buffer_files(dir)?;
            if files.is_empty() {
                return Err(Failure::Data(format!(
                    "{}: no *.jsonl buffers",
                    dir.display()
                )));
            }
            irc_cfg.max_iterations = irc_cfg.max_iterations.min(files.len());
            irc_cfg
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let mut failure = None;
            let result = irc::calibrate(
                |it, _| {
                    read_buffer(&files[it]).map_err(|f| {
                        let e = Error::Argument(f.message().to_owned());
                        failure = Some(f);
                        e
                    })
                },
                &initial,
                &registry,
                &irc_cfg,
            );
            match (result, failure) {
                (Ok(v), _) => v,
                (Err(_), Some(f)) => return Err(f),
                (Err(e), None) => return Err(e.into()),
            }
        }
        None => {
            let (gen, policy) = generation(&args.generation, &config)?;
            irc_cfg
                .validate()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            irc::calibrate(
                |it, _| {
                    synthenv::generate_buffer(
                        gen.tasks,
                        gen.group_size,
                        &policy,
                        gen.seed.wrapping_add(it as u64),
                    )
                },
                &initial,
                &registry,
                &irc_cfg,
            )?
        }
    };

    let toml = Config::rewards_only(&table).to_toml_string()?;
    if let Some(o) = &args.output {
        write_atomic(o, toml.as_bytes())?;
    }
    let trace_json = serde_json::to_string_pretty(&trace).map_err(Error::from)? + "\n";
    if let Some(t) = &args.trace {
        write_atomic(t, trace_json.as_bytes())?;
    }
    match args.format {
        Format::Json => emit(None, trace_json.as_bytes())?,
        Format::Text => {
            let mut s = String::new();
            for it in &trace.iterations {
                let _ = write!(s, "iteration {}: {} rollouts", it.iteration, it.rollouts);
                if let Some(a) = &it.alignment {
                    let _ = write!(s, ", {} mismatches", a.mismatches);
                }
                if let Some(c) = &it.reward_outcome_correlation {
                    let _ = write!(s, ", reward/outcome correlation {c}");
                }
                if let Some(e) = &it.error {
                    let _ = write!(s, ", error: {e}");
                }
                s.push_str(if it.converged { ", converged\n" } else { "\n" });
            }
            if args.output.is_none() {
                s.push_str(&toml);
            }
            emit(None, s.as_bytes())?;
        }
    }

    if trace.converged {
        return Ok(());
    }
    let proposed_any = trace.iterations.iter().any(|it| it.proposed.is_some());
    match trace
        .iterations
        .iter()
        .rev()
        .find_map(|it| it.error.as_ref())
    {
        Some(e) if !proposed_any => Err(Failure::Data(e.clone())),
        _ => Err(Failure::NotConverged(format!(
            "not converged after {} iteration(s)",
            trace.iterations.len()
        ))),
    }
}
