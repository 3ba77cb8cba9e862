//! Run orchestration: train along the schedule, pause every n steps (and at
//! every segment boundary) to evaluate each task on both context splits,
//! fire boundary hooks, and append records to a single-writer log file.
//!
//! Logs are line-delimited UTF-8: one header line, then one record per
//! evaluation. Given the same config and seed, two runs produce
//! byte-identical logs apart from the header timestamp.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{
    act, on_task_boundary, update_from_rollout, EnvRunner, Mode, PolicyState, TrainError,
    UpdateStats,
};
use crate::config::{ExperimentConfig, TaskSpec};
use crate::env::{self, splitmix64, Context, EnvError, EnvFactors, Split, NUM_ACTIONS, OBS_DIM};
use crate::schedule::{build_schedule, Schedule, ScheduleError};

pub const OUTPUT_DIR_ENV: &str = "CORABENCH_OUT";

const INIT_SALT: u64 = 0x1a17;
const TRAIN_SALT: u64 = 0x7e41;
const EVAL_SALT: u64 = 0xe7a1;
const BOUNDARY_SALT: u64 = 0xb0d7;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("environment error: {0}")]
    Env(#[from] EnvError),
    #[error("training error: {0}")]
    Train(#[from] TrainError),
    #[error("schedule error: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("log file is empty")]
    Empty,
}

/// One continual-evaluation measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub run_id: String,
    pub policy: String,
    pub seed: u64,
    /// Training steps completed when the pause happened.
    pub timestep: u64,
    /// The task being evaluated.
    pub task: usize,
    /// Schedule cycle the run was in; boundary pauses belong to the
    /// completed segment.
    pub cycle: usize,
    pub split: Split,
    pub mean_return: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEcho {
    pub name: String,
    pub frames: u64,
    pub has_variant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHeader {
    pub run_id: String,
    pub policy: String,
    pub seed: u64,
    pub cycles: usize,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub smoothing_window: usize,
    pub tasks: Vec<TaskEcho>,
    pub config_sha256: String,
    pub started_unix: u64,
}

impl RunHeader {
    pub fn schedule(&self) -> Result<Schedule, ScheduleError> {
        let budgets: Vec<u64> = self.tasks.iter().map(|t| t.frames).collect();
        crate::schedule::build_schedule_from_budgets(&budgets, self.cycles)
    }
}

/// Append-only record of one run; replayable to reconstruct all curves.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<EvalRecord>,
}

/// Reals are serialized with 9 significant digits.
pub fn format_g9(x: f64) -> String {
    format!("{x:.8e}")
}

fn header_line(h: &RunHeader) -> String {
    let tasks = h
        .tasks
        .iter()
        .map(|t| format!("{}:{}:{}", t.name, t.frames, u8::from(t.has_variant)))
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "#corabench\trun={}\tpolicy={}\tseed={}\tcycles={}\teval_interval={}\teval_episodes={}\tsmoothing_window={}\ttasks={}\tconfig={}\tstarted={}",
        h.run_id,
        h.policy,
        h.seed,
        h.cycles,
        h.eval_interval,
        h.eval_episodes,
        h.smoothing_window,
        tasks,
        h.config_sha256,
        h.started_unix
    )
}

fn record_line(r: &EvalRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.run_id,
        r.policy,
        r.seed,
        r.timestep,
        r.task,
        r.cycle,
        r.split.as_str(),
        format_g9(r.mean_return),
        r.episodes
    )
}

pub fn parse_run_log(text: &str) -> Result<RunLog, LogError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(LogError::Empty)?;
    let header = parse_header(first).map_err(|msg| LogError::Malformed { line: 1, msg })?;
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(line).map_err(|msg| LogError::Malformed { line: idx + 1, msg })?;
        records.push(rec);
    }
    Ok(RunLog { header, records })
}

fn parse_header(line: &str) -> Result<RunHeader, String> {
    let mut fields = line.split('\t');
    if fields.next() != Some("#corabench") {
        return Err("expected `#corabench` header".to_string());
    }
    let mut run_id = None;
    let mut policy = None;
    let mut seed = None;
    let mut cycles = None;
    let mut eval_interval = None;
    let mut eval_episodes = None;
    let mut smoothing_window = None;
    let mut tasks = None;
    let mut config_sha256 = None;
    let mut started_unix = None;
    for field in fields {
        let (k, v) = field.split_once('=').ok_or_else(|| format!("bad header field `{field}`"))?;
        match k {
            "run" => run_id = Some(v.to_string()),
            "policy" => policy = Some(v.to_string()),
            "seed" => seed = Some(v.parse().map_err(|_| format!("bad seed `{v}`"))?),
            "cycles" => cycles = Some(v.parse().map_err(|_| format!("bad cycles `{v}`"))?),
            "eval_interval" => {
                eval_interval = Some(v.parse().map_err(|_| format!("bad eval_interval `{v}`"))?)
            }
            "eval_episodes" => {
                eval_episodes = Some(v.parse().map_err(|_| format!("bad eval_episodes `{v}`"))?)
            }
            "smoothing_window" => {
                smoothing_window =
                    Some(v.parse().map_err(|_| format!("bad smoothing_window `{v}`"))?)
            }
            "tasks" => {
                let mut parsed = Vec::new();
                for part in v.split(';') {
                    let bits: Vec<&str> = part.split(':').collect();
                    if bits.len() != 3 {
                        return Err(format!("bad task echo `{part}`"));
                    }
                    parsed.push(TaskEcho {
                        name: bits[0].to_string(),
                        frames: bits[1].parse().map_err(|_| format!("bad frames `{}`", bits[1]))?,
                        has_variant: bits[2] == "1",
                    });
                }
                tasks = Some(parsed);
            }
            "config" => config_sha256 = Some(v.to_string()),
            "started" => {
                started_unix = Some(v.parse().map_err(|_| format!("bad started `{v}`"))?)
            }
            other => return Err(format!("unknown header key `{other}`")),
        }
    }
    Ok(RunHeader {
        run_id: run_id.ok_or("missing run")?,
        policy: policy.ok_or("missing policy")?,
        seed: seed.ok_or("missing seed")?,
        cycles: cycles.ok_or("missing cycles")?,
        eval_interval: eval_interval.ok_or("missing eval_interval")?,
        eval_episodes: eval_episodes.ok_or("missing eval_episodes")?,
        smoothing_window: smoothing_window.ok_or("missing smoothing_window")?,
        tasks: tasks.ok_or("missing tasks")?,
        config_sha256: config_sha256.ok_or("missing config")?,
        started_unix: started_unix.ok_or("missing started")?,
    })
}

fn parse_record(line: &str) -> Result<EvalRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 9 {
        return Err(format!("expected 9 tab-separated fields, found {}", fields.len()));
    }
    let split = match fields[6] {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(format!("bad split `{other}`")),
    };
    Ok(EvalRecord {
        run_id: fields[0].to_string(),
        policy: fields[1].to_string(),
        seed: fields[2].parse().map_err(|_| format!("bad seed `{}`", fields[2]))?,
        timestep: fields[3].parse().map_err(|_| format!("bad timestep `{}`", fields[3]))?,
        task: fields[4].parse().map_err(|_| format!("bad task `{}`", fields[4]))?,
        cycle: fields[5].parse().map_err(|_| format!("bad cycle `{}`", fields[5]))?,
        split,
        mean_return: fields[7].parse().map_err(|_| format!("bad mean_return `{}`", fields[7]))?,
        episodes: fields[8].parse().map_err(|_| format!("bad episodes `{}`", fields[8]))?,
    })
}

/// Output directory, with the `CORABENCH_OUT` env var taking precedence
/// over the config value.
pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.output_dir.clone(),
    }
}

pub fn run_id_for(config: &ExperimentConfig, seed: u64) -> String {
    format!("{}-s{}", config.policy_name, seed)
}

/// Collect one rollout of `min(unroll_length, max_steps)` transitions and
/// apply the policy's update; returns the steps actually consumed.
pub fn collect_and_train(
    policy: &mut PolicyState,
    runner: &mut EnvRunner,
    max_steps: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(u64, UpdateStats), HarnessError> {
    assert!(max_steps >= 1);
    let steps = (policy.cfg.unroll_length as u64).min(max_steps) as usize;
    let rollout = runner.collect(&policy.net, steps, rng)?;
    let stats = update_from_rollout(policy, &rollout, rng)?;
    Ok((rollout.len() as u64, stats))
}

fn eval_episode(
    policy: &PolicyState,
    factors: &EnvFactors,
    ctx: Context,
    dynamics_seed: u64,
) -> Result<f64, EnvError> {
    let (mut state, mut obs) = env::reset(factors, ctx)?;
    let mut episode_rng = ChaCha8Rng::seed_from_u64(dynamics_seed);
    let mut total = 0.0;
    // argmax acting ignores the rng; it only drives environment dynamics
    let mut act_rng = ChaCha8Rng::seed_from_u64(0);
    while !state.done {
        let a = act(policy, &obs, Mode::Eval, &mut act_rng);
        let (next_obs, reward, _) =
            env::step(&mut state, factors, env::Action::from_index(a), &mut episode_rng)?;
        obs = next_obs;
        total += reward.clamp(-1.0, 1.0);
    }
    Ok(total)
}

/// Evaluate E argmax episodes per task on the train split and on the test
/// split (harder variant factors when declared). Side-effect-free on the
/// policy.
pub fn evaluate_all(
    policy: &PolicyState,
    tasks: &[TaskSpec],
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, Split, f64)>, EnvError> {
    assert!(episodes >= 1);
    let mut out = Vec::with_capacity(tasks.len() * 2);
    for task in tasks {
        for split in [Split::Train, Split::Test] {
            let factors = match (split, &task.eval_test_variant) {
                (Split::Test, Some(variant)) => variant,
                _ => &task.factors,
            };
            let mut sum = 0.0;
            for _ in 0..episodes {
                let ctx = env::sample_context(task.task_id, task.train_context_count, split, rng);
                let dynamics_seed = rng.gen();
                sum += eval_episode(policy, factors, ctx, dynamics_seed)?;
            }
            out.push((task.task_id, split, sum / episodes as f64));
        }
    }
    Ok(out)
}

/// Execute one run: train along the schedule, evaluate at every multiple of
/// `eval_interval` and at every segment boundary (the timestep-0 evaluation
/// is always recorded), and stream records to `<run_id>.log`. On training
/// divergence the file holds a valid partial log.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunLog, HarnessError> {
    let schedule = build_schedule(&config.tasks, config.cycles)?;
    let out_dir = resolve_output_dir(config);
    fs::create_dir_all(&out_dir)?;
    let run_id = run_id_for(config, seed);
    let path = out_dir.join(format!("{run_id}.log"));
    let file = fs::File::create(&path)?;
    let mut writer = BufWriter::new(file);

    let header = RunHeader {
        run_id: run_id.clone(),
        policy: config.policy_name.clone(),
        seed,
        cycles: config.cycles,
        eval_interval: config.eval_interval,
        eval_episodes: config.eval_episodes,
        smoothing_window: config.smoothing_window,
        tasks: config
            .tasks
            .iter()
            .map(|t| TaskEcho {
                name: t.name.clone(),
                frames: t.frames_per_visit,
                has_variant: t.eval_test_variant.is_some(),
            })
            .collect(),
        config_sha256: config.digest(),
        started_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    writeln!(writer, "{}", header_line(&header))?;
    writer.flush()?;

    let mut policy =
        PolicyState::new(config.policy.clone(), OBS_DIM, NUM_ACTIONS, splitmix64(seed ^ INIT_SALT));
    let mut train_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ TRAIN_SALT));
    let mut eval_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ EVAL_SALT));
    let mut boundary_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ BOUNDARY_SALT));

    let mut records: Vec<EvalRecord> = Vec::new();
    let emit = |policy: &PolicyState,
                    timestep: u64,
                    records: &mut Vec<EvalRecord>,
                    eval_rng: &mut ChaCha8Rng,
                    writer: &mut BufWriter<fs::File>|
     -> Result<(), HarnessError> {
        let (_, cycle) = schedule
            .task_at(timestep.saturating_sub(1).min(schedule.total_steps - 1))
            .expect("pause timesteps lie within the schedule");
        let means = evaluate_all(policy, &config.tasks, config.eval_episodes, eval_rng)?;
        for (task, split, mean_return) in means {
            let rec = EvalRecord {
                run_id: run_id.clone(),
                policy: config.policy_name.clone(),
                seed,
                timestep,
                task,
                cycle,
                split,
                mean_return,
                episodes: config.eval_episodes,
            };
            writeln!(writer, "{}", record_line(&rec))?;
            records.push(rec);
        }
        writer.flush()?;
        Ok(())
    };

    // Timestep-0 baseline, needed as the pre-training transfer column.
    emit(&policy, 0, &mut records, &mut eval_rng, &mut writer)?;

    let n = config.eval_interval;
    let mut t: u64 = 0;
    for seg in &schedule.segments {
        let task = &config.tasks[seg.task_id];
        policy.on_segment_start(task, seg.end - seg.start);
        let mut runner = EnvRunner::new(task, &mut train_rng)?;
        while t < seg.end {
            let next_multiple = (t / n + 1) * n;
            let next_pause = next_multiple.min(seg.end);
            let (consumed, _) =
                collect_and_train(&mut policy, &mut runner, next_pause - t, &mut train_rng)?;
            t += consumed;
            if t % n == 0 || t == seg.end {
                emit(&policy, t, &mut records, &mut eval_rng, &mut writer)?;
            }
        }
        on_task_boundary(&mut policy, task, seg.end - seg.start, &mut boundary_rng)?;
    }
    writer.flush()?;
    Ok(RunLog { header, records })
}

/// Read and parse every `*.log` file in a directory, sorted by file name.
pub fn load_log_dir(dir: &Path) -> Result<Vec<(PathBuf, RunLog)>, String> {
    let entries = fs::read_dir(dir).map_err(|e| format!("cannot read {}: {e}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "log"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let text =
            fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let log = parse_run_log(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        out.push((path, log));
    }
    Ok(out)
}
