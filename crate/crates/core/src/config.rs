//! Experiment definitions and the `key = value` config format.
//!
//! A config names a policy, an ordered list of tasks with per-visit frame
//! budgets, the evaluation cadence, and the seeds to run. Unspecified policy
//! hyperparameters take the published baseline defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::PolicyConfig;
use crate::env::EnvFactors;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// One task in the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    pub name: String,
    pub factors: EnvFactors,
    /// Environment steps granted per cycle visit.
    pub frames_per_visit: u64,
    /// Harder paired variant used for out-of-distribution evaluation.
    pub eval_test_variant: Option<EnvFactors>,
    /// Size K of the fixed train context set.
    pub train_context_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskSpec>,
    pub cycles: usize,
    /// Pause cadence n: evaluate after every n training steps.
    pub eval_interval: u64,
    /// Episodes per task per split at each pause.
    pub eval_episodes: usize,
    pub smoothing_window: usize,
    pub seeds: Vec<u64>,
    pub policy_name: String,
    /// Raw `[policy]` overrides as written in the config.
    pub policy_params: BTreeMap<String, String>,
    pub output_dir: PathBuf,
    /// Fully resolved hyperparameters (overrides applied over defaults).
    pub policy: PolicyConfig,
}

impl ExperimentConfig {
    /// Hex SHA-256 of the canonical serialized form.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serialize_config(self).as_bytes());
        let out = h.finalize();
        out.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn default_factors() -> EnvFactors {
    EnvFactors {
        grid_size: 5,
        obstacle_density: 0.0,
        monster_count: 0,
        dark_radius: None,
        trap_prob: 0.0,
        episode_cap: 0, // patched to 4*g*g after overrides unless set
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Default)]
struct RawTask {
    name: Option<String>,
    frames: Option<u64>,
    train_contexts: Option<u32>,
    factor_overrides: Vec<(String, String, usize)>,
    variant_overrides: Vec<(String, String, usize)>,
}

enum Section {
    Global,
    Policy,
    Task(usize),
}

/// Parse the `key = value` config format: `#` comments, `[task.<i>]` blocks
/// for tasks and `[policy]` for hyperparameter overrides.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut section = Section::Global;
    let mut globals: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut policy_params: BTreeMap<String, String> = BTreeMap::new();
    let mut raw_tasks: BTreeMap<usize, RawTask> = BTreeMap::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                msg: "unterminated section header".to_string(),
            })?;
            section = if header == "policy" {
                Section::Policy
            } else if let Some(ix) = header.strip_prefix("task.") {
                let ix: usize = ix.parse().map_err(|_| ConfigError::Syntax {
                    line: line_no,
                    msg: format!("bad task index `{ix}`"),
                })?;
                raw_tasks.entry(ix).or_default();
                Section::Task(ix)
            } else {
                return Err(ConfigError::Syntax {
                    line: line_no,
                    msg: format!("unknown section `[{header}]`"),
                });
            };
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: line_no,
            msg: "expected `key = value`".to_string(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        match section {
            Section::Global => {
                globals.insert(key, (value, line_no));
            }
            Section::Policy => {
                policy_params.insert(key, value);
            }
            Section::Task(ix) => {
                let t = raw_tasks.get_mut(&ix).expect("section registered");
                match key.as_str() {
                    "name" => t.name = Some(value),
                    "frames" => {
                        t.frames = Some(parse_num(&value, "frames", line_no)?);
                    }
                    "train_contexts" => {
                        t.train_contexts = Some(parse_num(&value, "train_contexts", line_no)?);
                    }
                    k if k.starts_with("test_variant.") => {
                        let fk = k.trim_start_matches("test_variant.").to_string();
                        t.variant_overrides.push((fk, value, line_no));
                    }
                    _ => t.factor_overrides.push((key, value, line_no)),
                }
            }
        }
    }

    // Task sections must be a contiguous 0..N-1 range.
    if raw_tasks.is_empty() {
        return Err(ConfigError::MissingKey("[task.0]".to_string()));
    }
    let n = raw_tasks.len();
    for i in 0..n {
        if !raw_tasks.contains_key(&i) {
            return Err(ConfigError::Invalid(format!(
                "task indices must be 0..{} with no gaps; missing [task.{i}]",
                n - 1
            )));
        }
    }

    let mut tasks = Vec::with_capacity(n);
    for (ix, raw) in raw_tasks {
        let mut factors = default_factors();
        for (k, v, line) in &raw.factor_overrides {
            apply_factor_key(&mut factors, k, v, *line)?;
        }
        if factors.episode_cap == 0 {
            factors.episode_cap = (4 * factors.grid_size * factors.grid_size) as u64;
        }
        factors
            .validate()
            .map_err(|m| ConfigError::Invalid(format!("task {ix}: {m}")))?;
        let eval_test_variant = if raw.variant_overrides.is_empty() {
            None
        } else {
            let mut vf = factors.clone();
            let explicit_cap = raw
                .variant_overrides
                .iter()
                .any(|(k, _, _)| k == "episode_cap");
            for (k, v, line) in &raw.variant_overrides {
                apply_factor_key(&mut vf, k, v, *line)?;
            }
            if !explicit_cap {
                vf.episode_cap = (4 * vf.grid_size * vf.grid_size) as u64;
            }
            vf.validate()
                .map_err(|m| ConfigError::Invalid(format!("task {ix} test_variant: {m}")))?;
            Some(vf)
        };
        let name = raw.name.unwrap_or_else(|| format!("task{ix}"));
        if !valid_name(&name) {
            return Err(ConfigError::Invalid(format!(
                "task {ix}: name `{name}` must match [A-Za-z0-9_-]+"
            )));
        }
        let frames = raw
            .frames
            .ok_or_else(|| ConfigError::MissingKey(format!("[task.{ix}] frames")))?;
        if frames == 0 {
            return Err(ConfigError::Invalid(format!("task {ix}: frames must be positive")));
        }
        let train_context_count = raw.train_contexts.unwrap_or(200);
        if train_context_count == 0 {
            return Err(ConfigError::Invalid(format!(
                "task {ix}: train_contexts must be positive"
            )));
        }
        tasks.push(TaskSpec {
            task_id: ix,
            name,
            factors,
            frames_per_visit: frames,
            eval_test_variant,
            train_context_count,
        });
    }

    let take = |key: &str, globals: &BTreeMap<String, (String, usize)>| -> Option<(String, usize)> {
        globals.get(key).cloned()
    };
    for key in globals.keys() {
        const KNOWN: [&str; 7] = [
            "cycles",
            "eval_interval",
            "eval_episodes",
            "smoothing_window",
            "seeds",
            "policy_name",
            "output_dir",
        ];
        if !KNOWN.contains(&key.as_str()) {
            return Err(ConfigError::Invalid(format!("unknown global key `{key}`")));
        }
    }

    let cycles: usize = match take("cycles", &globals) {
        Some((v, line)) => parse_num(&v, "cycles", line)?,
        None => 1,
    };
    if cycles == 0 {
        return Err(ConfigError::Invalid("cycles must be >= 1".to_string()));
    }
    let min_frames = tasks.iter().map(|t| t.frames_per_visit).min().unwrap();
    let eval_interval: u64 = match take("eval_interval", &globals) {
        Some((v, line)) => parse_num(&v, "eval_interval", line)?,
        None => min_frames,
    };
    if eval_interval == 0 {
        return Err(ConfigError::Invalid("eval_interval must be >= 1".to_string()));
    }
    if eval_interval > min_frames {
        return Err(ConfigError::Invalid(format!(
            "eval_interval {eval_interval} exceeds the smallest per-visit budget {min_frames}; \
             every segment must receive at least one evaluation"
        )));
    }
    let eval_episodes: usize = match take("eval_episodes", &globals) {
        Some((v, line)) => parse_num(&v, "eval_episodes", line)?,
        None => 10,
    };
    if eval_episodes == 0 {
        return Err(ConfigError::Invalid("eval_episodes must be >= 1".to_string()));
    }
    let smoothing_window: usize = match take("smoothing_window", &globals) {
        Some((v, line)) => parse_num(&v, "smoothing_window", line)?,
        None => 5,
    };
    if smoothing_window == 0 {
        return Err(ConfigError::Invalid("smoothing_window must be >= 1".to_string()));
    }
    let seeds: Vec<u64> = match take("seeds", &globals) {
        Some((v, line)) => v
            .split(',')
            .map(|s| parse_num::<u64>(s.trim(), "seeds", line))
            .collect::<Result<_, _>>()?,
        None => vec![0],
    };
    if seeds.is_empty() {
        return Err(ConfigError::Invalid("seeds must list at least one seed".to_string()));
    }
    let policy_name = take("policy_name", &globals)
        .map(|(v, _)| v)
        .ok_or_else(|| ConfigError::MissingKey("policy_name".to_string()))?;
    let output_dir = PathBuf::from(
        take("output_dir", &globals)
            .map(|(v, _)| v)
            .unwrap_or_else(|| "runs".to_string()),
    );

    let policy = PolicyConfig::resolve(&policy_name, &policy_params).map_err(|e| match e {
        crate::agents::PolicyConfigError::UnknownPolicy(name) => ConfigError::UnknownPolicy(name),
        crate::agents::PolicyConfigError::Invalid(msg) => ConfigError::Invalid(msg),
    })?;

    Ok(ExperimentConfig {
        tasks,
        cycles,
        eval_interval,
        eval_episodes,
        smoothing_window,
        seeds,
        policy_name,
        policy_params,
        output_dir,
        policy,
    })
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str, line: usize) -> Result<T, ConfigError> {
    // Accept scientific notation for integer budgets (e.g. `5e4`).
    if let Ok(x) = v.parse::<T>() {
        return Ok(x);
    }
    if let Ok(f) = v.parse::<f64>() {
        if f.fract() == 0.0 && f >= 0.0 && f <= u64::MAX as f64 {
            if let Ok(x) = format!("{}", f as u64).parse::<T>() {
                return Ok(x);
            }
        }
    }
    Err(ConfigError::Syntax { line, msg: format!("bad value `{v}` for `{key}`") })
}

fn apply_factor_key(
    f: &mut EnvFactors,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    match key {
        "grid_size" => f.grid_size = parse_num(value, key, line)?,
        "obstacle_density" => {
            f.obstacle_density = value.parse().map_err(|_| ConfigError::Syntax {
                line,
                msg: format!("bad value `{value}` for `{key}`"),
            })?
        }
        "monster_count" => f.monster_count = parse_num(value, key, line)?,
        "dark_radius" => {
            f.dark_radius = if value.is_empty() || value == "none" {
                None
            } else {
                Some(parse_num(value, key, line)?)
            }
        }
        "trap_prob" => {
            f.trap_prob = value.parse().map_err(|_| ConfigError::Syntax {
                line,
                msg: format!("bad value `{value}` for `{key}`"),
            })?
        }
        "episode_cap" => f.episode_cap = parse_num(value, key, line)?,
        _ => {
            return Err(ConfigError::Syntax {
                line,
                msg: format!("unknown task key `{key}`"),
            })
        }
    }
    Ok(())
}

fn write_factors(out: &mut String, prefix: &str, f: &EnvFactors) {
    let _ = writeln!(out, "{prefix}grid_size = {}", f.grid_size);
    let _ = writeln!(out, "{prefix}obstacle_density = {}", f.obstacle_density);
    let _ = writeln!(out, "{prefix}monster_count = {}", f.monster_count);
    if let Some(r) = f.dark_radius {
        let _ = writeln!(out, "{prefix}dark_radius = {r}");
    }
    let _ = writeln!(out, "{prefix}trap_prob = {}", f.trap_prob);
    let _ = writeln!(out, "{prefix}episode_cap = {}", f.episode_cap);
}

/// Canonical text form; `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(c: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "cycles = {}", c.cycles);
    let _ = writeln!(out, "eval_interval = {}", c.eval_interval);
    let _ = writeln!(out, "eval_episodes = {}", c.eval_episodes);
    let _ = writeln!(out, "smoothing_window = {}", c.smoothing_window);
    let seeds = c
        .seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(out, "seeds = {seeds}");
    let _ = writeln!(out, "policy_name = {}", c.policy_name);
    let _ = writeln!(out, "output_dir = {}", c.output_dir.display());
    if !c.policy_params.is_empty() {
        let _ = writeln!(out, "\n[policy]");
        for (k, v) in &c.policy_params {
            let _ = writeln!(out, "{k} = {v}");
        }
    }
    for t in &c.tasks {
        let _ = writeln!(out, "\n[task.{}]", t.task_id);
        let _ = writeln!(out, "name = {}", t.name);
        let _ = writeln!(out, "frames = {}", t.frames_per_visit);
        let _ = writeln!(out, "train_contexts = {}", t.train_context_count);
        write_factors(&mut out, "", &t.factors);
        if let Some(v) = &t.eval_test_variant {
            write_factors(&mut out, "test_variant.", v);
        }
    }
    out
}

#[cfg(any(test, feature = "test-support"))]
pub mod test_support {
    use super::*;

    /// Minimal open-room task for schedule and harness tests.
    pub fn task(task_id: usize, name: &str, frames: u64) -> TaskSpec {
        TaskSpec {
            task_id,
            name: name.to_string(),
            factors: EnvFactors {
                grid_size: 5,
                obstacle_density: 0.0,
                monster_count: 0,
                dark_radius: None,
                trap_prob: 0.0,
                episode_cap: 40,
            },
            frames_per_visit: frames,
            eval_test_variant: None,
            train_context_count: 2,
        }
    }
}
