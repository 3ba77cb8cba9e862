//! Baseline continual-learning policies over a shared dense actor-critic:
//! naive fine-tuning, EWC, online EWC, progress-and-compress, and
//! reservoir-replay (CLEAR-style). One output head serves the whole task
//! sequence; the parameter count never changes.

pub mod a2c;
pub mod clear;
pub mod ewc;
pub mod net;
pub mod pnc;
pub mod rollout;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::TaskSpec;
use crate::env::{EnvError, Observation};

pub use a2c::{compute_returns, Rollout, RmsProp, TrainError, Transition};
pub use clear::{reservoir_insert, ClearState, StoredTransition};
pub use ewc::{estimate_fisher, ewc_penalty, online_ewc_consolidate, Anchor, EwcState, OnlineEwcState};
pub use net::PolicyNet;
pub use pnc::{PcState, Phase};
pub use rollout::EnvRunner;

pub const POLICY_NAMES: [&str; 5] = ["naive", "ewc", "online_ewc", "pnc", "clear"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Naive,
    Ewc,
    OnlineEwc,
    Pnc,
    Clear,
}

impl PolicyKind {
    pub fn from_name(name: &str) -> Option<PolicyKind> {
        match name {
            "naive" => Some(PolicyKind::Naive),
            "ewc" => Some(PolicyKind::Ewc),
            "online_ewc" => Some(PolicyKind::OnlineEwc),
            "pnc" => Some(PolicyKind::Pnc),
            "clear" => Some(PolicyKind::Clear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Naive => "naive",
            PolicyKind::Ewc => "ewc",
            PolicyKind::OnlineEwc => "online_ewc",
            PolicyKind::Pnc => "pnc",
            PolicyKind::Clear => "clear",
        }
    }
}

#[derive(Debug, Error)]
pub enum PolicyConfigError {
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("{0}")]
    Invalid(String),
}

/// Resolved hyperparameters. Defaults follow the published baseline tables;
/// `[policy]` config keys override them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub discount: f64,
    pub baseline_cost: f64,
    pub entropy_cost: f64,
    pub grad_clip: f64,
    pub unroll_length: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub min_task_steps: u64,
    pub fisher_samples: usize,
    pub normalize_fisher: bool,
    pub online_gamma: f64,
    pub kl_cost: f64,
    pub policy_cloning_cost: f64,
    pub value_cloning_cost: f64,
    pub replay_capacity: usize,
}

impl PolicyConfig {
    pub fn defaults_for(kind: PolicyKind) -> PolicyConfig {
        PolicyConfig {
            kind,
            hidden_size: 64,
            learning_rate: 4e-4,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 0.01,
            discount: 0.99,
            baseline_cost: 0.5,
            entropy_cost: 0.01,
            grad_clip: 40.0,
            unroll_length: 20,
            batch_size: 32,
            lambda: match kind {
                PolicyKind::OnlineEwc => 175.0,
                PolicyKind::Pnc => 3000.0,
                _ => 10_000.0,
            },
            min_task_steps: 200_000,
            fisher_samples: 100,
            normalize_fisher: !matches!(kind, PolicyKind::Ewc),
            online_gamma: 0.99,
            kl_cost: 1.0,
            policy_cloning_cost: 0.01,
            value_cloning_cost: 0.005,
            replay_capacity: 25_000_000,
        }
    }

    /// Apply `[policy]` overrides over the defaults for the named policy,
    /// rejecting unknown names and keys that do not apply to it.
    pub fn resolve(
        name: &str,
        params: &BTreeMap<String, String>,
    ) -> Result<PolicyConfig, PolicyConfigError> {
        let kind = PolicyKind::from_name(name)
            .ok_or_else(|| PolicyConfigError::UnknownPolicy(name.to_string()))?;
        let mut cfg = PolicyConfig::defaults_for(kind);
        for (key, value) in params {
            let applies = match key.as_str() {
                "hidden_size" | "learning_rate" | "rmsprop_alpha" | "rmsprop_eps" | "discount"
                | "baseline_cost" | "entropy_cost" | "grad_clip" | "unroll_length" => true,
                "lambda" | "fisher_samples" | "normalize_fisher" => {
                    matches!(kind, PolicyKind::Ewc | PolicyKind::OnlineEwc | PolicyKind::Pnc)
                }
                "min_task_steps" => matches!(kind, PolicyKind::Ewc),
                "online_gamma" => matches!(kind, PolicyKind::OnlineEwc | PolicyKind::Pnc),
                "kl_cost" => matches!(kind, PolicyKind::Pnc),
                "batch_size" | "policy_cloning_cost" | "value_cloning_cost" | "replay_capacity" => {
                    matches!(kind, PolicyKind::Clear)
                }
                _ => {
                    return Err(PolicyConfigError::Invalid(format!(
                        "unknown policy key `{key}`"
                    )))
                }
            };
            if !applies {
                return Err(PolicyConfigError::Invalid(format!(
                    "policy key `{key}` does not apply to `{name}`"
                )));
            }
            let bad = |k: &str, v: &str| {
                PolicyConfigError::Invalid(format!("bad value `{v}` for policy key `{k}`"))
            };
            match key.as_str() {
                "hidden_size" => cfg.hidden_size = value.parse().map_err(|_| bad(key, value))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad(key, value))?,
                "rmsprop_alpha" => cfg.rmsprop_alpha = value.parse().map_err(|_| bad(key, value))?,
                "rmsprop_eps" => cfg.rmsprop_eps = value.parse().map_err(|_| bad(key, value))?,
                "discount" => cfg.discount = value.parse().map_err(|_| bad(key, value))?,
                "baseline_cost" => cfg.baseline_cost = value.parse().map_err(|_| bad(key, value))?,
                "entropy_cost" => cfg.entropy_cost = value.parse().map_err(|_| bad(key, value))?,
                "grad_clip" => cfg.grad_clip = value.parse().map_err(|_| bad(key, value))?,
                "unroll_length" => cfg.unroll_length = value.parse().map_err(|_| bad(key, value))?,
                "lambda" => cfg.lambda = value.parse().map_err(|_| bad(key, value))?,
                "min_task_steps" => {
                    cfg.min_task_steps = parse_integerish(value).ok_or_else(|| bad(key, value))?
                }
                "fisher_samples" => cfg.fisher_samples = value.parse().map_err(|_| bad(key, value))?,
                "normalize_fisher" => {
                    cfg.normalize_fisher = value.parse().map_err(|_| bad(key, value))?
                }
                "online_gamma" => cfg.online_gamma = value.parse().map_err(|_| bad(key, value))?,
                "kl_cost" => cfg.kl_cost = value.parse().map_err(|_| bad(key, value))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad(key, value))?,
                "policy_cloning_cost" => {
                    cfg.policy_cloning_cost = value.parse().map_err(|_| bad(key, value))?
                }
                "value_cloning_cost" => {
                    cfg.value_cloning_cost = value.parse().map_err(|_| bad(key, value))?
                }
                "replay_capacity" => {
                    cfg.replay_capacity =
                        parse_integerish(value).ok_or_else(|| bad(key, value))? as usize
                }
                _ => unreachable!("key validated above"),
            }
        }
        if cfg.hidden_size == 0 || cfg.unroll_length == 0 || cfg.batch_size == 0 {
            return Err(PolicyConfigError::Invalid(
                "hidden_size, unroll_length and batch_size must be positive".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&cfg.online_gamma) {
            return Err(PolicyConfigError::Invalid(format!(
                "online_gamma must lie in (0, 1], got {}",
                cfg.online_gamma
            )));
        }
        Ok(cfg)
    }
}

fn parse_integerish(v: &str) -> Option<u64> {
    if let Ok(x) = v.parse::<u64>() {
        return Some(x);
    }
    let f: f64 = v.parse().ok()?;
    (f.fract() == 0.0 && f >= 0.0 && f <= u64::MAX as f64).then_some(f as u64)
}

#[derive(Debug, Clone)]
pub enum AlgoState {
    Naive,
    Ewc(EwcState),
    OnlineEwc(OnlineEwcState),
    Pc(Box<PcState>),
    Clear(ClearState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub loss: f64,
    pub novel: usize,
    pub replayed: usize,
}

/// All mutable learner state for one run: parameters, optimizer
/// accumulators, and per-algorithm auxiliary state.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub cfg: PolicyConfig,
    pub net: PolicyNet,
    pub opt: RmsProp,
    pub algo: AlgoState,
}

impl PolicyState {
    pub fn new(cfg: PolicyConfig, obs_dim: usize, actions: usize, init_seed: u64) -> PolicyState {
        let net = PolicyNet::init(obs_dim, cfg.hidden_size, actions, init_seed);
        let params = net.theta.len();
        let algo = match cfg.kind {
            PolicyKind::Naive => AlgoState::Naive,
            PolicyKind::Ewc => AlgoState::Ewc(EwcState {
                anchors: Vec::new(),
                lambda: cfg.lambda,
                min_task_steps: cfg.min_task_steps,
                fisher_samples: cfg.fisher_samples,
                normalize_fisher: cfg.normalize_fisher,
            }),
            PolicyKind::OnlineEwc => AlgoState::OnlineEwc(OnlineEwcState::new(
                params,
                cfg.online_gamma,
                cfg.lambda,
                cfg.fisher_samples,
                cfg.normalize_fisher,
            )),
            PolicyKind::Pnc => AlgoState::Pc(Box::new(PcState::new(net.clone(), &cfg))),
            PolicyKind::Clear => AlgoState::Clear(ClearState::new(
                cfg.replay_capacity,
                cfg.policy_cloning_cost,
                cfg.value_cloning_cost,
            )),
        };
        PolicyState { opt: RmsProp::new(params), net, algo, cfg }
    }

    /// The network evaluation reads: the knowledge base for
    /// progress-and-compress, the live network for everyone else.
    pub fn eval_net(&self) -> &PolicyNet {
        match &self.algo {
            AlgoState::Pc(pc) => &pc.kb,
            _ => &self.net,
        }
    }

    /// Hash of all learnable state; used to assert evaluation purity.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let hash_vec = |v: &[f64], h: &mut std::collections::hash_map::DefaultHasher| {
            for x in v {
                x.to_bits().hash(h);
            }
        };
        hash_vec(&self.net.theta, &mut h);
        hash_vec(&self.opt.sq_avg, &mut h);
        match &self.algo {
            AlgoState::Naive => {}
            AlgoState::Ewc(s) => {
                s.anchors.len().hash(&mut h);
                for a in &s.anchors {
                    hash_vec(&a.theta_star, &mut h);
                    hash_vec(&a.fisher, &mut h);
                }
            }
            AlgoState::OnlineEwc(s) => {
                hash_vec(&s.theta_star, &mut h);
                hash_vec(&s.fisher_running, &mut h);
            }
            AlgoState::Pc(pc) => {
                hash_vec(&pc.kb.theta, &mut h);
                hash_vec(&pc.kb_opt.sq_avg, &mut h);
                hash_vec(&pc.protector.fisher_running, &mut h);
                pc.steps_in_visit.hash(&mut h);
            }
            AlgoState::Clear(s) => {
                s.seen_count.hash(&mut h);
                s.buffer.len().hash(&mut h);
                for t in &s.buffer {
                    t.action.hash(&mut h);
                    t.return_est.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Hook fired by the harness when a schedule segment begins.
    pub fn on_segment_start(&mut self, _task: &TaskSpec, budget: u64) {
        if let AlgoState::Pc(pc) = &mut self.algo {
            // The active column resumes from the knowledge base; laterals
            // from the original architecture are not modeled.
            self.net = pc.kb.clone();
            self.opt = RmsProp::new(self.net.theta.len());
            pc.phase = Phase::Progress;
            pc.steps_in_visit = 0;
            pc.visit_budget = budget;
        }
    }
}

/// Select an action: softmax sampling in train mode, deterministic argmax
/// (lowest index wins ties) in eval mode.
pub fn act<R: Rng>(policy: &PolicyState, obs: &Observation, mode: Mode, rng: &mut R) -> usize {
    match mode {
        Mode::Train => {
            let cache = policy.net.forward(obs);
            net::sample_categorical(&cache.probs, rng)
        }
        Mode::Eval => {
            let cache = policy.eval_net().forward(obs);
            net::argmax(&cache.logits)
        }
    }
}

/// Apply one learner update for a freshly collected rollout.
pub fn update_from_rollout(
    policy: &mut PolicyState,
    rollout: &Rollout,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, TrainError> {
    assert!(!rollout.is_empty(), "update requires a non-empty rollout");
    let cfg = policy.cfg.clone();
    match &mut policy.algo {
        AlgoState::Naive => plain_a2c_step(&mut policy.net, &mut policy.opt, rollout, &cfg, None),
        AlgoState::Ewc(state) => {
            let penalty = ewc_penalty(&policy.net.theta, &state.anchors, state.lambda);
            plain_a2c_step(&mut policy.net, &mut policy.opt, rollout, &cfg, Some(penalty))
        }
        AlgoState::OnlineEwc(state) => {
            let penalty = state.penalty(&policy.net.theta);
            plain_a2c_step(&mut policy.net, &mut policy.opt, rollout, &cfg, Some(penalty))
        }
        AlgoState::Clear(state) => {
            clear::clear_update(&mut policy.net, &mut policy.opt, state, rollout, &cfg, rng)
        }
        AlgoState::Pc(pc) => {
            let phase = pc.phase_for_current_step();
            pc.phase = phase;
            let stats = match phase {
                Phase::Progress => {
                    plain_a2c_step(&mut policy.net, &mut policy.opt, rollout, &cfg, None)
                }
                Phase::Compress => pnc::pc_compress(pc, rollout, &cfg),
            };
            pc.steps_in_visit += rollout.len() as u64;
            stats
        }
    }
}

fn plain_a2c_step(
    net: &mut PolicyNet,
    opt: &mut RmsProp,
    rollout: &Rollout,
    cfg: &PolicyConfig,
    penalty: Option<(f64, Vec<f64>)>,
) -> Result<UpdateStats, TrainError> {
    let returns = compute_returns(rollout, cfg.discount);
    // behavior_value is this same network's value estimate at collection
    // time, so it serves as the detached baseline.
    let items: Vec<a2c::BatchItem<'_>> = rollout
        .transitions
        .iter()
        .zip(&returns)
        .map(|(t, &ret)| a2c::BatchItem {
            obs: &t.obs,
            action: t.action,
            ret,
            advantage: ret - t.behavior_value,
            clone_to: None,
        })
        .collect();
    let weights = a2c::LossWeights {
        baseline_cost: cfg.baseline_cost,
        entropy_cost: cfg.entropy_cost,
        policy_cloning_cost: 0.0,
        value_cloning_cost: 0.0,
    };
    let (mut loss, mut grad) = a2c::a2c_loss_grad(net, &items, &weights);
    if let Some((pen_loss, pen_grad)) = penalty {
        loss += pen_loss;
        for (g, p) in grad.iter_mut().zip(&pen_grad) {
            *g += p;
        }
    }
    a2c::ensure_finite(loss, &grad, "a2c update")?;
    a2c::clip_global_norm(&mut grad, cfg.grad_clip);
    opt.step(&mut net.theta, &grad, cfg.learning_rate, cfg.rmsprop_alpha, cfg.rmsprop_eps);
    Ok(UpdateStats { loss, novel: rollout.len(), replayed: 0 })
}

/// Boundary hook: EWC appends an anchor when the visit was long enough,
/// the online variants consolidate, replay and naive fine-tuning ignore it.
pub fn on_task_boundary(
    policy: &mut PolicyState,
    ended_task: &TaskSpec,
    steps_in_task: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(), EnvError> {
    let cfg = policy.cfg.clone();
    match &mut policy.algo {
        AlgoState::Naive | AlgoState::Clear(_) => Ok(()),
        AlgoState::Ewc(state) => {
            if steps_in_task < state.min_task_steps {
                return Ok(());
            }
            let fisher = estimate_fisher(
                &policy.net,
                ended_task,
                state.fisher_samples,
                cfg.unroll_length,
                state.normalize_fisher,
                rng,
            )?;
            state.anchors.push(Anchor { theta_star: policy.net.theta.clone(), fisher });
            Ok(())
        }
        AlgoState::OnlineEwc(state) => {
            let fisher = estimate_fisher(
                &policy.net,
                ended_task,
                state.fisher_samples,
                cfg.unroll_length,
                state.normalize_fisher,
                rng,
            )?;
            online_ewc_consolidate(state, &fisher, &policy.net.theta);
            Ok(())
        }
        AlgoState::Pc(pc) => {
            let fisher = estimate_fisher(
                &pc.kb,
                ended_task,
                pc.protector.fisher_samples,
                cfg.unroll_length,
                pc.protector.normalize_fisher,
                rng,
            )?;
            let kb_theta = pc.kb.theta.clone();
            online_ewc_consolidate(&mut pc.protector, &fisher, &kb_theta);
            Ok(())
        }
    }
}
