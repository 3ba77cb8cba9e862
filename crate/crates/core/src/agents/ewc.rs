//! Quadratic weight consolidation: per-task anchors for EWC and a single
//! gamma-decayed running anchor for the online variant.

use rand::Rng;

use super::a2c::Transition;
use super::net::PolicyNet;
use super::rollout::EnvRunner;
use crate::config::TaskSpec;
use crate::env::EnvError;

/// Snapshot of parameters with their importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub theta_star: Vec<f64>,
    pub fisher: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EwcState {
    pub anchors: Vec<Anchor>,
    pub lambda: f64,
    pub min_task_steps: u64,
    pub fisher_samples: usize,
    pub normalize_fisher: bool,
}

/// Constant-memory variant: one anchor, decayed running Fisher.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineEwcState {
    pub theta_star: Vec<f64>,
    pub fisher_running: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub fisher_samples: usize,
    pub normalize_fisher: bool,
}

impl OnlineEwcState {
    pub fn new(params: usize, gamma: f64, lambda: f64, fisher_samples: usize, normalize_fisher: bool) -> Self {
        OnlineEwcState {
            theta_star: vec![0.0; params],
            fisher_running: vec![0.0; params],
            gamma,
            lambda,
            fisher_samples,
            normalize_fisher,
        }
    }

    pub fn penalty(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut loss = 0.0;
        let mut grad = vec![0.0; theta.len()];
        accumulate_quadratic(theta, &self.theta_star, &self.fisher_running, self.lambda, &mut loss, &mut grad);
        (loss, grad)
    }
}

fn accumulate_quadratic(
    theta: &[f64],
    theta_star: &[f64],
    fisher: &[f64],
    lambda: f64,
    loss: &mut f64,
    grad: &mut [f64],
) {
    for k in 0..theta.len() {
        let d = theta[k] - theta_star[k];
        *loss += 0.5 * lambda * fisher[k] * d * d;
        grad[k] += lambda * fisher[k] * d;
    }
}

/// Sum over anchors of (lambda/2) * F_k * (theta_k - theta*_k)^2 and its
/// gradient.
pub fn ewc_penalty(theta: &[f64], anchors: &[Anchor], lambda: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for anchor in anchors {
        accumulate_quadratic(theta, &anchor.theta_star, &anchor.fisher, lambda, &mut loss, &mut grad);
    }
    (loss, grad)
}

/// fisher_running <- gamma * fisher_running + fisher_new; the anchor moves
/// to the current parameters.
pub fn online_ewc_consolidate(state: &mut OnlineEwcState, fisher_new: &[f64], current_theta: &[f64]) {
    for (running, &new) in state.fisher_running.iter_mut().zip(fisher_new) {
        *running = state.gamma * *running + new;
    }
    state.theta_star = current_theta.to_vec();
}

/// Rescale so the largest entry is 1; a zero vector is left unchanged.
pub fn normalize_fisher(fisher: &mut [f64]) {
    let max = fisher.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for f in fisher.iter_mut() {
            *f /= max;
        }
    }
}

/// Accumulate squared log-policy gradients at the actions taken.
pub fn fisher_from_transitions(net: &PolicyNet, transitions: &[Transition], sum_sq: &mut [f64]) {
    let mut grad = vec![0.0; net.theta.len()];
    let mut dlogits = vec![0.0; net.actions];
    for tr in transitions {
        let cache = net.forward(&tr.obs);
        for a in 0..net.actions {
            let indicator = if a == tr.action { 1.0 } else { 0.0 };
            dlogits[a] = indicator - cache.probs[a];
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        net.backward(&cache, &dlogits, 0.0, &mut grad);
        for (s, g) in sum_sq.iter_mut().zip(&grad) {
            *s += g * g;
        }
    }
}

/// Diagonal empirical Fisher from `sample_count` fresh on-policy rollout
/// batches on the given task.
pub fn estimate_fisher<R: Rng>(
    net: &PolicyNet,
    task: &TaskSpec,
    sample_count: usize,
    unroll: usize,
    normalize: bool,
    rng: &mut R,
) -> Result<Vec<f64>, EnvError> {
    assert!(sample_count >= 1);
    let mut runner = EnvRunner::new(task, rng)?;
    let mut sum_sq = vec![0.0; net.theta.len()];
    let mut total = 0usize;
    for _ in 0..sample_count {
        let rollout = runner.collect(net, unroll, rng)?;
        fisher_from_transitions(net, &rollout.transitions, &mut sum_sq);
        total += rollout.len();
    }
    for s in sum_sq.iter_mut() {
        *s /= total as f64;
    }
    if normalize {
        normalize_fisher(&mut sum_sq);
    }
    Ok(sum_sq)
}
