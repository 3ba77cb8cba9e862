//! Progress-and-compress: an active column learns each task, then its
//! policy is distilled into a consolidated knowledge base protected by
//! online weight consolidation. Evaluation always reads the knowledge base.

use super::a2c::{
    clip_global_norm, distill_loss_grad, ensure_finite, Rollout, RmsProp, TrainError,
};
use super::ewc::OnlineEwcState;
use super::net::PolicyNet;
use super::{PolicyConfig, UpdateStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Progress,
    Compress,
}

#[derive(Debug, Clone)]
pub struct PcState {
    pub kb: PolicyNet,
    pub kb_opt: RmsProp,
    pub protector: OnlineEwcState,
    pub kl_cost: f64,
    pub phase: Phase,
    pub steps_in_visit: u64,
    pub visit_budget: u64,
}

impl PcState {
    pub fn new(kb: PolicyNet, cfg: &PolicyConfig) -> Self {
        let params = kb.theta.len();
        PcState {
            kb,
            kb_opt: RmsProp::new(params),
            protector: OnlineEwcState::new(
                params,
                cfg.online_gamma,
                cfg.lambda,
                cfg.fisher_samples,
                cfg.normalize_fisher,
            ),
            kl_cost: cfg.kl_cost,
            phase: Phase::Progress,
            steps_in_visit: 0,
            visit_budget: 0,
        }
    }

    /// Phase for an update beginning after `steps_in_visit` steps: the first
    /// half of the visit budget progresses the active column, the second
    /// half compresses into the knowledge base.
    pub fn phase_for_current_step(&self) -> Phase {
        if self.steps_in_visit < self.visit_budget / 2 {
            Phase::Progress
        } else {
            Phase::Compress
        }
    }
}

/// Distill the active policy's action distributions on freshly visited
/// states into the knowledge base, under the online-EWC penalty.
pub(super) fn pc_compress(
    state: &mut PcState,
    rollout: &Rollout,
    cfg: &PolicyConfig,
) -> Result<UpdateStats, TrainError> {
    let items: Vec<(&crate::env::Observation, &[f64])> = rollout
        .transitions
        .iter()
        .map(|t| (&t.obs, t.behavior_probs.as_slice()))
        .collect();
    let (kl_loss, mut grad) = distill_loss_grad(&state.kb, &items, state.kl_cost);
    let (pen_loss, pen_grad) = state.protector.penalty(&state.kb.theta);
    for (g, p) in grad.iter_mut().zip(&pen_grad) {
        *g += p;
    }
    let loss = kl_loss + pen_loss;
    ensure_finite(loss, &grad, "compress update")?;
    clip_global_norm(&mut grad, cfg.grad_clip);
    state.kb_opt.step(
        &mut state.kb.theta,
        &grad,
        cfg.learning_rate,
        cfg.rmsprop_alpha,
        cfg.rmsprop_eps,
    );
    Ok(UpdateStats { loss, novel: rollout.len(), replayed: 0 })
}
