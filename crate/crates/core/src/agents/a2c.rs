//! Synchronous advantage actor-critic update with analytic gradients.

use thiserror::Error;

use super::net::{entropy, PolicyNet};
use crate::env::Observation;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss}; {detail}")]
    NonFinite { loss: f64, detail: String },
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    /// Action distribution of the policy that produced this step.
    pub behavior_probs: Vec<f64>,
    /// Value estimate of that policy at this state.
    pub behavior_value: f64,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    /// Value of the state following the final transition; zero if it ended
    /// an episode.
    pub bootstrap_value: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// n-step discounted returns with episode resets inside the rollout.
pub fn compute_returns(rollout: &Rollout, discount: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rollout.len()];
    let mut g = rollout.bootstrap_value;
    for (i, tr) in rollout.transitions.iter().enumerate().rev() {
        g = if tr.done { tr.reward } else { tr.reward + discount * g };
        returns[i] = g;
    }
    returns
}

/// One element of an update batch. `ret` is the value target; `advantage`
/// is the detached policy-gradient coefficient, fixed before the update.
/// Replayed items carry the stored behavior distribution for the cloning
/// losses.
pub struct BatchItem<'a> {
    pub obs: &'a Observation,
    pub action: usize,
    pub ret: f64,
    pub advantage: f64,
    pub clone_to: Option<(&'a [f64], f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub baseline_cost: f64,
    pub entropy_cost: f64,
    pub policy_cloning_cost: f64,
    pub value_cloning_cost: f64,
}

/// Mean actor-critic loss over the batch and its gradient:
/// policy-gradient term with detached advantages, weighted value L2,
/// weighted negative entropy, plus cloning penalties on items that carry a
/// behavior distribution.
pub fn a2c_loss_grad(net: &PolicyNet, items: &[BatchItem<'_>], w: &LossWeights) -> (f64, Vec<f64>) {
    assert!(!items.is_empty(), "empty update batch");
    let scale = 1.0 / items.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.theta.len()];
    let mut dlogits = vec![0.0; net.actions];
    for item in items {
        let cache = net.forward(item.obs);
        let ent = entropy(&cache.probs, &cache.log_probs);
        loss += scale
            * (-cache.log_probs[item.action] * item.advantage
                + w.baseline_cost * (cache.value - item.ret) * (cache.value - item.ret)
                - w.entropy_cost * ent);
        for a in 0..net.actions {
            let indicator = if a == item.action { 1.0 } else { 0.0 };
            // d(-log pi(a))/dz = p - e_a, times the detached advantage.
            let pg = item.advantage * (cache.probs[a] - indicator);
            // d(-entropy)/dz_k = p_k (log p_k + H).
            let ent_grad = w.entropy_cost * cache.probs[a] * (cache.log_probs[a] + ent);
            dlogits[a] = scale * (pg + ent_grad);
        }
        let mut dvalue = scale * 2.0 * w.baseline_cost * (cache.value - item.ret);
        if let Some((behavior_probs, behavior_value)) = item.clone_to {
            // KL(behavior || current) and an L2 pull toward the stored value.
            let kl = super::net::kl_div(behavior_probs, &cache.log_probs);
            let vdiff = cache.value - behavior_value;
            loss += scale * (w.policy_cloning_cost * kl + w.value_cloning_cost * vdiff * vdiff);
            for a in 0..net.actions {
                dlogits[a] += scale * w.policy_cloning_cost * (cache.probs[a] - behavior_probs[a]);
            }
            dvalue += scale * 2.0 * w.value_cloning_cost * vdiff;
        }
        net.backward(&cache, &dlogits, dvalue, &mut grad);
    }
    (loss, grad)
}

/// Distillation loss for progress-and-compress: mean KL from a fixed
/// teacher distribution to the student policy, scaled by `kl_cost`.
pub fn distill_loss_grad(
    student: &PolicyNet,
    items: &[(&Observation, &[f64])],
    kl_cost: f64,
) -> (f64, Vec<f64>) {
    assert!(!items.is_empty(), "empty distillation batch");
    let scale = 1.0 / items.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; student.theta.len()];
    let mut dlogits = vec![0.0; student.actions];
    for (obs, teacher) in items {
        let cache = student.forward(obs);
        loss += scale * kl_cost * super::net::kl_div(teacher, &cache.log_probs);
        for a in 0..student.actions {
            dlogits[a] = scale * kl_cost * (cache.probs[a] - teacher[a]);
        }
        student.backward(&cache, &dlogits, 0.0, &mut grad);
    }
    (loss, grad)
}

/// Scale the gradient down to `max_norm` if its global L2 norm exceeds it.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// RMSProp accumulator (alpha-decayed squared gradients, no momentum).
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub sq_avg: Vec<f64>,
}

impl RmsProp {
    pub fn new(params: usize) -> Self {
        RmsProp { sq_avg: vec![0.0; params] }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, alpha: f64, eps: f64) {
        for ((t, &g), sq) in theta.iter_mut().zip(grad).zip(self.sq_avg.iter_mut()) {
            *sq = alpha * *sq + (1.0 - alpha) * g * g;
            *t -= lr * g / (sq.sqrt() + eps);
        }
    }
}

pub fn ensure_finite(loss: f64, grad: &[f64], context: &str) -> Result<(), TrainError> {
    if loss.is_finite() && grad.iter().all(|g| g.is_finite()) {
        return Ok(());
    }
    let bad = grad.iter().filter(|g| !g.is_finite()).count();
    Err(TrainError::NonFinite {
        loss,
        detail: format!("{context}: {bad} non-finite gradient entries of {}", grad.len()),
    })
}

#[cfg(test)]
pub(crate) mod fd {
    //! Central finite-difference oracle for gradient checks.

    pub fn gradient<F: FnMut(&[f64]) -> f64>(theta: &[f64], mut f: F, h: f64) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        let mut probe = theta.to_vec();
        for i in 0..theta.len() {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            g[i] = (up - down) / (2.0 * h);
        }
        g
    }

    pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic
            .iter()
            .zip(numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / norm.max(1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::test_support::{random_net, random_obs, random_rollout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const WEIGHTS: LossWeights = LossWeights {
        baseline_cost: 0.5,
        entropy_cost: 0.01,
        policy_cloning_cost: 0.01,
        value_cloning_cost: 0.005,
    };

    #[test]
    fn returns_reset_at_episode_ends() {
        let obs = Observation(vec![0; 4]);
        let tr = |reward, done| Transition {
            obs: obs.clone(),
            action: 0,
            reward,
            done,
            behavior_probs: vec![1.0],
            behavior_value: 0.0,
        };
        let rollout = Rollout {
            transitions: vec![tr(1.0, false), tr(0.0, true), tr(2.0, false)],
            bootstrap_value: 10.0,
        };
        let g = compute_returns(&rollout, 0.5);
        // Last: 2 + 0.5*10; middle terminal: 0; first: 1 + 0.5*0.
        assert_eq!(g, vec![1.0, 0.0, 7.0]);
    }

    #[test]
    fn zero_advantage_rollout_leaves_policy_head_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(6, 5, 4, &mut rng);
        let obs: Vec<Observation> = (0..8).map(|_| random_obs(6, &mut rng)).collect();
        // Return targets equal to the current value make every advantage zero.
        let items: Vec<BatchItem> = obs
            .iter()
            .map(|o| BatchItem {
                obs: o,
                action: 1,
                ret: net.forward(o).value,
                advantage: 0.0,
                clone_to: None,
            })
            .collect();
        let w = LossWeights { entropy_cost: 0.0, baseline_cost: 0.0, ..WEIGHTS };
        let (_, grad) = a2c_loss_grad(&net, &items, &w);
        assert!(grad.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn uniform_policy_is_entropy_stationary() {
        // Zero weights give a uniform policy; the entropy term alone must
        // produce no gradient there.
        let net = PolicyNet::zeros(6, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o = random_obs(6, &mut rng);
        let items = [BatchItem {
            obs: &o,
            action: 2,
            ret: net.forward(&o).value,
            advantage: 0.0,
            clone_to: None,
        }];
        let w = LossWeights { baseline_cost: 0.0, ..WEIGHTS };
        let (_, grad) = a2c_loss_grad(&net, &items, &w);
        assert!(grad.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn a2c_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for instance in 0..5 {
            let mut net = random_net(7, 6, 4, &mut rng);
            let rollout = random_rollout(&net, 7, 9, &mut rng);
            let returns = compute_returns(&rollout, 0.99);
            let items: Vec<BatchItem> = rollout
                .transitions
                .iter()
                .zip(&returns)
                .map(|(t, &g)| BatchItem {
                    obs: &t.obs,
                    action: t.action,
                    ret: g,
                    advantage: g - net.forward(&t.obs).value,
                    clone_to: None,
                })
                .collect();
            let (_, analytic) = a2c_loss_grad(&net, &items, &WEIGHTS);
            let base = net.theta.clone();
            let numeric = fd::gradient(&base, |theta| {
                net.theta.copy_from_slice(theta);
                a2c_loss_grad(&net, &items, &WEIGHTS).0
            }, 1e-5);
            net.theta = base;
            let err = fd::relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "instance {instance}: relative error {err}");
        }
    }

    #[test]
    fn cloning_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for instance in 0..5 {
            let mut net = random_net(6, 5, 4, &mut rng);
            let teacher = random_net(6, 5, 4, &mut rng);
            let obs: Vec<Observation> = (0..6).map(|_| random_obs(6, &mut rng)).collect();
            let stored: Vec<(Vec<f64>, f64)> = obs
                .iter()
                .map(|o| {
                    let c = teacher.forward(o);
                    (c.probs, c.value)
                })
                .collect();
            let items: Vec<BatchItem> = obs
                .iter()
                .zip(&stored)
                .map(|(o, (p, v))| BatchItem {
                    obs: o,
                    action: 0,
                    ret: 0.3,
                    advantage: 0.3 - net.forward(o).value,
                    clone_to: Some((p.as_slice(), *v)),
                })
                .collect();
            let (_, analytic) = a2c_loss_grad(&net, &items, &WEIGHTS);
            let base = net.theta.clone();
            let numeric = fd::gradient(&base, |theta| {
                net.theta.copy_from_slice(theta);
                a2c_loss_grad(&net, &items, &WEIGHTS).0
            }, 1e-5);
            net.theta = base;
            let err = fd::relative_error(&analytic, &numeric);
            assert!(err < 1e-6, "instance {instance}: relative error {err}");
        }
    }

    #[test]
    fn cloning_terms_vanish_when_current_matches_behavior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = random_net(6, 5, 4, &mut rng);
        let o = random_obs(6, &mut rng);
        let c = net.forward(&o);
        let with = [BatchItem {
            obs: &o,
            action: 1,
            ret: c.value,
            advantage: 0.0,
            clone_to: Some((c.probs.as_slice(), c.value)),
        }];
        let without =
            [BatchItem { obs: &o, action: 1, ret: c.value, advantage: 0.0, clone_to: None }];
        let (l1, _) = a2c_loss_grad(&net, &with, &WEIGHTS);
        let (l2, _) = a2c_loss_grad(&net, &without, &WEIGHTS);
        assert!((l1 - l2).abs() <= 1e-12);
    }

    #[test]
    fn distill_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for instance in 0..5 {
            let mut student = random_net(6, 5, 4, &mut rng);
            let teacher = random_net(6, 5, 4, &mut rng);
            let obs: Vec<Observation> = (0..6).map(|_| random_obs(6, &mut rng)).collect();
            let teacher_probs: Vec<Vec<f64>> =
                obs.iter().map(|o| teacher.forward(o).probs).collect();
            let items: Vec<(&Observation, &[f64])> = obs
                .iter()
                .zip(&teacher_probs)
                .map(|(o, p)| (o, p.as_slice()))
                .collect();
            let (_, analytic) = distill_loss_grad(&student, &items, 1.0);
            let base = student.theta.clone();
            let numeric = fd::gradient(&base, |theta| {
                student.theta.copy_from_slice(theta);
                distill_loss_grad(&student, &items, 1.0).0
            }, 1e-5);
            student.theta = base;
            let err = fd::relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "instance {instance}: relative error {err}");
        }
    }

    #[test]
    fn distillation_is_zero_when_student_equals_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = random_net(6, 5, 4, &mut rng);
        let o = random_obs(6, &mut rng);
        let probs = net.forward(&o).probs;
        let (loss, _) = distill_loss_grad(&net, &[(&o, probs.as_slice())], 1.0);
        assert!(loss.abs() <= 1e-12);
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut g, 40.0);
        assert_eq!(norm, 5.0);
        assert_eq!(g, vec![3.0, 4.0]);
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        let clipped: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_reported_with_diagnostics() {
        let err = ensure_finite(f64::NAN, &[1.0, f64::INFINITY], "unit").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "{msg}");
        assert!(msg.contains("unit"), "{msg}");
    }
}
