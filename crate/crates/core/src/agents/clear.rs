//! Reservoir replay with behavioral cloning regularizers.

use rand::Rng;

use super::a2c::{
    a2c_loss_grad, clip_global_norm, compute_returns, ensure_finite, BatchItem, LossWeights,
    Rollout, RmsProp, TrainError,
};
use super::net::PolicyNet;
use super::{PolicyConfig, UpdateStats};
use crate::env::Observation;

/// Replay item: the transition plus the behavior policy's distribution,
/// value estimate, and n-step return at storage time.
#[derive(Debug, Clone)]
pub struct StoredTransition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub behavior_probs: Vec<f64>,
    pub behavior_value: f64,
    pub return_est: f64,
}

#[derive(Debug, Clone)]
pub struct ClearState {
    pub buffer: Vec<StoredTransition>,
    pub capacity: usize,
    /// Total insertion attempts, retained or not.
    pub seen_count: u64,
    pub policy_cloning_cost: f64,
    pub value_cloning_cost: f64,
}

impl ClearState {
    pub fn new(capacity: usize, policy_cloning_cost: f64, value_cloning_cost: f64) -> Self {
        ClearState {
            buffer: Vec::new(),
            capacity,
            seen_count: 0,
            policy_cloning_cost,
            value_cloning_cost,
        }
    }
}

/// Reservoir sampling, algorithm R: the buffer holds a uniform sample of
/// everything ever inserted.
pub fn reservoir_insert<R: Rng>(state: &mut ClearState, item: StoredTransition, rng: &mut R) {
    state.seen_count += 1;
    if state.buffer.len() < state.capacity {
        state.buffer.push(item);
        return;
    }
    let u = rng.gen_range(0..state.seen_count);
    if (u as usize) < state.capacity {
        state.buffer[u as usize] = item;
    }
}

/// One update: half the batch from the fresh rollout, half replayed
/// uniformly from the buffer, actor-critic loss on all of it and cloning
/// losses on the replayed half; afterwards every novel transition is offered
/// to the reservoir.
pub(super) fn clear_update<R: Rng>(
    net: &mut PolicyNet,
    opt: &mut RmsProp,
    state: &mut ClearState,
    rollout: &Rollout,
    cfg: &PolicyConfig,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    let returns = compute_returns(rollout, cfg.discount);
    let novel_used = rollout.len().min(cfg.batch_size.div_ceil(2));
    let replay_used = (cfg.batch_size / 2).min(state.buffer.len());
    let replay_idx = rand::seq::index::sample(rng, state.buffer.len(), replay_used);

    let weights = LossWeights {
        baseline_cost: cfg.baseline_cost,
        entropy_cost: cfg.entropy_cost,
        policy_cloning_cost: state.policy_cloning_cost,
        value_cloning_cost: state.value_cloning_cost,
    };
    let (loss, mut grad) = {
        let mut items: Vec<BatchItem<'_>> = Vec::with_capacity(novel_used + replay_used);
        for (tr, &ret) in rollout.transitions.iter().zip(&returns).take(novel_used) {
            items.push(BatchItem {
                obs: &tr.obs,
                action: tr.action,
                ret,
                advantage: ret - tr.behavior_value,
                clone_to: None,
            });
        }
        for idx in replay_idx.iter() {
            let st = &state.buffer[idx];
            // Replayed advantages use the stored return against the current
            // critic, both detached.
            items.push(BatchItem {
                obs: &st.obs,
                action: st.action,
                ret: st.return_est,
                advantage: st.return_est - net.forward(&st.obs).value,
                clone_to: Some((st.behavior_probs.as_slice(), st.behavior_value)),
            });
        }
        a2c_loss_grad(net, &items, &weights)
    };
    ensure_finite(loss, &grad, "clear update")?;
    clip_global_norm(&mut grad, cfg.grad_clip);
    opt.step(&mut net.theta, &grad, cfg.learning_rate, cfg.rmsprop_alpha, cfg.rmsprop_eps);

    for (tr, &ret) in rollout.transitions.iter().zip(&returns) {
        reservoir_insert(
            state,
            StoredTransition {
                obs: tr.obs.clone(),
                action: tr.action,
                reward: tr.reward,
                done: tr.done,
                behavior_probs: tr.behavior_probs.clone(),
                behavior_value: tr.behavior_value,
                return_est: ret,
            },
            rng,
        );
    }
    Ok(UpdateStats { loss, novel: novel_used, replayed: replay_used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(id: usize) -> StoredTransition {
        StoredTransition {
            obs: Observation(vec![0; 4]),
            action: id,
            reward: 0.0,
            done: false,
            behavior_probs: vec![1.0],
            behavior_value: 0.0,
            return_est: 0.0,
        }
    }

    #[test]
    fn fill_phase_retains_everything() {
        let mut s = ClearState::new(10, 0.01, 0.005);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..10 {
            reservoir_insert(&mut s, item(i), &mut rng);
        }
        assert_eq!(s.buffer.len(), 10);
        assert_eq!(s.seen_count, 10);
        let kept: Vec<usize> = s.buffer.iter().map(|t| t.action).collect();
        assert_eq!(kept, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn capacity_one_keeps_the_second_item_half_the_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 10_000;
        let mut second_kept = 0u32;
        for _ in 0..trials {
            let mut s = ClearState::new(1, 0.01, 0.005);
            reservoir_insert(&mut s, item(0), &mut rng);
            reservoir_insert(&mut s, item(1), &mut rng);
            if s.buffer[0].action == 1 {
                second_kept += 1;
            }
        }
        let freq = second_kept as f64 / trials as f64;
        assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
    }

    #[test]
    fn buffer_never_exceeds_capacity() {
        let mut s = ClearState::new(7, 0.01, 0.005);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..1000 {
            reservoir_insert(&mut s, item(i), &mut rng);
            assert!(s.buffer.len() <= 7);
        }
        assert_eq!(s.seen_count, 1000);
    }
}
