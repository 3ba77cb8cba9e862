//! On-policy data collection against a gridworld task.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::a2c::{Rollout, Transition};
use super::net::{sample_categorical, PolicyNet};
use crate::config::TaskSpec;
use crate::env::{self, EnvError, GridState, Observation, Split};

/// Holds the live episode for one task. Episodes reset inside rollouts, so
/// a rollout can span several of them. Dynamics noise (monsters, traps) is
/// drawn from a per-episode stream seeded off the caller's rng, keeping
/// layout identity and dynamics noise independently controllable.
pub struct EnvRunner {
    task: TaskSpec,
    state: GridState,
    obs: Observation,
    episode_rng: ChaCha8Rng,
}

impl EnvRunner {
    pub fn new<R: Rng>(task: &TaskSpec, rng: &mut R) -> Result<Self, EnvError> {
        let ctx = env::sample_context(task.task_id, task.train_context_count, Split::Train, rng);
        let (state, obs) = env::reset(&task.factors, ctx)?;
        let episode_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        Ok(EnvRunner { task: task.clone(), state, obs, episode_rng })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    fn reset_episode<R: Rng>(&mut self, rng: &mut R) -> Result<(), EnvError> {
        let ctx = env::sample_context(
            self.task.task_id,
            self.task.train_context_count,
            Split::Train,
            rng,
        );
        let (state, obs) = env::reset(&self.task.factors, ctx)?;
        self.state = state;
        self.obs = obs;
        self.episode_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        Ok(())
    }

    /// Collect exactly `steps` transitions acting with `net` in train mode,
    /// auto-resetting finished episodes.
    pub fn collect<R: Rng>(
        &mut self,
        net: &PolicyNet,
        steps: usize,
        rng: &mut R,
    ) -> Result<Rollout, EnvError> {
        let mut transitions = Vec::with_capacity(steps);
        for _ in 0..steps {
            let cache = net.forward(&self.obs);
            let action = sample_categorical(&cache.probs, rng);
            let (next_obs, reward, done) = env::step(
                &mut self.state,
                &self.task.factors,
                env::Action::from_index(action),
                &mut self.episode_rng,
            )?;
            transitions.push(Transition {
                obs: std::mem::replace(&mut self.obs, next_obs),
                action,
                reward: reward.clamp(-1.0, 1.0),
                done,
                behavior_probs: cache.probs,
                behavior_value: cache.value,
            });
            if done {
                self.reset_episode(rng)?;
            }
        }
        let bootstrap_value = match transitions.last() {
            Some(t) if t.done => 0.0,
            _ => net.forward(&self.obs).value,
        };
        Ok(Rollout { transitions, bootstrap_value })
    }
}
