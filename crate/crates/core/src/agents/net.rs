//! Dense softmax actor-critic with analytic gradients.
//!
//! One tanh hidden layer, a linear policy head and a linear value head over
//! a flat parameter vector. Observations are binary, so forward passes sum
//! active weight columns instead of multiplying.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::Observation;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub obs_dim: usize,
    pub hidden: usize,
    pub actions: usize,
    /// Flat layout: W1 (hidden x obs_dim), b1, W2 (actions x hidden), b2,
    /// value weights (hidden), value bias.
    pub theta: Vec<f64>,
}

impl PolicyNet {
    pub fn param_count(obs_dim: usize, hidden: usize, actions: usize) -> usize {
        hidden * obs_dim + hidden + actions * hidden + actions + hidden + 1
    }

    pub fn zeros(obs_dim: usize, hidden: usize, actions: usize) -> Self {
        PolicyNet {
            obs_dim,
            hidden,
            actions,
            theta: vec![0.0; Self::param_count(obs_dim, hidden, actions)],
        }
    }

    /// Deterministic scaled-uniform init; biases start at zero.
    pub fn init(obs_dim: usize, hidden: usize, actions: usize, seed: u64) -> Self {
        let mut net = Self::zeros(obs_dim, hidden, actions);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound1 = 1.0 / (obs_dim as f64).sqrt();
        for h in 0..hidden {
            for j in 0..obs_dim {
                let idx = net.w1(h, j);
                net.theta[idx] = rng.gen_range(-bound1..bound1);
            }
        }
        let bound2 = 1.0 / (hidden as f64).sqrt();
        for a in 0..actions {
            for h in 0..hidden {
                let idx = net.w2(a, h);
                net.theta[idx] = rng.gen_range(-bound2..bound2);
            }
        }
        for h in 0..hidden {
            let idx = net.w3(h);
            net.theta[idx] = rng.gen_range(-bound2..bound2);
        }
        net
    }

    #[inline]
    fn w1(&self, h: usize, j: usize) -> usize {
        h * self.obs_dim + j
    }
    #[inline]
    fn b1(&self, h: usize) -> usize {
        self.hidden * self.obs_dim + h
    }
    #[inline]
    fn w2(&self, a: usize, h: usize) -> usize {
        self.hidden * self.obs_dim + self.hidden + a * self.hidden + h
    }
    #[inline]
    fn b2(&self, a: usize) -> usize {
        self.hidden * self.obs_dim + self.hidden + self.actions * self.hidden + a
    }
    #[inline]
    fn w3(&self, h: usize) -> usize {
        self.hidden * self.obs_dim + self.hidden + self.actions * self.hidden + self.actions + h
    }
    #[inline]
    fn b3(&self) -> usize {
        self.theta.len() - 1
    }

    /// Parameter index of the policy-head bias for action `a`; used by
    /// tests that pin logits directly.
    pub fn logit_bias_index(&self, a: usize) -> usize {
        self.b2(a)
    }

    pub fn forward(&self, obs: &Observation) -> ForwardCache {
        debug_assert_eq!(obs.len(), self.obs_dim);
        let active: Vec<usize> = obs.active().collect();
        let mut hidden = vec![0.0; self.hidden];
        for h in 0..self.hidden {
            let mut pre = self.theta[self.b1(h)];
            for &j in &active {
                pre += self.theta[self.w1(h, j)];
            }
            hidden[h] = pre.tanh();
        }
        let mut logits = vec![0.0; self.actions];
        for a in 0..self.actions {
            let mut z = self.theta[self.b2(a)];
            for h in 0..self.hidden {
                z += self.theta[self.w2(a, h)] * hidden[h];
            }
            logits[a] = z;
        }
        let mut value = self.theta[self.b3()];
        for h in 0..self.hidden {
            value += self.theta[self.w3(h)] * hidden[h];
        }
        let log_probs = log_softmax(&logits);
        let probs: Vec<f64> = log_probs.iter().map(|&lp| lp.exp()).collect();
        ForwardCache { active, hidden, logits, log_probs, probs, value }
    }

    /// Accumulate d(loss)/d(theta) into `grad` given head gradients.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], dvalue: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.theta.len());
        let mut dhidden = vec![0.0; self.hidden];
        for a in 0..self.actions {
            let da = dlogits[a];
            if da == 0.0 {
                continue;
            }
            grad[self.b2(a)] += da;
            for h in 0..self.hidden {
                grad[self.w2(a, h)] += da * cache.hidden[h];
                dhidden[h] += da * self.theta[self.w2(a, h)];
            }
        }
        if dvalue != 0.0 {
            grad[self.b3()] += dvalue;
            for h in 0..self.hidden {
                grad[self.w3(h)] += dvalue * cache.hidden[h];
                dhidden[h] += dvalue * self.theta[self.w3(h)];
            }
        }
        for h in 0..self.hidden {
            let dpre = dhidden[h] * (1.0 - cache.hidden[h] * cache.hidden[h]);
            if dpre == 0.0 {
                continue;
            }
            grad[self.b1(h)] += dpre;
            for &j in &cache.active {
                grad[self.w1(h, j)] += dpre;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub active: Vec<usize>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|&lp| lp.exp()).collect()
}

/// Argmax with ties broken by the lowest action index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Sample an action index from a probability vector.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// KL(p || q) over discrete distributions; zero-probability p terms vanish.
pub fn kl_div(p: &[f64], q_log: &[f64]) -> f64 {
    p.iter()
        .zip(q_log)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &lq)| pi * (pi.ln() - lq))
        .sum()
}

pub fn entropy(probs: &[f64], log_probs: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(log_probs)
        .map(|(&p, &lp)| if p > 0.0 { p * lp } else { 0.0 })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[2.0, -1.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 1.0, 1.0, 0.0]), 1);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        use rand::SeedableRng;
        let probs = vec![0.25; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0u32; 4];
        let draws = 10_000;
        for _ in 0..draws {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() <= 0.02, "freq {freq}");
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let logits = vec![0.3, -1.2, 2.0, 0.0];
        let lp = log_softmax(&logits);
        let p = softmax(&logits);
        assert!(kl_div(&p, &lp).abs() <= 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-30.0f64..30.0, 2..6)) {
            let p = softmax(&logits);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
