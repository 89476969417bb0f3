use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Params;
use crate::models::{Action, ActorCriticNet, ModelError};
use crate::worlds::{Environment, Observation, StepInfo, WorldError};

/// A fixed-length slice of experience.
#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub observations: Vec<Observation>,
    /// The frame each step produced; differs from the next entry of
    /// `observations` only where an episode ended and the env was reset.
    pub next_observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub extrinsic_rewards: Vec<f32>,
    pub intrinsic_rewards: Vec<f32>,
    pub values: Vec<f32>,
    pub log_probs: Vec<f32>,
    pub terminals: Vec<bool>,
    pub infos: Vec<StepInfo>,
    /// V of the state after the last step (unused if that step was terminal).
    pub bootstrap_value: f32,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `r_ext + r_int` per step.
    pub fn rewards(&self) -> Vec<f32> {
        self.extrinsic_rewards.iter().zip(&self.intrinsic_rewards).map(|(&e, &i)| mixed_reward(e, i)).collect()
    }
}

/// Additive mixing; η is already inside `r_int`.
pub fn mixed_reward(r_ext: f32, r_int: f32) -> f32 {
    debug_assert!(r_int >= 0.0);
    r_ext + r_int
}

/// n-step discounted returns, cut at terminals and bootstrapped from
/// `bootstrap` after the last step, with `A_t = R_t − V(s_t)`.
pub fn compute_returns_advantages(rewards: &[f32], values: &[f32], terminals: &[bool], gamma: f64, bootstrap: f32) -> (Vec<f32>, Vec<f32>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), terminals.len());
    let mut returns = vec![0.0f32; rewards.len()];
    let mut running = bootstrap as f64;
    for t in (0..rewards.len()).rev() {
        if terminals[t] {
            running = 0.0;
        }
        running = rewards[t] as f64 + gamma * running;
        returns[t] = running as f32;
    }
    let advantages = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    (returns, advantages)
}

/// Anything that picks actions from observations.
pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Result<Action, ModelError>;
}

/// Uniform over the six actions.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _: &Observation) -> Result<Action, ModelError> {
        Ok(Action::ALL[self.rng.gen_range(0..Action::COUNT)])
    }
}

/// Samples from a trained actor-critic's action distribution.
#[derive(Clone, Debug)]
pub struct ActorCriticPolicy {
    net: ActorCriticNet,
    params: Params<f32>,
    rng: ChaCha8Rng,
}

impl ActorCriticPolicy {
    pub fn new(params: Params<f32>, seed: u64) -> Self {
        Self { net: ActorCriticNet::new(), params, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for ActorCriticPolicy {
    fn act(&mut self, obs: &Observation) -> Result<Action, ModelError> {
        let (probs, _) = self.net.policy_value(&self.params, obs)?;
        Ok(sample_action(&probs, &mut self.rng))
    }
}

pub(crate) fn sample_action<R: Rng>(probs: &[f32], rng: &mut R) -> Action {
    match WeightedIndex::new(probs) {
        Ok(d) => Action::ALL[d.sample(rng)],
        Err(_) => Action::ALL[rng.gen_range(0..Action::COUNT)],
    }
}

/// `len` uniformly random steps from the env's current state. Log-probs are
/// `ln(1/6)`, values and intrinsic rewards are zero.
pub fn random_policy_rollout(env: &mut dyn Environment, first: Observation, seed: u64, len: usize) -> Result<Rollout, WorldError> {
    let mut policy = RandomPolicy::new(seed);
    let mut r = Rollout::default();
    let mut obs = first;
    let log_p = (1.0f32 / Action::COUNT as f32).ln();
    for _ in 0..len {
        let action = policy.act(&obs).expect("random policy is infallible");
        let (next, info) = env.step(action)?;
        r.observations.push(obs);
        r.next_observations.push(next.clone());
        r.actions.push(action);
        r.extrinsic_rewards.push(info.extrinsic_reward);
        r.intrinsic_rewards.push(0.0);
        r.values.push(0.0);
        r.log_probs.push(log_p);
        r.terminals.push(info.terminal);
        r.infos.push(info);
        obs = next;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_step_hand_example() {
        let (r, a) = compute_returns_advantages(&[0.0, 0.0, 1.0], &[0.0; 3], &[false, false, true], 0.99, 5.0);
        let want = [0.9801, 0.99, 1.0];
        for (x, y) in r.iter().zip(want) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(r, a);
    }

    #[test]
    fn degenerate_cases() {
        let (r, _) = compute_returns_advantages(&[0.0; 4], &[0.3; 4], &[false; 4], 0.99, 0.0);
        assert_eq!(r, vec![0.0; 4]);
        let rewards = [0.5, -1.0, 2.0];
        let (r, a) = compute_returns_advantages(&rewards, &[1.0; 3], &[false; 3], 1e-12, 9.0);
        for i in 0..3 {
            assert!((r[i] - rewards[i]).abs() < 1e-9);
            assert!((a[i] - (rewards[i] - 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn bootstrap_flows_through_non_terminal_steps() {
        let (r, _) = compute_returns_advantages(&[0.0, 0.0], &[0.0; 2], &[false, false], 0.5, 4.0);
        assert_eq!(r, vec![1.0, 2.0]);
    }

    #[test]
    fn mixing_is_additive() {
        assert_eq!(mixed_reward(1.0, 0.0), 1.0);
        assert_eq!(mixed_reward(0.0, 0.37), 0.37);
        assert_eq!(mixed_reward(-0.01, 0.0), -0.01);
    }

    #[test]
    fn random_policy_is_seeded() {
        let obs = Observation::from_fn(|_, _, _| 0.0);
        let run = |seed| {
            let mut p = RandomPolicy::new(seed);
            (0..50).map(|_| p.act(&obs).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        assert!((0..100).all(|_| sample_action(&probs, &mut rng) == Action::MoveLeft));
    }
}
