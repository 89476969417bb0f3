use super::layers::{ConvLayer, LinearLayer};
use super::{init_rng, observation_var, Action, ModelError};
use crate::autodiff::{BoundParams, Params, Scalar, Tape, Var};
use crate::worlds::{Observation, OBS_SIDE};

/// Policy and value heads on top of four stride-2 3×3 convolutions.
#[derive(Clone, Debug)]
pub struct ActorCriticNet {
    convs: Vec<ConvLayer>,
    policy: LinearLayer,
    value: LinearLayer,
    chain: Vec<usize>,
}

/// Tape handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput {
    pub logits: Var,
    pub log_probs: Var,
    pub probs: Var,
    pub value: Var,
}

pub const AC_PREFIX: &str = "ac.";
const FILTERS: usize = 32;

impl Default for ActorCriticNet {
    fn default() -> Self {
        Self::new()
    }
}

impl ActorCriticNet {
    pub fn new() -> Self {
        let convs: Vec<_> = (1..=4).map(|i| ConvLayer::new(&format!("ac.conv{i}"), if i == 1 { 3 } else { FILTERS }, FILTERS, 3, 2, 1)).collect();
        let mut chain = vec![OBS_SIDE];
        for c in &convs {
            chain.push(c.out_size(*chain.last().unwrap()));
        }
        assert_eq!(chain, [64, 32, 16, 8, 4], "actor-critic spatial chain");
        let features = FILTERS * chain[4] * chain[4];
        assert_eq!(features, 512);
        Self { convs, policy: LinearLayer::new("ac.policy", features, Action::COUNT), value: LinearLayer::new("ac.value", features, 1), chain }
    }

    /// Spatial side length after each conv, starting from the input.
    pub fn spatial_chain(&self) -> &[usize] {
        &self.chain
    }

    pub fn feature_len(&self) -> usize {
        self.policy.in_features
    }

    pub fn prefix(&self) -> &'static str {
        AC_PREFIX
    }

    pub fn init_params(&self, seed: u64) -> Params<f32> {
        let mut rng = init_rng(seed, 1);
        let mut p = Params::new();
        for c in &self.convs {
            c.init(&mut p, &mut rng);
        }
        self.policy.init(&mut p, &mut rng);
        self.value.init(&mut p, &mut rng);
        p
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, obs: Var) -> Result<PolicyOutput, ModelError> {
        let mut h = obs;
        for c in &self.convs {
            h = c.forward(tape, p, h)?;
            h = tape.relu(h)?;
        }
        let logits = self.policy.forward(tape, p, h)?;
        let log_probs = tape.log_softmax(logits)?;
        let probs = tape.softmax(logits)?;
        let value = self.value.forward(tape, p, h)?;
        Ok(PolicyOutput { logits, log_probs, probs, value })
    }

    /// Action distribution and state value for one observation.
    pub fn policy_value(&self, params: &Params<f32>, obs: &Observation) -> Result<([f32; Action::COUNT], f32), ModelError> {
        let mut tape = Tape::<f32>::new();
        let bound = tape.bind_frozen(params);
        let x = observation_var(&mut tape, obs.tensor())?;
        let out = self.forward(&mut tape, &bound, x)?;
        let mut probs = [0.0; Action::COUNT];
        probs.copy_from_slice(tape.value(out.probs).data());
        Ok((probs, tape.value(out.value).item()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};

    fn random_obs(seed: u64) -> Observation {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Observation::from_fn(|_, _, _| rng.gen::<f32>())
    }

    #[test]
    fn chain_and_feature_count() {
        let net = ActorCriticNet::new();
        assert_eq!(net.spatial_chain(), [64, 32, 16, 8, 4]);
        assert_eq!(net.feature_len(), 32 * 4 * 4);
    }

    #[test]
    fn probs_form_a_distribution() {
        let net = ActorCriticNet::new();
        let params = net.init_params(3);
        for s in 0..5 {
            let (probs, value) = net.policy_value(&params, &random_obs(s)).unwrap();
            let total: f32 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-5);
            assert!(probs.iter().all(|&p| p >= 0.0));
            assert!(value.is_finite());
        }
    }

    #[test]
    fn near_uniform_at_init() {
        let net = ActorCriticNet::new();
        for seed in 0..100 {
            let params = net.init_params(seed);
            let (probs, _) = net.policy_value(&params, &random_obs(1000 + seed)).unwrap();
            for p in probs {
                assert!((p - 1.0 / 6.0).abs() <= 0.2, "seed {seed}: {probs:?}");
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let net = ActorCriticNet::new();
        let params = net.init_params(9);
        let obs = random_obs(4);
        let a = net.policy_value(&params, &obs).unwrap();
        let b = net.policy_value(&params, &obs).unwrap();
        assert_eq!(a.0.map(f32::to_bits), b.0.map(f32::to_bits));
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn rejects_wrong_observation_shape() {
        let net = ActorCriticNet::new();
        let params = net.init_params(0);
        let mut tape = Tape::<f32>::new();
        let err = observation_var(&mut tape, &Tensor::<f32>::zeros(&[3, 32, 32])).unwrap_err();
        assert_eq!(err, ModelError::ObservationShape(vec![3, 32, 32]));
        // and the layers themselves refuse a bad channel count
        let bound = tape.bind_frozen(&params);
        let x = tape.constant(Tensor::zeros(&[1, 64, 64]));
        assert!(net.forward(&mut tape, &bound, x).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let net = ActorCriticNet::new();
        assert_eq!(net.init_params(5), net.init_params(5));
        assert_ne!(net.init_params(5), net.init_params(6));
    }
}
