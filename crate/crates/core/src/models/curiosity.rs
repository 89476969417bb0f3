use super::layers::{ConvLayer, LinearLayer};
use super::{init_rng, observation_var, Action, FeatureEncoder, ModelError};
use crate::autodiff::{l2_norm, BoundParams, Params, Scalar, Tape, Var};
use crate::worlds::{Observation, OBS_SIDE};

pub const CM_PREFIX: &str = "cm.";

/// Weight of the inverse-dynamics loss in the combined module loss.
pub const INVERSE_LOSS_WEIGHT: f64 = 0.2;

const FEATURES: usize = 64;
const HIDDEN: usize = 256;

/// Feature extractor φ with forward model `f(φ(s), a) → φ̂(s')` and inverse
/// model `g(φ(s), φ(s')) → a`.
///
/// The forward loss sees φ only through detached copies, so φ is shaped by
/// the inverse loss alone.
#[derive(Clone, Debug)]
pub struct CuriosityModule {
    phi: Vec<ConvLayer>,
    forward_hidden: LinearLayer,
    forward_out: LinearLayer,
    inverse_hidden: LinearLayer,
    inverse_out: LinearLayer,
    chain: Vec<usize>,
    pub inverse_weight: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CuriosityOutput {
    pub phi_t: Var,
    pub phi_next: Var,
    pub phi_next_pred: Var,
    pub inverse_logits: Var,
    /// `mean((φ(s') − φ̂(s'))²)`.
    pub forward_loss: Var,
    pub inverse_loss: Var,
    /// `(1 − β)·Σ(φ(s') − φ̂(s'))² + β·inverse`, the quantity trained on.
    pub total: Var,
}

/// Evaluated losses for one transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CuriosityLosses {
    pub forward: f32,
    pub inverse: f32,
    /// `‖φ(s') − φ̂(s')‖₂`, the reward-facing error.
    pub forward_l2: f32,
}

impl Default for CuriosityModule {
    fn default() -> Self {
        Self::new()
    }
}

impl CuriosityModule {
    pub fn new() -> Self {
        let phi =
            vec![ConvLayer::new("cm.phi1", 3, 16, 6, 6, 0), ConvLayer::new("cm.phi2", 16, 32, 3, 3, 0), ConvLayer::new("cm.phi3", 32, 64, 3, 3, 0)];
        let mut chain = vec![OBS_SIDE];
        for c in &phi {
            chain.push(c.out_size(*chain.last().unwrap()));
        }
        assert_eq!(chain, [64, 10, 3, 1], "feature extractor chain");
        assert_eq!(phi[2].out_channels * chain[3] * chain[3], FEATURES);
        Self {
            phi,
            forward_hidden: LinearLayer::new("cm.fwd1", FEATURES + Action::COUNT, HIDDEN),
            forward_out: LinearLayer::new("cm.fwd2", HIDDEN, FEATURES),
            inverse_hidden: LinearLayer::new("cm.inv1", 2 * FEATURES, HIDDEN),
            inverse_out: LinearLayer::new("cm.inv2", HIDDEN, Action::COUNT),
            chain,
            inverse_weight: INVERSE_LOSS_WEIGHT,
        }
    }

    pub fn spatial_chain(&self) -> &[usize] {
        &self.chain
    }

    pub fn feature_len(&self) -> usize {
        FEATURES
    }

    pub fn init_params(&self, seed: u64) -> Params<f32> {
        let mut rng = init_rng(seed, 3);
        let mut p = Params::new();
        for c in &self.phi {
            c.init(&mut p, &mut rng);
        }
        for l in [&self.forward_hidden, &self.forward_out, &self.inverse_hidden, &self.inverse_out] {
            l.init(&mut p, &mut rng);
        }
        p
    }

    /// φ(s) as a flat 64-vector.
    pub fn phi<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, obs: Var) -> Result<Var, ModelError> {
        let mut h = obs;
        for (i, c) in self.phi.iter().enumerate() {
            h = c.forward(tape, p, h)?;
            if i + 1 < self.phi.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(tape.reshape(h, &[FEATURES])?)
    }

    pub fn predict_next<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, phi_t: Var, action: Action) -> Result<Var, ModelError> {
        let a = tape.constant(action.one_hot());
        let x = tape.concat(&[phi_t, a])?;
        let h = self.forward_hidden.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        self.forward_out.forward(tape, p, h)
    }

    pub fn inverse_logits<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, phi_t: Var, phi_next: Var) -> Result<Var, ModelError> {
        let x = tape.concat(&[phi_t, phi_next])?;
        let h = self.inverse_hidden.forward(tape, p, x)?;
        let h = tape.relu(h)?;
        self.inverse_out.forward(tape, p, h)
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        s_t: Var,
        action: Action,
        s_next: Var,
    ) -> Result<CuriosityOutput, ModelError> {
        let phi_t = self.phi(tape, p, s_t)?;
        let phi_next = self.phi(tape, p, s_next)?;

        let phi_t_fixed = tape.detach(phi_t)?;
        let target = tape.detach(phi_next)?;
        let phi_next_pred = self.predict_next(tape, p, phi_t_fixed, action)?;
        let forward_loss = tape.mse(target, phi_next_pred)?;

        let inverse_logits = self.inverse_logits(tape, p, phi_t, phi_next)?;
        let inverse_loss = cross_entropy(tape, inverse_logits, action.index())?;

        let beta = T::from_f64(self.inverse_weight);
        let n = T::from_f64(FEATURES as f64);
        let fw = tape.scale(forward_loss, (T::one() - beta) * n)?;
        let iw = tape.scale(inverse_loss, beta)?;
        let total = tape.add(fw, iw)?;
        Ok(CuriosityOutput { phi_t, phi_next, phi_next_pred, inverse_logits, forward_loss, inverse_loss, total })
    }

    pub fn losses(&self, params: &Params<f32>, s_t: &Observation, action_index: usize, s_next: &Observation) -> Result<CuriosityLosses, ModelError> {
        let action = Action::from_index(action_index)?;
        let mut tape = Tape::<f32>::new();
        let bound = tape.bind_frozen(params);
        let a = observation_var(&mut tape, s_t.tensor())?;
        let b = observation_var(&mut tape, s_next.tensor())?;
        let out = self.forward(&mut tape, &bound, a, action, b)?;
        let forward_l2 = l2_norm(tape.value(out.phi_next), tape.value(out.phi_next_pred))?;
        Ok(CuriosityLosses { forward: tape.value(out.forward_loss).item(), inverse: tape.value(out.inverse_loss).item(), forward_l2 })
    }
}

/// `−log softmax(logits)[target]`.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, target: usize) -> Result<Var, ModelError> {
    let ls = tape.log_softmax(logits)?;
    let picked = tape.index(ls, target)?;
    Ok(tape.scale(picked, -T::one())?)
}

impl FeatureEncoder for CuriosityModule {
    fn prefix(&self) -> &'static str {
        CM_PREFIX
    }

    fn features<T: Scalar>(&self, tape: &mut Tape<T>, params: &BoundParams, obs: Var) -> Result<Var, ModelError> {
        self.phi(tape, params, obs)
    }
}
