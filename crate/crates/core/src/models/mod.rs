//! The three networks: actor-critic, convolutional autoencoder, and the
//! curiosity module (feature extractor with forward and inverse dynamics).

mod actor_critic;
mod autoencoder;
mod curiosity;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Params, Scalar, Tape, Tensor, TensorError, Var};
use crate::worlds::{Observation, OBS_SHAPE};

pub use actor_critic::{ActorCriticNet, PolicyOutput, AC_PREFIX};
pub use autoencoder::{AeOutput, Autoencoder, Reconstruction, AE_PREFIX};
pub use curiosity::{cross_entropy, CuriosityLosses, CuriosityModule, CuriosityOutput, CM_PREFIX, INVERSE_LOSS_WEIGHT};
pub use layers::{ConvLayer, DeconvLayer, LinearLayer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("action index {0} is outside 0..6")]
    InvalidAction(usize),
    #[error("observation must be 3×64×64, got {0:?}")]
    ObservationShape(Vec<usize>),
}

/// The six actions, in encoding order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveForward,
    MoveBackward,
    MoveLeft,
    MoveRight,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; Self::COUNT] =
        [Action::MoveForward, Action::MoveBackward, Action::MoveLeft, Action::MoveRight, Action::TurnLeft, Action::TurnRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self, ModelError> {
        Self::ALL.get(i).copied().ok_or(ModelError::InvalidAction(i))
    }

    pub fn one_hot<T: Scalar>(self) -> Tensor<T> {
        let mut v = vec![T::zero(); Self::COUNT];
        v[self.index()] = T::one();
        Tensor::from_vec(v)
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveForward => "move_forward",
            Action::MoveBackward => "move_backward",
            Action::MoveLeft => "move_left",
            Action::MoveRight => "move_right",
            Action::TurnLeft => "turn_left",
            Action::TurnRight => "turn_right",
        }
    }
}

/// Deterministic RNG for parameter initialization.
pub(crate) fn init_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Put an observation on the tape as a constant, checking its shape.
pub fn observation_var<T: Scalar>(tape: &mut Tape<T>, obs: &Tensor<T>) -> Result<Var, ModelError> {
    if obs.shape() != OBS_SHAPE {
        return Err(ModelError::ObservationShape(obs.shape().to_vec()));
    }
    Ok(tape.constant(obs.clone()))
}

/// Networks whose learned representation can be read out as a 64-d feature.
pub trait FeatureEncoder {
    /// Parameter-name prefix owned by this module.
    fn prefix(&self) -> &'static str;

    fn features<T: Scalar>(&self, tape: &mut Tape<T>, params: &crate::autodiff::BoundParams, obs: Var) -> Result<Var, ModelError>;

    /// Flattened 64-d feature of `obs` under `params`. Pure.
    fn encode_features(&self, params: &Params<f32>, obs: &Observation) -> Result<Vec<f32>, ModelError> {
        let mut tape = Tape::<f32>::new();
        let bound = tape.bind_frozen(params);
        let x = observation_var(&mut tape, obs.tensor())?;
        let f = self.features(&mut tape, &bound, x)?;
        Ok(tape.value(f).data().to_vec())
    }
}

/// Cast a parameter set, e.g. to `f64` for gradient checks.
pub fn cast_params<T: Scalar>(params: &Params<f32>) -> Params<T> {
    params.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
}
