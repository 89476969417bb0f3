use super::layers::{ConvLayer, DeconvLayer};
use super::{init_rng, observation_var, FeatureEncoder, ModelError};
use crate::autodiff::{l2_norm, BoundParams, Params, Scalar, Tape, Var};
use crate::worlds::{Observation, OBS_SIDE};

pub const AE_PREFIX: &str = "ae.";

/// Three 4×4 stride-4 convolutions down to a 64×1×1 latent, mirrored by three
/// transposed convolutions back to 3×64×64. The output is hard-clamped to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    encoder: Vec<ConvLayer>,
    decoder: Vec<DeconvLayer>,
    chain: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct AeOutput {
    pub latent: Var,
    pub reconstruction: Var,
    /// `mean((obs − recon)²)` on the clamped output.
    pub loss: Var,
    /// `Σ(obs − raw)²` over the pre-clamp decoder output, the quantity trained on.
    /// Divided by the pixel count it equals `loss` wherever the output is in
    /// range and bounds it above elsewhere.
    pub train_loss: Var,
}

/// Evaluated reconstruction of one frame.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: Observation,
    pub mse: f32,
    /// `‖obs − recon‖₂`, the reward-facing error.
    pub l2: f32,
}

impl Default for Autoencoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Autoencoder {
    pub fn new() -> Self {
        let encoder =
            vec![ConvLayer::new("ae.enc1", 3, 16, 4, 4, 0), ConvLayer::new("ae.enc2", 16, 32, 4, 4, 0), ConvLayer::new("ae.enc3", 32, 64, 4, 4, 0)];
        let decoder = vec![
            DeconvLayer::new("ae.dec1", 64, 32, 4, 4, 0),
            DeconvLayer::new("ae.dec2", 32, 16, 4, 4, 0),
            DeconvLayer::new("ae.dec3", 16, 3, 4, 4, 0),
        ];
        let mut chain = vec![OBS_SIDE];
        for c in &encoder {
            chain.push(c.out_size(*chain.last().unwrap()));
        }
        assert_eq!(chain, [64, 16, 4, 1], "autoencoder encoder chain");
        let mut side = chain[3];
        for d in &decoder {
            side = d.out_size(side);
        }
        assert_eq!(side, OBS_SIDE, "decoder must restore the input size");
        Self { encoder, decoder, chain }
    }

    pub fn spatial_chain(&self) -> &[usize] {
        &self.chain
    }

    pub fn latent_len(&self) -> usize {
        self.encoder[2].out_channels * self.chain[3] * self.chain[3]
    }

    pub fn init_params(&self, seed: u64) -> Params<f32> {
        let mut rng = init_rng(seed, 2);
        let mut p = Params::new();
        for c in &self.encoder {
            c.init(&mut p, &mut rng);
        }
        for d in &self.decoder {
            d.init(&mut p, &mut rng);
        }
        p
    }

    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, obs: Var) -> Result<Var, ModelError> {
        let mut h = obs;
        for (i, c) in self.encoder.iter().enumerate() {
            h = c.forward(tape, p, h)?;
            if i + 1 < self.encoder.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Decoder output before the final clamp.
    pub fn decode_raw<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, latent: Var) -> Result<Var, ModelError> {
        let mut h = latent;
        for (i, d) in self.decoder.iter().enumerate() {
            h = d.forward(tape, p, h)?;
            if i + 1 < self.decoder.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn decode<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, latent: Var) -> Result<Var, ModelError> {
        let raw = self.decode_raw(tape, p, latent)?;
        Ok(tape.clamp01(raw)?)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, obs: Var) -> Result<AeOutput, ModelError> {
        let latent = self.encode(tape, p, obs)?;
        let raw = self.decode_raw(tape, p, latent)?;
        let reconstruction = tape.clamp01(raw)?;
        let loss = tape.mse(obs, reconstruction)?;
        let raw_mse = tape.mse(obs, raw)?;
        let n = tape.value(obs).numel() as f64;
        let train_loss = tape.scale(raw_mse, T::from_f64(n))?;
        Ok(AeOutput { latent, reconstruction, loss, train_loss })
    }

    pub fn reconstruct(&self, params: &Params<f32>, obs: &Observation) -> Result<Reconstruction, ModelError> {
        let mut tape = Tape::<f32>::new();
        let bound = tape.bind_frozen(params);
        let x = observation_var(&mut tape, obs.tensor())?;
        let out = self.forward(&mut tape, &bound, x)?;
        let image = Observation::from_tensor(tape.value(out.reconstruction).clone())
            .map_err(|_| ModelError::ObservationShape(tape.value(out.reconstruction).shape().to_vec()))?;
        let l2 = l2_norm(obs.tensor(), image.tensor())?;
        Ok(Reconstruction { image, mse: tape.value(out.loss).item(), l2 })
    }
}

impl FeatureEncoder for Autoencoder {
    fn prefix(&self) -> &'static str {
        AE_PREFIX
    }

    fn features<T: Scalar>(&self, tape: &mut Tape<T>, params: &BoundParams, obs: Var) -> Result<Var, ModelError> {
        let latent = self.encode(tape, params, obs)?;
        Ok(tape.reshape(latent, &[self.latent_len()])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{rmsprop_step, OptimizerConfig, ParamStore};

    fn gradient_obs() -> Observation {
        Observation::from_fn(|c, y, x| match c {
            0 => y as f32 / 63.0,
            1 => x as f32 / 63.0,
            _ => {
                if (x / 8 + y / 8) % 2 == 0 {
                    0.8
                } else {
                    0.2
                }
            }
        })
    }

    #[test]
    fn shapes_and_range() {
        let ae = Autoencoder::new();
        assert_eq!(ae.spatial_chain(), [64, 16, 4, 1]);
        assert_eq!(ae.latent_len(), 64);
        let params = ae.init_params(1);
        let r = ae.reconstruct(&params, &gradient_obs()).unwrap();
        assert!(r.image.tensor().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(((r.l2 * r.l2) / 12288.0 - r.mse).abs() < 1e-5 * r.mse.max(1e-3));
        let f = ae.encode_features(&params, &gradient_obs()).unwrap();
        assert_eq!(f.len(), 64);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let obs = gradient_obs();
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(obs.tensor().clone());
        let b = tape.constant(obs.tensor().clone());
        let loss = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        assert_eq!(l2_norm(obs.tensor(), obs.tensor()).unwrap(), 0.0);
    }

    #[test]
    fn overfits_a_single_image() {
        let ae = Autoencoder::new();
        let obs = gradient_obs();
        let mut store = ParamStore::from_params(ae.init_params(7));
        let cfg = OptimizerConfig { learning_rate: 1e-4, ..Default::default() };
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..500 {
            let mut tape = Tape::<f32>::new();
            let bound = tape.bind(&store.params());
            let x = tape.constant(obs.tensor().clone());
            let out = ae.forward(&mut tape, &bound, x).unwrap();
            last = tape.value(out.loss).item();
            first.get_or_insert(last);
            assert!(tape.value(out.train_loss).item() / 12288.0 >= last * (1.0 - 1e-5));
            let grads = tape.backward(out.train_loss).unwrap().named(&bound).unwrap();
            rmsprop_step(&mut store, &grads, &cfg).unwrap();
        }
        let first = first.unwrap();
        assert!(last <= 0.1 * first, "loss {first} -> {last}");
    }
}
