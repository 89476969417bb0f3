use rand::Rng;

use super::ModelError;
use crate::autodiff::{conv_out_size, deconv_out_size, BoundParams, Params, Scalar, Tape, Tensor, Var};

fn weight_name(layer: &str) -> String {
    format!("{layer}.weight")
}

fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

/// Weights and bias uniform in ±√(1/fan_in).
fn init_pair<R: Rng + ?Sized>(params: &mut Params<f32>, layer: &str, weight_shape: &[usize], bias_len: usize, fan_in: usize, rng: &mut R) {
    let bound = (1.0 / fan_in as f64).sqrt();
    params.insert(weight_name(layer), Tensor::uniform(weight_shape, bound, rng));
    params.insert(bias_name(layer), Tensor::uniform(&[bias_len], bound, rng));
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self { name: name.to_string(), in_channels, out_channels, kernel, stride, pad }
    }

    pub fn out_size(&self, input: usize) -> usize {
        conv_out_size(input, self.kernel, self.stride, self.pad).expect("layer does not fit its input")
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params<f32>, rng: &mut R) {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        let shape = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        init_pair(params, &self.name, &shape, self.out_channels, fan_in, rng);
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var, ModelError> {
        let w = p.get(&weight_name(&self.name))?;
        let b = p.get(&bias_name(&self.name))?;
        Ok(tape.conv2d(x, w, b, self.stride, self.pad)?)
    }
}

/// Transposed convolution; weights are `[in, out, k, k]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeconvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvLayer {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self { name: name.to_string(), in_channels, out_channels, kernel, stride, pad }
    }

    pub fn out_size(&self, input: usize) -> usize {
        deconv_out_size(input, self.kernel, self.stride, self.pad).expect("layer does not fit its input")
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params<f32>, rng: &mut R) {
        // Each output pixel sees in_channels × ⌈k/stride⌉² inputs.
        let taps = self.kernel.div_ceil(self.stride);
        let fan_in = self.in_channels * taps * taps;
        let shape = [self.in_channels, self.out_channels, self.kernel, self.kernel];
        init_pair(params, &self.name, &shape, self.out_channels, fan_in, rng);
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var, ModelError> {
        let w = p.get(&weight_name(&self.name))?;
        let b = p.get(&bias_name(&self.name))?;
        Ok(tape.deconv2d(x, w, b, self.stride, self.pad)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearLayer {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl LinearLayer {
    pub fn new(name: &str, in_features: usize, out_features: usize) -> Self {
        Self { name: name.to_string(), in_features, out_features }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut Params<f32>, rng: &mut R) {
        init_pair(params, &self.name, &[self.out_features, self.in_features], self.out_features, self.in_features, rng);
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var, ModelError> {
        let w = p.get(&weight_name(&self.name))?;
        let b = p.get(&bias_name(&self.name))?;
        Ok(tape.linear(x, w, b)?)
    }
}
