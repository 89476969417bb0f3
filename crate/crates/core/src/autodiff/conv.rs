//! Convolution arithmetic and the im2col/col2im kernels behind
//! `conv2d` and its adjoint `deconv2d`.

use super::scalar::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{Scalar, TensorError};

/// Output length of a strided, zero-padded convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize, TensorError> {
    let bad = || TensorError::IncompatibleLayer { input, kernel, stride, pad };
    if stride == 0 || kernel == 0 {
        return Err(bad());
    }
    let span = input + 2 * pad;
    if span < kernel {
        return Err(bad());
    }
    Ok((span - kernel) / stride + 1)
}

/// Output length of a transposed convolution: `(in − 1)·stride − 2·pad + kernel`.
pub fn deconv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize, TensorError> {
    let bad = || TensorError::IncompatibleLayer { input, kernel, stride, pad };
    if stride == 0 || kernel == 0 || input == 0 {
        return Err(bad());
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * pad {
        return Err(bad());
    }
    Ok(full - 2 * pad)
}

/// Geometry of one convolution: image side `(c, h, w)` and patch grid `(oh, ow)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self, TensorError> {
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: conv_out_size(height, kernel, stride, pad)?,
            out_w: conv_out_size(width, kernel, stride, pad)?,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for patch row `(ki, kj)` at output `(oh, ow)`, if inside the image.
    #[inline]
    fn source(&self, ki: usize, kj: usize, oh: usize, ow: usize) -> Option<(usize, usize)> {
        let y = (oh * self.stride + ki).checked_sub(self.pad)?;
        let x = (ow * self.stride + kj).checked_sub(self.pad)?;
        (y < self.height && x < self.width).then_some((y, x))
    }
}

/// `[C, H, W]` image to `[C·k·k, OH·OW]` patch matrix.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, image: &[T]) -> Vec<T> {
    let k = g.kernel;
    let n = g.positions();
    let mut cols = vec![T::zero(); g.patch_len() * n];
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        if let Some((y, x)) = g.source(ki, kj, oh, ow) {
                            dst[oh * g.out_w + ow] = plane[y * g.width + x];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto `[C, H, W]`.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T]) -> Vec<T> {
    let k = g.kernel;
    let n = g.positions();
    let mut image = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        if let Some((y, x)) = g.source(ki, kj, oh, ow) {
                            plane[y * g.width + x] += src[oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    }
    image
}

/// conv forward: returns `(output [C_out, OH·OW], cols)`.
pub(crate) fn conv_forward<T: Scalar>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> (Vec<T>, Vec<T>) {
    let c_out = bias.len();
    let n = g.positions();
    let cols = im2col(g, input);
    let mut out = Vec::with_capacity(c_out * n);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, n));
    }
    matmul_acc(c_out, g.patch_len(), n, weight, &cols, &mut out);
    (out, cols)
}

/// conv backward. `d_input` is only produced when requested.
pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    cols: &[T],
    weight: &[T],
    d_out: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    want_input: bool,
) -> Option<Vec<T>> {
    let c_out = d_bias.len();
    let n = g.positions();
    let patch = g.patch_len();
    for (co, db) in d_bias.iter_mut().enumerate() {
        *db += d_out[co * n..(co + 1) * n].iter().copied().sum::<T>();
    }
    matmul_nt_acc(c_out, n, patch, d_out, cols, d_weight);
    want_input.then(|| {
        let mut d_cols = vec![T::zero(); patch * n];
        matmul_tn_acc(patch, c_out, n, weight, d_out, &mut d_cols);
        col2im(g, &d_cols)
    })
}

/// Transposed conv forward. `g` describes the *output* image as the conv
/// input side, with `g.out_h × g.out_w` equal to the deconv input grid.
/// `weight` is `[C_in, C_out, k, k]`; output is `[C_out, H, W]`.
pub(crate) fn deconv_forward<T: Scalar>(g: &ConvGeom, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let c_in = input.len() / g.positions();
    let n = g.positions();
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); patch * n];
    matmul_tn_acc(patch, c_in, n, weight, input, &mut cols);
    let mut out = col2im(g, &cols);
    let plane = g.height * g.width;
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
    out
}

pub(crate) fn deconv_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    d_out: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    want_input: bool,
) -> Option<Vec<T>> {
    let n = g.positions();
    let patch = g.patch_len();
    let c_in = input.len() / n;
    let plane = g.height * g.width;
    for (c, db) in d_bias.iter_mut().enumerate() {
        *db += d_out[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
    let d_cols = im2col(g, d_out);
    matmul_nt_acc(c_in, n, patch, input, &d_cols, d_weight);
    want_input.then(|| {
        let mut d_in = vec![T::zero(); c_in * n];
        matmul_acc(c_in, patch, n, weight, &d_cols, &mut d_in);
        d_in
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_out_size_examples() {
        assert_eq!(conv_out_size(64, 3, 2, 1).unwrap(), 32);
        assert_eq!(conv_out_size(64, 4, 4, 0).unwrap(), 16);
        assert_eq!(conv_out_size(64, 6, 6, 0).unwrap(), 10);
        assert_eq!(conv_out_size(10, 3, 3, 0).unwrap(), 3);
    }

    #[test]
    fn conv_out_size_rejects_incompatible() {
        assert!(conv_out_size(2, 4, 4, 0).is_err());
        assert!(conv_out_size(8, 3, 0, 0).is_err());
        assert!(conv_out_size(1, 3, 1, 1).is_ok());
    }

    #[test]
    fn encoder_decoder_chain_round_trips() {
        let mut side = 64;
        let mut chain = vec![side];
        for _ in 0..3 {
            side = conv_out_size(side, 4, 4, 0).unwrap();
            chain.push(side);
        }
        for _ in 0..3 {
            side = deconv_out_size(side, 4, 4, 0).unwrap();
            chain.push(side);
        }
        assert_eq!(chain, [64, 16, 4, 1, 4, 16, 64]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(2, 5, 4, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let cols_len = g.patch_len() * g.positions();
        let y: Vec<f64> = (0..cols_len).map(|i| ((i * 3) % 13) as f64 * 0.25).collect();
        let lhs: f64 = im2col(&g, &x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&g, &y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
