//! Parameterised building blocks. Each layer stores indices into a
//! [`ParamSet`] and runs against the matching [`Bound`] tensors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ops, Array, Bound, ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        Self::with_init(ps, name, inputs, outputs, std, 0.0, rng)
    }

    pub fn with_init<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        weight_std: f64,
        bias_init: f64,
        rng: &mut R,
    ) -> Self {
        let weight = ps.add_normal(format!("{name}.w"), &[inputs, outputs], weight_std, rng);
        let bias = ps.add_const(format!("{name}.b"), &[outputs], bias_init);
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        ops::add(&ops::matmul(x, &p[self.weight]), &p[self.bias])
    }
}

/// Stride-1 "same" convolution with bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub kernel: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        kernel: usize,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * kernel * inputs;
        let weight = ps.add_normal(
            format!("{name}.w"),
            &[fan_in, outputs],
            (2.0 / fan_in as f64).sqrt(),
            rng,
        );
        let bias = ps.add_const(format!("{name}.b"), &[outputs], 0.0);
        Self {
            weight,
            bias,
            kernel,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor) -> Tensor {
        ops::conv2d(x, &p[self.weight], Some(&p[self.bias]), self.kernel)
    }
}

/// Convolution whose input channels are scaled per sample by a style
/// vector, optionally followed by weight demodulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulatedConv {
    pub weight: usize,
    pub bias: usize,
    pub affine: Linear,
    pub kernel: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub demodulate: bool,
}

impl ModulatedConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        kernel: usize,
        inputs: usize,
        outputs: usize,
        style_dim: usize,
        demodulate: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * kernel * inputs;
        let weight = ps.add_normal(format!("{name}.w"), &[fan_in, outputs], (1.0 / fan_in as f64).sqrt(), rng);
        let bias = ps.add_const(format!("{name}.b"), &[outputs], 0.0);
        // Styles start near 1 so the layer begins as a plain convolution.
        let affine = Linear::with_init(
            ps,
            &format!("{name}.affine"),
            style_dim,
            inputs,
            (1.0 / style_dim as f64).sqrt() * 0.5,
            1.0,
            rng,
        );
        Self {
            weight,
            bias,
            affine,
            kernel,
            inputs,
            outputs,
            demodulate,
        }
    }

    pub fn forward(&self, p: &Bound, x: &Tensor, w: &Tensor) -> Tensor {
        let b = x.shape()[0];
        let style = self.affine.forward(p, w); // [B, Cin]
        let scaled = ops::mul(x, &ops::reshape(&style, &[b, 1, 1, self.inputs]));
        let mut y = ops::conv2d(&scaled, &p[self.weight], None, self.kernel);
        if self.demodulate {
            // d[b, o] = 1 / sqrt(sum_{k, i} (w[k, i, o] s[b, i])^2 + eps)
            let kk = self.kernel * self.kernel;
            let w2 = ops::reshape(&ops::square(&p[self.weight]), &[kk, self.inputs, self.outputs]);
            let w2 = ops::reshape(&ops::sum_axis(&w2, 0), &[self.inputs, self.outputs]);
            let energy = ops::matmul(&ops::square(&style), &w2);
            let demod = ops::sqrt(&ops::add_scalar(&energy, 1e-8));
            y = ops::div(&y, &ops::reshape(&demod, &[b, 1, 1, self.outputs]));
        }
        ops::add(&y, &p[self.bias])
    }
}

/// One-hot encoding of `labels` over `classes` columns.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut a = Array::zeros(ndarray::IxDyn(&[labels.len(), classes]));
    for (i, &l) in labels.iter().enumerate() {
        a[[i, l]] = 1.0;
    }
    Tensor::constant(a)
}

/// Scales each row to unit second moment.
pub fn normalize_2nd_moment(x: &Tensor) -> Tensor {
    let ms = ops::mean_axis(&ops::square(x), 1);
    ops::div(x, &ops::sqrt(&ops::add_scalar(&ms, 1e-8)))
}

pub const LRELU_SLOPE: f64 = 0.2;

pub fn lrelu(x: &Tensor) -> Tensor {
    ops::leaky_relu(x, LRELU_SLOPE)
}
