//! Equalized-learning-rate layers: weights are stored unit-variance and scaled by
//! `1/sqrt(fan_in)` at run time.

use rand::Rng;
use rgbd_tensor::{ConvGeom, Real, Tensor, Var};

use super::params::{Bound, ParamBuilder, ParamId};

pub const LRELU_SLOPE: f64 = 0.2;
const ACT_GAIN: f64 = std::f64::consts::SQRT_2;
const DEMOD_EPS: f64 = 1e-8;

/// Leaky ReLU with the usual `sqrt(2)` gain.
pub fn lrelu<T: Real>(x: &Var<T>) -> Var<T> {
    x.leaky_relu(T::lit(LRELU_SLOPE)).mul_scalar(T::lit(ACT_GAIN))
}

/// `x / sqrt(mean(x^2) + eps)` over the feature axis of `[B, m]`.
pub fn pixel_norm<T: Real>(x: &Var<T>) -> Var<T> {
    let m = x.shape()[1];
    let ms = x.square().sum_axis(1).mul_scalar(T::lit(1.0 / m as f64));
    x.mul(&ms.add_scalar(T::lit(1e-8)).powf(T::lit(-0.5)))
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    w_scale: f64,
    b_scale: f64,
    act: bool,
}

impl Dense {
    /// `lr_mul` shrinks the effective learning rate of the layer (mapping network).
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<'_, R>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        lr_mul: f64,
        bias_init: f32,
        act: bool,
    ) -> Self {
        pb.scope(name, |pb| Self {
            weight: pb.normal("weight", &[out_dim, in_dim], 1.0 / lr_mul),
            bias: pb.constant("bias", &[out_dim], bias_init / lr_mul as f32),
            in_dim,
            out_dim,
            w_scale: lr_mul / (in_dim as f64).sqrt(),
            b_scale: lr_mul,
            act,
        })
    }

    pub fn forward<T: Real>(&self, b: &Bound<T>, x: &Var<T>) -> Var<T> {
        let w = b.get(self.weight);
        let y = x.matmul_t(w, false, true).mul_scalar(T::lit(self.w_scale));
        let bias = b.get(self.bias).reshape(vec![1, self.out_dim]).mul_scalar(T::lit(self.b_scale));
        let y = y.add(&bias);
        if self.act {
            lrelu(&y)
        } else {
            y
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    scale: f64,
    act: bool,
}

impl Conv2d {
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<'_, R>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
        act: bool,
    ) -> Self {
        pb.scope(name, |pb| Self {
            weight: pb.normal("weight", &[cout, cin, kernel, kernel], 1.0),
            bias: bias.then(|| pb.constant("bias", &[cout], 0.0)),
            cin,
            cout,
            kernel,
            scale: 1.0 / ((cin * kernel * kernel) as f64).sqrt(),
            act,
        })
    }

    pub fn forward<T: Real>(&self, b: &Bound<T>, x: &Var<T>) -> Var<T> {
        let w = b.get(self.weight).mul_scalar(T::lit(self.scale));
        let mut y = x.conv2d(&w, ConvGeom { stride: 1, pad: self.kernel / 2 });
        if let Some(bias) = self.bias {
            y = y.add(&b.get(bias).reshape(vec![1, self.cout, 1, 1]));
        }
        if self.act {
            lrelu(&y)
        } else {
            y
        }
    }
}

/// Style-modulated convolution: input channels are scaled by an affine map of the
/// style, convolved with a shared kernel, then (optionally) demodulated per sample.
#[derive(Clone, Debug)]
pub struct ModConv {
    pub affine: Dense,
    pub weight: ParamId,
    pub bias: ParamId,
    pub noise_strength: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub upsample: bool,
    demodulate: bool,
    act: bool,
    scale: f64,
}

/// Options for [`ModConv::new`].
#[derive(Clone, Copy, Debug)]
pub struct ModConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub upsample: bool,
    pub demodulate: bool,
    pub noise: bool,
    pub act: bool,
}

impl ModConv {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, style_dim: usize, spec: ModConvSpec) -> Self {
        pb.scope(name, |pb| Self {
            affine: Dense::new(pb, "affine", style_dim, spec.cin, 1.0, 1.0, false),
            weight: pb.normal("weight", &[spec.cout, spec.cin, spec.kernel, spec.kernel], 1.0),
            bias: pb.constant("bias", &[spec.cout], 0.0),
            noise_strength: spec.noise.then(|| pb.constant("noise_strength", &[1], 0.0)),
            cin: spec.cin,
            cout: spec.cout,
            kernel: spec.kernel,
            upsample: spec.upsample,
            demodulate: spec.demodulate,
            act: spec.act,
            scale: 1.0 / ((spec.cin * spec.kernel * spec.kernel) as f64).sqrt(),
        })
    }

    /// `x`: `[B, cin, H, W]`, `style`: `[B, m]`, `noise`: `[B, 1, H', W']` at the output size.
    pub fn forward<T: Real>(&self, b: &Bound<T>, x: &Var<T>, style: &Var<T>, noise: Option<&Tensor<T>>) -> Var<T> {
        let batch = x.shape()[0];
        let s = self.affine.forward(b, style);
        let x = if self.upsample { x.upsample2x() } else { x.clone() };
        let xs = x.mul(&s.reshape(vec![batch, self.cin, 1, 1]));
        let w = b.get(self.weight).mul_scalar(T::lit(self.scale));
        let mut y = xs.conv2d(&w, ConvGeom { stride: 1, pad: self.kernel / 2 });
        if self.demodulate {
            // d[b, o] = 1 / sqrt(sum_i s[b, i]^2 * sum_k w[o, i, k]^2 + eps)
            let wsq = w.square().reshape(vec![self.cout, self.cin, self.kernel * self.kernel]).sum_axis(2);
            let wsq = wsq.reshape(vec![self.cout, self.cin]);
            let d = s.square().matmul_t(&wsq, false, true).add_scalar(T::lit(DEMOD_EPS)).powf(T::lit(-0.5));
            y = y.mul(&d.reshape(vec![batch, self.cout, 1, 1]));
        }
        if let (Some(strength), Some(n)) = (self.noise_strength, noise) {
            let n = Var::constant(n.clone());
            y = y.add(&n.mul(&b.get(strength).reshape(vec![1, 1, 1, 1])));
        }
        y = y.add(&b.get(self.bias).reshape(vec![1, self.cout, 1, 1]));
        if self.act {
            lrelu(&y)
        } else {
            y
        }
    }
}
