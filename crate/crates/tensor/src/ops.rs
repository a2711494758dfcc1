//! Differentiable operations on [`Var`].
//!
//! Every backward rule is expressed with other `Var` operations, so gradients can be
//! differentiated again when a sweep runs with `create_graph`.

use crate::real::Real;
use crate::tensor::{ConvGeom, Tensor};
use crate::var::Var;

fn unary<T: Real>(
    name: &'static str,
    x: &Var<T>,
    value: Tensor<T>,
    backward: impl Fn(&Var<T>, &Var<T>, &Var<T>) -> Var<T> + 'static,
) -> Var<T> {
    Var::from_op(name, value, vec![x.clone()], Box::new(move |inp, out, g| vec![Some(backward(&inp[0], out, g))]))
}

impl<T: Real> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let value = self.value().zip_with(other.value(), |a, b| a + b);
        Var::from_op(
            "add",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g| vec![Some(g.sum_to(inp[0].shape())), Some(g.sum_to(inp[1].shape()))]),
        )
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let value = self.value().zip_with(other.value(), |a, b| a - b);
        Var::from_op(
            "sub",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g| vec![Some(g.sum_to(inp[0].shape())), Some(g.neg().sum_to(inp[1].shape()))]),
        )
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let value = self.value().zip_with(other.value(), |a, b| a * b);
        Var::from_op(
            "mul",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|inp, _, g| {
                let ga = inp[0].requires_grad().then(|| g.mul(&inp[1]).sum_to(inp[0].shape()));
                let gb = inp[1].requires_grad().then(|| g.mul(&inp[0]).sum_to(inp[1].shape()));
                vec![ga, gb]
            }),
        )
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let value = self.value().zip_with(other.value(), |a, b| a / b);
        Var::from_op(
            "div",
            value,
            vec![self.clone(), other.clone()],
            Box::new(|inp, out, g| {
                let ga = inp[0].requires_grad().then(|| g.div(&inp[1]).sum_to(inp[0].shape()));
                let gb = inp[1].requires_grad().then(|| g.mul(out).div(&inp[1]).neg().sum_to(inp[1].shape()));
                vec![ga, gb]
            }),
        )
    }

    pub fn neg(&self) -> Var<T> {
        self.mul_scalar(-T::one())
    }

    pub fn mul_scalar(&self, c: T) -> Var<T> {
        unary("mul_scalar", self, self.value().map(|v| v * c), move |_, _, g| g.mul_scalar(c))
    }

    pub fn add_scalar(&self, c: T) -> Var<T> {
        unary("add_scalar", self, self.value().map(|v| v + c), |_, _, g| g.clone())
    }

    pub fn square(&self) -> Var<T> {
        self.mul(self)
    }

    pub fn exp(&self) -> Var<T> {
        unary("exp", self, self.value().map(T::exp), |_, out, g| g.mul(out))
    }

    pub fn log(&self) -> Var<T> {
        unary("log", self, self.value().map(T::ln), |x, _, g| g.div(x))
    }

    pub fn sqrt(&self) -> Var<T> {
        unary("sqrt", self, self.value().map(T::sqrt), |_, out, g| g.div(out).mul_scalar(T::lit(0.5)))
    }

    /// `x^p` for a constant exponent.
    pub fn powf(&self, p: T) -> Var<T> {
        unary("powf", self, self.value().map(|v| v.powf(p)), move |x, _, g| {
            g.mul(&x.powf(p - T::one())).mul_scalar(p)
        })
    }

    pub fn sigmoid(&self) -> Var<T> {
        let value = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        unary("sigmoid", self, value, |_, out, g| g.mul(&out.mul(&out.neg().add_scalar(T::one()))))
    }

    pub fn tanh(&self) -> Var<T> {
        unary("tanh", self, self.value().map(T::tanh), |_, out, g| {
            g.mul(&out.square().neg().add_scalar(T::one()))
        })
    }

    /// `log(1 + e^x)`, evaluated stably.
    pub fn softplus(&self) -> Var<T> {
        let value = self.value().map(|v| v.max(T::zero()) + (-v.abs()).exp().ln_1p());
        unary("softplus", self, value, |x, _, g| g.mul(&x.sigmoid()))
    }

    pub fn leaky_relu(&self, slope: T) -> Var<T> {
        let value = self.value().map(|v| if v > T::zero() { v } else { v * slope });
        unary("leaky_relu", self, value, move |x, _, g| {
            let mask = x.value().map(|v| if v > T::zero() { T::one() } else { slope });
            g.mul(&Var::constant(mask))
        })
    }

    pub fn relu(&self) -> Var<T> {
        self.leaky_relu(T::zero())
    }

    pub fn abs(&self) -> Var<T> {
        unary("abs", self, self.value().map(T::abs), |x, _, g| {
            let sign = x.value().map(|v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            });
            g.mul(&Var::constant(sign))
        })
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        unary("broadcast_to", self, self.value().broadcast_to(shape), |x, _, g| g.sum_to(x.shape()))
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        unary("sum_to", self, self.value().sum_to(shape), |x, _, g| g.broadcast_to(x.shape()))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var<T> {
        self.reshape(vec![self.value().numel()]).sum_to(&[])
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value().numel().max(1);
        self.sum().mul_scalar(T::one() / T::lit(n as f64))
    }

    /// Sum over one axis, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Var<T> {
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        self.sum_to(&shape)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Var<T> {
        let shape = shape.into();
        if self.shape() == shape.as_slice() {
            return self.clone();
        }
        unary("reshape", self, self.value().reshape(shape), |x, _, g| g.reshape(x.shape().to_vec()))
    }

    pub fn permute(&self, perm: &[usize]) -> Var<T> {
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        unary("permute", self, self.value().permute(perm), move |_, _, g| g.permute(&inverse))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        if start == 0 && len == self.shape()[axis] {
            return self.clone();
        }
        let dim = self.shape()[axis];
        unary("narrow", self, self.value().narrow(axis, start, len), move |_, _, g| g.unnarrow(axis, start, dim))
    }

    pub fn unnarrow(&self, axis: usize, start: usize, dim: usize) -> Var<T> {
        let len = self.shape()[axis];
        unary("unnarrow", self, self.value().unnarrow(axis, start, dim), move |_, _, g| g.narrow(axis, start, len))
    }

    pub fn concat(parts: &[Var<T>], axis: usize) -> Var<T> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let value = Tensor::concat(&values, axis);
        Var::from_op(
            "concat",
            value,
            parts.to_vec(),
            Box::new(move |inp, _, g| {
                let mut start = 0;
                inp.iter()
                    .map(|p| {
                        let len = p.shape()[axis];
                        let piece = p.requires_grad().then(|| g.narrow(axis, start, len));
                        start += len;
                        piece
                    })
                    .collect()
            }),
        )
    }

    /// `op(self) · op(other)` for 2-D operands, `op` transposing when the flag is set.
    pub fn matmul_t(&self, other: &Var<T>, ta: bool, tb: bool) -> Var<T> {
        let value = self.value().matmul_t(other.value(), ta, tb);
        Var::from_op(
            "matmul",
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |inp, _, g| {
                let (a, b) = (&inp[0], &inp[1]);
                let ga = a.requires_grad().then(|| if ta { b.matmul_t(g, tb, true) } else { g.matmul_t(b, false, !tb) });
                let gb = b.requires_grad().then(|| if tb { g.matmul_t(a, true, ta) } else { a.matmul_t(g, !ta, false) });
                vec![ga, gb]
            }),
        )
    }

    pub fn matmul(&self, other: &Var<T>) -> Var<T> {
        self.matmul_t(other, false, false)
    }

    /// NCHW cross-correlation with an OIHW kernel.
    pub fn conv2d(&self, weight: &Var<T>, geom: ConvGeom) -> Var<T> {
        let value = self.value().conv2d(weight.value(), geom);
        Var::from_op(
            "conv2d",
            value,
            vec![self.clone(), weight.clone()],
            Box::new(move |inp, _, g| {
                let (x, w) = (&inp[0], &inp[1]);
                let (_, _, h, wd) = x.value().dims4();
                let (_, _, kh, kw) = w.value().dims4();
                let gx = x.requires_grad().then(|| g.conv2d_input_grad(w, (h, wd), geom));
                let gw = w.requires_grad().then(|| x.conv2d_weight_grad(g, (kh, kw), geom));
                vec![gx, gw]
            }),
        )
    }

    /// Input gradient of a convolution; `self` is the output gradient.
    pub fn conv2d_input_grad(&self, weight: &Var<T>, in_hw: (usize, usize), geom: ConvGeom) -> Var<T> {
        let value = self.value().conv2d_input_grad(weight.value(), in_hw, geom);
        Var::from_op(
            "conv2d_input_grad",
            value,
            vec![self.clone(), weight.clone()],
            Box::new(move |inp, _, u| {
                let (g, w) = (&inp[0], &inp[1]);
                let (_, _, kh, kw) = w.value().dims4();
                let dg = g.requires_grad().then(|| u.conv2d(w, geom));
                let dw = w.requires_grad().then(|| u.conv2d_weight_grad(g, (kh, kw), geom));
                vec![dg, dw]
            }),
        )
    }

    /// Weight gradient of a convolution; `self` is the input, `grad` the output gradient.
    pub fn conv2d_weight_grad(&self, grad: &Var<T>, khw: (usize, usize), geom: ConvGeom) -> Var<T> {
        let value = self.value().conv2d_weight_grad(grad.value(), khw, geom);
        Var::from_op(
            "conv2d_weight_grad",
            value,
            vec![self.clone(), grad.clone()],
            Box::new(move |inp, _, u| {
                let (x, g) = (&inp[0], &inp[1]);
                let (_, _, h, w) = x.value().dims4();
                let dx = x.requires_grad().then(|| g.conv2d_input_grad(u, (h, w), geom));
                let dg = g.requires_grad().then(|| x.conv2d(u, geom));
                vec![dx, dg]
            }),
        )
    }

    pub fn upsample2x(&self) -> Var<T> {
        unary("upsample2x", self, self.value().upsample2x(), |_, _, g| g.sum_pool2x())
    }

    pub fn sum_pool2x(&self) -> Var<T> {
        unary("sum_pool2x", self, self.value().sum_pool2x(), |_, _, g| g.upsample2x())
    }

    pub fn avg_pool2x(&self) -> Var<T> {
        self.sum_pool2x().mul_scalar(T::lit(0.25))
    }
}
