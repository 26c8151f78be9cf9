use super::{Builder, Init, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub const PROJ_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

/// `y = x·W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, din: usize, dout: usize) -> Result<Self> {
        Ok(Linear {
            weight: b.param("weight", &[din, dout], Init::TruncNormal(PROJ_STD))?,
            bias: b.param("bias", &[dout], Init::Zeros)?,
            din,
            dout,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(ps.get(self.weight))?.add(ps.get(self.bias))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: b.param("gamma", &[d], Init::Ones)?,
            beta: b.param("beta", &[d], Init::Zeros)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(ps.get(self.gamma), ps.get(self.beta), LN_EPS)
    }
}

/// Two-layer perceptron with GELU.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize, ratio: usize) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(&mut b.scope("fc1"), d, d * ratio)?,
            fc2: Linear::new(&mut b.scope("fc2"), d * ratio, d)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.fc1.forward(ps, x)?.gelu();
        self.fc2.forward(ps, &h)
    }
}

/// Square-kernel convolution with bias; weights `[out, in, k, k]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Weights drawn with std `1/sqrt(fan_in)`.
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        din: usize,
        dout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (din * kernel * kernel) as f64;
        Ok(Conv2d {
            weight: b.param("weight", &[dout, din, kernel, kernel], Init::TruncNormal(fan_in.sqrt().recip()))?,
            bias: b.param("bias", &[dout], Init::Zeros)?,
            kernel,
            stride,
            padding,
        })
    }

    pub fn pointwise<T: Scalar>(b: &mut Builder<'_, T>, din: usize, dout: usize) -> Result<Self> {
        Self::new(b, din, dout, 1, 1, 0)
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(ps.get(self.weight), Some(ps.get(self.bias)), self.stride, self.padding)
    }
}
