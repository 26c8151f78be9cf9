use std::rc::Rc;

use super::check_axis;
use crate::error::{Error, Result};
use crate::tensor::{shape_str, Scalar, Tensor};

impl<T: Scalar> Tensor<T> {
    /// Softmax along `axis`, max-subtracted before exponentiation.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("softmax", axis, self.ndim())?;
        let dim = self.shape()[axis];
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * dim + j) * inner + i;
                let mut m = T::neg_infinity();
                for j in 0..dim {
                    m = m.max(x[at(j)]);
                }
                let mut s = T::zero();
                for j in 0..dim {
                    let e = (x[at(j)] - m).exp();
                    y[at(j)] = e;
                    s += e;
                }
                let inv = s.recip();
                for j in 0..dim {
                    y[at(j)] *= inv;
                }
            }
        }
        let saved = Rc::new(y.clone());
        Ok(Tensor::from_op(
            "softmax",
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let y = &saved;
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * dim + j) * inner + i;
                        let mut dot = T::zero();
                        for j in 0..dim {
                            dot += g[at(j)] * y[at(j)];
                        }
                        for j in 0..dim {
                            gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::dim("layer_norm", "rank-0 input"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gamma {} / beta {} for width {d}",
                    shape_str(gamma.shape()),
                    shape_str(beta.shape())
                ),
            ));
        }
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("layer_norm eps must be positive, got {eps}")));
        }
        let rows = self.numel() / d;
        let inv_d = T::one() / T::lit(d as f64);
        let eps = T::lit(eps);
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut y = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var *= inv_d;
            let rs = (var + eps).sqrt().recip();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                y[r * d + j] = xh * gm[j] + bt[j];
            }
        }
        let gamma_c = gamma.clone();
        Ok(Tensor::from_op(
            "layer_norm",
            y,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, needs| {
                let gm = gamma_c.data();
                let mut gx = needs[0].then(|| vec![T::zero(); xhat.len()]);
                let mut gg = needs[1].then(|| vec![T::zero(); d]);
                let mut gb = needs[2].then(|| vec![T::zero(); d]);
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    if let Some(gg) = gg.as_mut() {
                        for j in 0..d {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        for j in 0..d {
                            gb[j] += gr[j];
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let gh = gr[j] * gm[j];
                            m1 += gh;
                            m2 += gh * xr[j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        for j in 0..d {
                            let gh = gr[j] * gm[j];
                            gx[r * d + j] = rstd[r] * (gh - m1 - xr[j] * m2);
                        }
                    }
                }
                vec![gx, gg, gb]
            }),
        ))
    }
}
