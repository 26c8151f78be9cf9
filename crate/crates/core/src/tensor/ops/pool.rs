use super::window_out;
use crate::error::{Error, Result};
use crate::tensor::{shape_str, Scalar, Tensor};

struct PoolGeom {
    planes: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

fn pool_geom(op: &'static str, x: &[usize], k: usize, stride: usize, pad: usize) -> Result<PoolGeom> {
    if x.len() != 4 {
        return Err(Error::dim(op, format!("expected [B,C,H,W], got {}", shape_str(x))));
    }
    if pad >= k {
        return Err(Error::dim(op, format!("padding {pad} must be smaller than kernel {k}")));
    }
    let (h, w) = (x[2], x[3]);
    match (window_out(h, k, stride, pad), window_out(w, k, stride, pad)) {
        (Some(ho), Some(wo)) => Ok(PoolGeom { planes: x[0] * x[1], h, w, ho, wo }),
        _ => Err(Error::dim(
            op,
            format!("window {k} (stride {stride}, pad {pad}) does not fit input {h}x{w}"),
        )),
    }
}

/// Clipped window bounds along one axis.
#[inline]
fn span(o: usize, k: usize, stride: usize, pad: usize, size: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + k as isize) as usize).min(size);
    (lo, hi)
}

impl<T: Scalar> Tensor<T> {
    /// Max pooling; padded cells never win. Gradient flows to the first
    /// maximal cell of each window in row-major order.
    pub fn max_pool2d(&self, k: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let g = pool_geom("max_pool2d", self.shape(), k, stride, padding)?;
        let (plane_in, plane_out) = (g.h * g.w, g.ho * g.wo);
        let mut out = Vec::with_capacity(g.planes * plane_out);
        let mut argmax = Vec::with_capacity(g.planes * plane_out);
        let x = self.data();
        for p in 0..g.planes {
            let base = p * plane_in;
            for oy in 0..g.ho {
                let (y0, y1) = span(oy, k, stride, padding, g.h);
                for ox in 0..g.wo {
                    let (x0, x1) = span(ox, k, stride, padding, g.w);
                    let mut best = base + y0 * g.w + x0;
                    let mut best_v = x[best];
                    for y in y0..y1 {
                        let row = base + y * g.w;
                        for (i, &v) in x[row + x0..row + x1].iter().enumerate() {
                            if v > best_v {
                                best_v = v;
                                best = row + x0 + i;
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best as u32);
                }
            }
        }
        let numel = self.numel();
        let mut shape = self.shape().to_vec();
        shape[2] = g.ho;
        shape[3] = g.wo;
        Ok(Tensor::from_op(
            "max_pool2d",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |grad, _| {
                let mut gx = vec![T::zero(); numel];
                for (&i, &gv) in argmax.iter().zip(grad) {
                    gx[i as usize] += gv;
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Average pooling with divisor `k·k`, zero-padded cells included.
    pub fn avg_pool2d(&self, k: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let g = pool_geom("avg_pool2d", self.shape(), k, stride, padding)?;
        let (plane_in, plane_out) = (g.h * g.w, g.ho * g.wo);
        let area = T::lit((k * k) as f64);
        let mut out = Vec::with_capacity(g.planes * plane_out);
        let x = self.data();
        for p in 0..g.planes {
            let base = p * plane_in;
            for oy in 0..g.ho {
                let (y0, y1) = span(oy, k, stride, padding, g.h);
                for ox in 0..g.wo {
                    let (x0, x1) = span(ox, k, stride, padding, g.w);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let row = base + y * g.w;
                        for &v in &x[row + x0..row + x1] {
                            acc += v;
                        }
                    }
                    out.push(acc / area);
                }
            }
        }
        let numel = self.numel();
        let mut shape = self.shape().to_vec();
        shape[2] = g.ho;
        shape[3] = g.wo;
        Ok(Tensor::from_op(
            "avg_pool2d",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |grad, _| {
                let mut gx = vec![T::zero(); numel];
                for p in 0..g.planes {
                    let base = p * plane_in;
                    for oy in 0..g.ho {
                        let (y0, y1) = span(oy, k, stride, padding, g.h);
                        for ox in 0..g.wo {
                            let (x0, x1) = span(ox, k, stride, padding, g.w);
                            let gv = grad[p * plane_out + oy * g.wo + ox] / area;
                            for y in y0..y1 {
                                let row = base + y * g.w;
                                for d in &mut gx[row + x0..row + x1] {
                                    *d += gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tensor;

    fn t(v: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec(v.to_vec(), shape).unwrap()
    }

    #[test]
    fn exhaustive_window() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]);
        assert_eq!(x.max_pool2d(2, 1, 0).unwrap().data(), &[4.0]);
        assert_eq!(x.avg_pool2d(2, 1, 0).unwrap().data(), &[2.5]);
    }

    #[test]
    fn constant_field() {
        let x = Tensor::<f64>::full(&[1, 2, 5, 5], 3.5);
        assert!(x.max_pool2d(3, 2, 1).unwrap().data().iter().all(|&v| v == 3.5));
        assert!(x.avg_pool2d(3, 1, 0).unwrap().data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn padded_cells_never_win_even_for_negative_inputs() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], -7.0);
        assert!(x.max_pool2d(3, 1, 1).unwrap().data().iter().all(|&v| v == -7.0));
    }

    #[test]
    fn tie_gradient_goes_to_first_cell() {
        let x = t(&[5.0, 5.0, 5.0, 5.0], &[1, 1, 2, 2]).with_requires_grad(true);
        x.max_pool2d(2, 1, 0).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn padding_must_be_smaller_than_kernel() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!(x.max_pool2d(2, 1, 2).is_err());
        assert!(x.avg_pool2d(9, 1, 0).is_err());
    }
}
