use super::window_out;
use crate::error::{Error, Result};
use crate::tensor::{gemm, shape_str, MatView, Scalar, Tensor};

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, out: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if y < 0 || y >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + y as usize) * g.w..][..g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if xx < 0 || xx >= g.w as isize {
                            T::zero()
                        } else {
                            src[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols_buf: &[T], g: &Geometry, gx: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut gx[(c * g.h + y as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        if xx >= 0 && xx < g.w as isize {
                            dst[xx as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// 2-D cross-correlation of `[B,C,H,W]` with weights `[O,C,kh,kw]`.
    ///
    /// Output extent per axis is `floor((H + 2p - kh) / stride) + 1`; padded
    /// cells read as zero.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        if self.ndim() != 4 || weight.ndim() != 4 || self.shape()[1] != weight.shape()[1] {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "input {} vs weight {}",
                    shape_str(self.shape()),
                    shape_str(weight.shape())
                ),
            ));
        }
        let [b, c, h, w] = [self.shape()[0], self.shape()[1], self.shape()[2], self.shape()[3]];
        let [o, _, kh, kw] = [weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]];
        if let Some(bias) = bias {
            if bias.shape() != [o] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias {} for {o} output channels", shape_str(bias.shape())),
                ));
            }
        }
        let (Some(ho), Some(wo)) = (window_out(h, kh, stride, padding), window_out(w, kw, stride, padding)) else {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} (stride {stride}, pad {padding}) does not fit input {h}x{w}"),
            ));
        };
        let g = Geometry { c, h, w, kh, kw, stride, pad: padding, ho, wo };
        let (rows, cols) = (g.rows(), g.cols());
        let in_plane = c * h * w;
        let out_plane = o * cols;
        let mut out = vec![T::zero(); b * out_plane];
        let mut scratch = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols] };
        for bi in 0..b {
            let x_b = &self.data()[bi * in_plane..(bi + 1) * in_plane];
            let colv = if g.is_pointwise() {
                MatView::row_major(x_b, 0, cols)
            } else {
                im2col(x_b, &g, &mut scratch);
                MatView::row_major(&scratch, 0, cols)
            };
            gemm(o, rows, cols, MatView::row_major(weight.data(), 0, rows), colv, T::zero(), &mut out, bi * out_plane);
            if let Some(bias) = bias {
                for (oc, &bv) in bias.data().iter().enumerate() {
                    for v in &mut out[bi * out_plane + oc * cols..][..cols] {
                        *v += bv;
                    }
                }
            }
        }

        let x = self.clone();
        let wt = weight.clone();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        Ok(Tensor::from_op(
            "conv2d",
            out,
            vec![b, o, ho, wo],
            parents,
            Box::new(move |grad, needs| {
                let mut gx = needs[0].then(|| vec![T::zero(); x.numel()]);
                let mut gw = needs[1].then(|| vec![T::zero(); wt.numel()]);
                let gb = needs.get(2).copied().unwrap_or(false).then(|| {
                    let mut gb = vec![T::zero(); o];
                    for bi in 0..b {
                        for (oc, acc) in gb.iter_mut().enumerate() {
                            for &v in &grad[bi * out_plane + oc * cols..][..cols] {
                                *acc += v;
                            }
                        }
                    }
                    gb
                });
                let mut scratch = vec![T::zero(); rows * cols];
                let mut gcols = if gx.is_some() && !g.is_pointwise() { vec![T::zero(); rows * cols] } else { Vec::new() };
                for bi in 0..b {
                    let g_b = MatView::row_major(grad, bi * out_plane, cols);
                    if let Some(gw) = gw.as_mut() {
                        let x_b = &x.data()[bi * in_plane..(bi + 1) * in_plane];
                        let colt = if g.is_pointwise() {
                            MatView::row_major_t(x_b, 0, cols)
                        } else {
                            im2col(x_b, &g, &mut scratch);
                            MatView::row_major_t(&scratch, 0, cols)
                        };
                        gemm(o, cols, rows, g_b, colt, T::one(), gw, 0);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wt_t = MatView::row_major_t(wt.data(), 0, rows);
                        if g.is_pointwise() {
                            gemm(rows, o, cols, wt_t, g_b, T::zero(), gx, bi * in_plane);
                        } else {
                            gemm(rows, o, cols, wt_t, g_b, T::zero(), &mut gcols, 0);
                            col2im(&gcols, &g, &mut gx[bi * in_plane..(bi + 1) * in_plane]);
                        }
                    }
                }
                let mut grads = vec![gx, gw];
                if needs.len() > 2 {
                    grads.push(gb);
                }
                grads
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tensor;

    #[test]
    fn pointwise_identity_weight_is_identity() {
        let x = Tensor::<f64>::from_vec((0..18).map(|v| v as f64).collect(), &[1, 2, 3, 3]).unwrap();
        let w = Tensor::<f64>::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2, 1, 1]).unwrap();
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_zero_output() {
        let x = Tensor::<f64>::zeros(&[2, 3, 5, 5]);
        let w = Tensor::<f64>::ones(&[4, 3, 3, 3]);
        let b = Tensor::<f64>::zeros(&[4]);
        let y = x.conv2d(&w, Some(&b), 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_larger_than_input_errors() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(x.conv2d(&w, None, 1, 1).is_err());
        assert!(x.conv2d(&w, None, 1, 2).is_ok());
    }
}
