use super::{broadcast_index, broadcast_shape};
use crate::error::{Error, Result};
use crate::tensor::{gemm, shape_str, MatView, Scalar, Tensor};

impl<T: Scalar> Tensor<T> {
    /// Batched matrix product `[.., m, k] × [.., k, n] → [.., m, n]`.
    ///
    /// Batch extents broadcast. A rank-2 right operand is folded into one
    /// large GEMM over all leading rows of the left operand.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || {
            Error::dim(
                "matmul",
                format!("{} × {}", shape_str(self.shape()), shape_str(other.shape())),
            )
        };
        if self.ndim() < 2 || other.ndim() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (self.shape()[self.ndim() - 2], self.shape()[self.ndim() - 1]);
        let (k2, n) = (other.shape()[other.ndim() - 2], other.shape()[other.ndim() - 1]);
        if k != k2 {
            return Err(mismatch());
        }

        if other.ndim() == 2 {
            let rows = self.numel() / k;
            let mut out = vec![T::zero(); rows * n];
            gemm(
                rows,
                k,
                n,
                MatView::row_major(self.data(), 0, k),
                MatView::row_major(other.data(), 0, n),
                T::zero(),
                &mut out,
                0,
            );
            let mut shape = self.shape().to_vec();
            *shape.last_mut().unwrap() = n;
            let (a, b) = (self.clone(), other.clone());
            return Ok(Tensor::from_op(
                "matmul",
                out,
                shape,
                vec![self.clone(), other.clone()],
                Box::new(move |g, needs| {
                    let ga = needs[0].then(|| {
                        let mut ga = vec![T::zero(); rows * k];
                        gemm(
                            rows,
                            n,
                            k,
                            MatView::row_major(g, 0, n),
                            MatView::row_major_t(b.data(), 0, n),
                            T::zero(),
                            &mut ga,
                            0,
                        );
                        ga
                    });
                    let gb = needs[1].then(|| {
                        let mut gb = vec![T::zero(); k * n];
                        gemm(
                            k,
                            rows,
                            n,
                            MatView::row_major_t(a.data(), 0, k),
                            MatView::row_major(g, 0, n),
                            T::zero(),
                            &mut gb,
                            0,
                        );
                        gb
                    });
                    vec![ga, gb]
                }),
            ));
        }

        let a_batch = &self.shape()[..self.ndim() - 2];
        let b_batch = &other.shape()[..other.ndim() - 2];
        let batch = broadcast_shape("matmul", a_batch, b_batch).map_err(|_| mismatch())?;
        let ia = broadcast_index(a_batch, &batch);
        let ib = broadcast_index(b_batch, &batch);
        let nb = ia.len();
        let mut out = vec![T::zero(); nb * m * n];
        for j in 0..nb {
            gemm(
                m,
                k,
                n,
                MatView::row_major(self.data(), ia[j] * m * k, k),
                MatView::row_major(other.data(), ib[j] * k * n, n),
                T::zero(),
                &mut out,
                j * m * n,
            );
        }
        let mut shape = batch;
        shape.extend_from_slice(&[m, n]);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            out,
            shape,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![T::zero(); a.numel()];
                    for j in 0..nb {
                        gemm(
                            m,
                            n,
                            k,
                            MatView::row_major(g, j * m * n, n),
                            MatView::row_major_t(b.data(), ib[j] * k * n, n),
                            T::one(),
                            &mut ga,
                            ia[j] * m * k,
                        );
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); b.numel()];
                    for j in 0..nb {
                        gemm(
                            k,
                            m,
                            n,
                            MatView::row_major_t(a.data(), ia[j] * m * k, k),
                            MatView::row_major(g, j * m * n, n),
                            T::one(),
                            &mut gb,
                            ib[j] * k * n,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}
