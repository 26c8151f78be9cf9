use super::check_axis;
use crate::error::{Error, Result};
use crate::tensor::{numel_of, shape_str, Scalar, Tensor};

fn permute_data<T: Scalar>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let n = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut src_strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if n == 0 {
        out.extend_from_slice(data);
        return (out, out_shape);
    }
    // Innermost axis handled in a tight loop.
    let last = n - 1;
    let (inner_len, inner_stride) = (out_shape[last], strides[last]);
    let mut counter = vec![0usize; n];
    let mut base = 0usize;
    let outer = total / inner_len;
    for _ in 0..outer {
        for j in 0..inner_len {
            out.push(data[base + j * inner_stride]);
        }
        for ax in (0..last).rev() {
            counter[ax] += 1;
            base += strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    (out, out_shape)
}

impl<T: Scalar> Tensor<T> {
    /// Same buffer, new extents.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() {
            return Err(Error::dim(
                "reshape",
                format!("{} to {}", shape_str(self.shape()), shape_str(shape)),
            ));
        }
        Ok(Tensor::from_op_shared(
            "reshape",
            self.data_rc(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let n = self.ndim();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(
                "permute",
                format!("{perm:?} is not a permutation of rank {n}"),
            ));
        }
        let (data, out_shape) = permute_data(self.data(), self.shape(), perm);
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(Tensor::from_op(
            "permute",
            data,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(permute_data(g, &out_shape_c, &inverse).0)]),
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        check_axis("transpose", a, self.ndim())?;
        check_axis("transpose", b, self.ndim())?;
        let mut perm: Vec<usize> = (0..self.ndim()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        check_axis("concat", axis, first.ndim())?;
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!(
                        "{} vs {} along axis {axis}",
                        shape_str(first.shape()),
                        shape_str(p.shape())
                    ),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_axis: usize = sizes.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total_axis;
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for (p, &s) in parts.iter().zip(&sizes) {
                let chunk = s * inner;
                data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor::from_op(
            "concat",
            data,
            out_shape,
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |g, needs| {
                let mut grads: Vec<Option<Vec<T>>> = needs
                    .iter()
                    .zip(&sizes)
                    .map(|(&n, &s)| n.then(|| Vec::with_capacity(outer * s * inner)))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gp, &s) in grads.iter_mut().zip(&sizes) {
                        let chunk = s * inner;
                        if let Some(v) = gp {
                            v.extend_from_slice(&g[pos..pos + chunk]);
                        }
                        pos += chunk;
                    }
                }
                grads
            }),
        ))
    }

    /// Splits along `axis` into pieces of the given extents.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
        check_axis("split", axis, self.ndim())?;
        if sizes.iter().sum::<usize>() != self.shape()[axis] || sizes.contains(&0) {
            return Err(Error::dim(
                "split",
                format!("sizes {sizes:?} do not partition extent {}", self.shape()[axis]),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.narrow(axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis("narrow", axis, self.ndim())?;
        let extent = self.shape()[axis];
        if len == 0 || start + len > extent {
            return Err(Error::dim(
                "narrow",
                format!("[{start}, {}) outside extent {extent}", start + len),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let numel = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); numel];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Gathers the listed positions along `axis` (repeats allowed).
    pub fn select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<T>> {
        check_axis("select", axis, self.ndim())?;
        let extent = self.shape()[axis];
        if indices.is_empty() || indices.iter().any(|&i| i >= extent) {
            return Err(Error::dim(
                "select",
                format!("indices {indices:?} invalid for extent {extent}"),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * extent + i) * inner;
                data.extend_from_slice(&self.data()[base..base + inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = indices.len();
        let idx = indices.to_vec();
        let numel = self.numel();
        Ok(Tensor::from_op(
            "select",
            data,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); numel];
                let mut pos = 0;
                for o in 0..outer {
                    for &i in &idx {
                        let base = (o * extent + i) * inner;
                        for (d, &s) in gx[base..base + inner].iter_mut().zip(&g[pos..pos + inner]) {
                            *d += s;
                        }
                        pos += inner;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
