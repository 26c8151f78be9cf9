use std::rc::Rc;

use super::{broadcast_index, broadcast_shape};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU on one value.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

fn scatter_add<T: Scalar>(g: &[T], idx: &[usize], len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    for (&i, &v) in idx.iter().zip(g) {
        out[i] += v;
    }
    out
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<T: Scalar> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: Binary) -> Result<Tensor<T>> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let f = move |a: T, b: T| match kind {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        };
        if self.shape() == other.shape() {
            let data: Vec<T> = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
            let (a, b) = (self.clone(), other.clone());
            return Ok(Tensor::from_op(
                name,
                data,
                self.shape().to_vec(),
                vec![self.clone(), other.clone()],
                Box::new(move |g, needs| {
                    let ga = needs[0].then(|| match kind {
                        Binary::Mul => g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect(),
                        _ => g.to_vec(),
                    });
                    let gb = needs[1].then(|| match kind {
                        Binary::Add => g.to_vec(),
                        Binary::Sub => g.iter().map(|&g| -g).collect(),
                        Binary::Mul => g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect(),
                    });
                    vec![ga, gb]
                }),
            ));
        }

        let (sa, sb) = (self.shape(), other.shape());
        if sb.len() < sa.len() && sa[sa.len() - sb.len()..] == *sb {
            // Trailing broadcast (bias rows): b index is the flat index mod |b|.
            let bn = other.numel();
            let bd = other.data();
            let data: Vec<T> = self
                .data()
                .chunks_exact(bn)
                .flat_map(|row| row.iter().zip(bd).map(|(&a, &b)| f(a, b)))
                .collect();
            let (a, b) = (self.clone(), other.clone());
            return Ok(Tensor::from_op(
                name,
                data,
                sa.to_vec(),
                vec![self.clone(), other.clone()],
                Box::new(move |g, needs| {
                    let ga = needs[0].then(|| match kind {
                        Binary::Mul => g
                            .chunks_exact(bn)
                            .flat_map(|row| row.iter().zip(b.data()).map(|(&g, &b)| g * b))
                            .collect(),
                        _ => g.to_vec(),
                    });
                    let gb = needs[1].then(|| {
                        let mut gb = vec![T::zero(); bn];
                        for (r, grow) in g.chunks_exact(bn).enumerate() {
                            let arow = &a.data()[r * bn..(r + 1) * bn];
                            for j in 0..bn {
                                gb[j] += match kind {
                                    Binary::Add => grow[j],
                                    Binary::Sub => -grow[j],
                                    Binary::Mul => grow[j] * arow[j],
                                };
                            }
                        }
                        gb
                    });
                    vec![ga, gb]
                }),
            ));
        }

        let out_shape = broadcast_shape(name, self.shape(), other.shape())?;
        let ia = Rc::new(broadcast_index(self.shape(), &out_shape));
        let ib = Rc::new(broadcast_index(other.shape(), &out_shape));
        let (ad, bd) = (self.data(), other.data());
        let data: Vec<T> = ia.iter().zip(ib.iter()).map(|(&i, &j)| f(ad[i], bd[j])).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            name,
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let local: Vec<T> = match kind {
                        Binary::Mul => g.iter().zip(ib.iter()).map(|(&g, &j)| g * b.data()[j]).collect(),
                        _ => g.to_vec(),
                    };
                    scatter_add(&local, &ia, a.numel())
                });
                let gb = needs[1].then(|| {
                    let local: Vec<T> = match kind {
                        Binary::Add => g.to_vec(),
                        Binary::Sub => g.iter().map(|&g| -g).collect(),
                        Binary::Mul => g.iter().zip(ia.iter()).map(|(&g, &i)| g * a.data()[i]).collect(),
                    };
                    scatter_add(&local, &ib, b.numel())
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Sub)
    }

    /// Elementwise product with right-aligned broadcasting.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Mul)
    }

    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = Rc::new(data.clone());
        Tensor::from_op(
            name,
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(y.iter())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        self.unary("mul_scalar", move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        self.unary("add_scalar", move |x| x + s, |_, _| T::one())
    }

    pub fn neg(&self) -> Tensor<T> {
        self.mul_scalar(-1.0)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", |x| x.ln(), |x, _| x.recip())
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        self.unary("gelu", gelu_scalar, |x, _| gelu_grad(x))
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in self.data() {
            acc += v;
        }
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![acc],
            Vec::new(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        self.sum().mul_scalar(1.0 / self.numel() as f64)
    }

    /// Per-element binary cross-entropy between `sigmoid(self)` and `target`,
    /// computed from logits in the overflow-free form
    /// `max(z,0) - z·t + ln(1 + e^{-|z|})`. `target` receives no gradient.
    pub fn bce_with_logits(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != target.shape() {
            return Err(crate::error::Error::dim(
                "bce_with_logits",
                format!("{:?} vs {:?}", self.shape(), target.shape()),
            ));
        }
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln())
            .collect();
        let z = self.clone();
        let t = target.detach();
        Ok(Tensor::from_op(
            "bce_with_logits",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gz = g
                    .iter()
                    .zip(z.data())
                    .zip(t.data())
                    .map(|((&g, &z), &t)| g * (sigmoid(z) - t))
                    .collect();
                vec![Some(gz)]
            }),
        ))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tensor;

    #[test]
    fn gelu_zero_is_zero() {
        let t = Tensor::<f64>::from_vec(vec![0.0], &[1]).unwrap().gelu();
        assert_eq!(t.data()[0], 0.0);
    }

    #[test]
    fn broadcast_add_and_grad() {
        let a = Tensor::<f64>::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::<f64>::param(vec![10.0, 20.0, 30.0], &[3]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        c.mul(&a).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let z = Tensor::<f64>::from_vec(vec![-3.0, 0.0, 2.5], &[3]).unwrap();
        let t = Tensor::<f64>::from_vec(vec![0.2, 1.0, 0.0], &[3]).unwrap();
        let l = z.bce_with_logits(&t).unwrap();
        for i in 0..3 {
            let p = 1.0 / (1.0 + (-z.data()[i]).exp());
            let want = -(t.data()[i] * p.ln() + (1.0 - t.data()[i]) * (1.0 - p).ln());
            assert!((l.data()[i] - want).abs() < 1e-12);
        }
    }
}
