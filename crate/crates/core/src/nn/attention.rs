use super::{Builder, LayerNorm, Linear, Mlp, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{counter, Scalar, Tensor};

/// Divisor applied to attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionScale {
    /// `sqrt(d_head)`.
    #[default]
    SqrtDk,
    /// `d_head` itself.
    Dk,
}

impl AttentionScale {
    pub fn divisor(self, d_head: usize) -> f64 {
        match self {
            AttentionScale::SqrtDk => (d_head as f64).sqrt(),
            AttentionScale::Dk => d_head as f64,
        }
    }
}

pub struct AttentionOutput<T: Scalar> {
    /// `[B, Nq, d]` after the output projection.
    pub out: Tensor<T>,
    /// `[B, heads, Nq, Nk]` attention probabilities.
    pub probs: Tensor<T>,
}

/// Multi-head scaled dot-product attention with separate Q/K/V/output
/// projections. Queries and keys may come from different token sets.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub scale: AttentionScale,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        d: usize,
        heads: usize,
        scale: AttentionScale,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(&mut b.scope("q"), d, d)?,
            k: Linear::new(&mut b.scope("k"), d, d)?,
            v: Linear::new(&mut b.scope("v"), d, d)?,
            proj: Linear::new(&mut b.scope("proj"), d, d)?,
            heads,
            scale,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        q_src: &Tensor<T>,
        kv_src: &Tensor<T>,
    ) -> Result<AttentionOutput<T>> {
        let (b, nq, d) = dims3("attention queries", q_src)?;
        let (bk, nk, dk) = dims3("attention keys", kv_src)?;
        if b != bk || d != dk || d != self.q.din {
            return Err(Error::dim(
                "attention",
                format!("queries {:?} vs keys {:?}", q_src.shape(), kv_src.shape()),
            ));
        }
        let h = self.heads;
        let dh = d / h;
        let q = self.q.forward(ps, q_src)?.reshape(&[b, nq, h, dh])?.permute(&[0, 2, 1, 3])?;
        let kt = self.k.forward(ps, kv_src)?.reshape(&[b, nk, h, dh])?.permute(&[0, 2, 3, 1])?;
        let v = self.v.forward(ps, kv_src)?.reshape(&[b, nk, h, dh])?.permute(&[0, 2, 1, 3])?;
        let scores = counter::tagged(counter::ATTENTION_SCORES, || q.matmul(&kt))?;
        let probs = scores.mul_scalar(1.0 / self.scale.divisor(dh)).softmax(3)?;
        let ctx = probs.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, nq, d])?;
        Ok(AttentionOutput {
            out: self.proj.forward(ps, &ctx)?,
            probs,
        })
    }
}

pub(crate) fn dims3<T: Scalar>(what: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[b, n, d] => Ok((b, n, d)),
        s => Err(Error::dim(what, format!("expected [B, N, d], got {s:?}"))),
    }
}

/// Pre-norm transformer layer:
/// `x' = x + MHSA(LN(x))`, `out = x' + MLP(LN(x'))`.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(TransformerBlock {
            norm1: LayerNorm::new(&mut b.scope("norm1"), d)?,
            attn: MultiHeadAttention::new(&mut b.scope("attn"), d, heads, AttentionScale::SqrtDk)?,
            norm2: LayerNorm::new(&mut b.scope("norm2"), d)?,
            mlp: Mlp::new(&mut b.scope("mlp"), d, mlp_ratio)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_with_probs(ps, x)?.0)
    }

    pub fn forward_with_probs<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = self.norm1.forward(ps, x)?;
        let att = self.attn.forward(ps, &n, &n)?;
        let y = x.add(&att.out)?;
        let out = y.add(&self.mlp.forward(ps, &self.norm2.forward(ps, &y)?)?)?;
        Ok((out, att.probs))
    }
}
