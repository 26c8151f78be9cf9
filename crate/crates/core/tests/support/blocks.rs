//! Loop-based references for the attention blocks, reading parameters
//! straight out of a store. Everything works on one batch element given
//! as row-major `[n, d]` rows.

use rgbe_track::nn::{LayerNorm, Linear, Mlp, MultiHeadAttention, ParamStore, TransformerBlock};

use super::oracles;

pub fn linear(ps: &ParamStore<f64>, l: &Linear, x: &[f64]) -> Vec<f64> {
    let n = x.len() / l.din;
    oracles::linear(x, ps.get(l.weight).data(), ps.get(l.bias).data(), n, l.din, l.dout)
}

pub fn norm(ps: &ParamStore<f64>, ln: &LayerNorm, x: &[f64]) -> Vec<f64> {
    oracles::layer_norm(x, ps.get(ln.gamma).data(), ps.get(ln.beta).data(), 1e-5)
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn mlp(ps: &ParamStore<f64>, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(ps, &m.fc1, x).into_iter().map(gelu).collect();
    linear(ps, &m.fc2, &h)
}

fn head_cols(x: &[f64], d: usize, h: usize, dh: usize) -> Vec<f64> {
    x.chunks(d).flat_map(|row| row[h * dh..(h + 1) * dh].to_vec()).collect()
}

/// Multi-head attention of `q_src` rows over `kv_src` rows with the given
/// logit divisor, including the output projection.
pub fn attention(ps: &ParamStore<f64>, a: &MultiHeadAttention, q_src: &[f64], kv_src: &[f64], divisor: f64) -> Vec<f64> {
    let d = a.q.din;
    let (nq, nk) = (q_src.len() / d, kv_src.len() / d);
    let dh = d / a.heads;
    let (q, k, v) = (linear(ps, &a.q, q_src), linear(ps, &a.k, kv_src), linear(ps, &a.v, kv_src));
    let mut ctx = vec![0.0; nq * d];
    for h in 0..a.heads {
        let o = oracles::attention(
            &head_cols(&q, d, h, dh),
            &head_cols(&k, d, h, dh),
            &head_cols(&v, d, h, dh),
            nq,
            nk,
            dh,
            dh,
            divisor,
        );
        for i in 0..nq {
            ctx[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&o[i * dh..(i + 1) * dh]);
        }
    }
    linear(ps, &a.proj, &ctx)
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Pre-norm self-attention layer.
pub fn block(ps: &ParamStore<f64>, blk: &TransformerBlock, x: &[f64]) -> Vec<f64> {
    let d = blk.attn.q.din;
    let n = norm(ps, &blk.norm1, x);
    let y = add(x, &attention(ps, &blk.attn, &n, &n, ((d / blk.attn.heads) as f64).sqrt()));
    add(&y, &mlp(ps, &blk.mlp, &norm(ps, &blk.norm2, &y)))
}
