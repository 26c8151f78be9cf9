//! Direct, loop-based reference implementations used to check the tensor
//! engine. These deliberately avoid every code path of the library: plain
//! `Vec<f64>` buffers, explicit index arithmetic, no GEMM.
#![allow(dead_code)]

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// `x[B,C,H,W]`, `w[O,C,kh,kw]` cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (o, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * o * ho * wo];
    for bi in 0..b {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = bias.map_or(0.0, |bv| bv[oc]);
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let xx = (ox * stride + j) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let xv = x[((bi * c + ic) * h + y as usize) * w + xx as usize];
                                s += xv * wt[((oc * c + ic) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((bi * o + oc) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    (out, ho, wo)
}

/// Sliding-window pool over `planes` planes of `h×w`; padded cells are
/// skipped for max and counted as zeros (divisor `k·k`) for mean.
pub fn pool(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    max: bool,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = Vec::new();
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut sum = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        let y = (oy * stride + i) as isize - pad as isize;
                        let xx = (ox * stride + j) as isize - pad as isize;
                        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                            continue;
                        }
                        let v = x[(p * h + y as usize) * w + xx as usize];
                        best = best.max(v);
                        sum += v;
                    }
                }
                out.push(if max { best } else { sum / (k * k) as f64 });
            }
        }
    }
    (out, ho, wo)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let d = gamma.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for j in 0..d {
            out.push((row[j] - mean) / (var + eps).sqrt() * gamma[j] + beta[j]);
        }
    }
    out
}

/// Single-head scaled dot-product attention on row-major matrices.
pub fn attention(q: &[f64], k: &[f64], v: &[f64], nq: usize, nk: usize, d: usize, dv: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; nq * dv];
    for i in 0..nq {
        let logits: Vec<f64> = (0..nk)
            .map(|j| (0..d).map(|p| q[i * d + p] * k[j * d + p]).sum::<f64>() / scale)
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for j in 0..nk {
            for c in 0..dv {
                out[i * dv + c] += e[j] / s * v[j * dv + c];
            }
        }
    }
    out
}

/// `x[n×din] · w[din×dout] + b`.
pub fn linear(x: &[f64], w: &[f64], b: &[f64], n: usize, din: usize, dout: usize) -> Vec<f64> {
    let mut y = matmul(x, w, n, din, dout);
    for r in 0..n {
        for c in 0..dout {
            y[r * dout + c] += b[c];
        }
    }
    y
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
