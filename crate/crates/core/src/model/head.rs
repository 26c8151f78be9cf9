use super::TokenSet;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::nn::{Builder, Linear, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LAMBDA: f64 = 5.0;
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Dense per-cell predictions over the search grid.
#[derive(Debug, Clone)]
pub struct ScoreMap<T: Scalar = f32> {
    /// `[B, h, w]` raw score logits.
    pub logits: Tensor<T>,
    /// `[B, h, w]`, sigmoid of the logits.
    pub scores: Tensor<T>,
    /// `[B, 2, h, w]` sub-cell centre offsets `(x, y)` in `(0, 1)`.
    pub offsets: Tensor<T>,
    /// `[B, 2, h, w]` box size `(w, h)` as a fraction of the search extent.
    pub sizes: Tensor<T>,
    /// Search crop side in pixels.
    pub extent: f64,
}

impl<T: Scalar> ScoreMap<T> {
    pub fn grid(&self) -> (usize, usize) {
        let s = self.logits.shape();
        (s[1], s[2])
    }

    pub fn batch(&self) -> usize {
        self.logits.shape()[0]
    }

    /// Pixels per grid cell.
    pub fn stride(&self) -> f64 {
        self.extent / self.grid().1 as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Head {
    pub score: Linear,
    pub offset: Linear,
    pub size: Linear,
}

impl Head {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize) -> Result<Self> {
        Ok(Head {
            score: Linear::new(&mut b.scope("score"), d, 1)?,
            offset: Linear::new(&mut b.scope("offset"), d, 2)?,
            size: Linear::new(&mut b.scope("size"), d, 2)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, search: &TokenSet<T>, extent: f64) -> Result<ScoreMap<T>> {
        let (b, (h, w)) = (search.batch(), search.grid);
        let x = &search.tokens;
        let logits = self.score.forward(ps, x)?.reshape(&[b, h, w])?;
        let planes = |l: &Linear| -> Result<Tensor<T>> {
            l.forward(ps, x)?.sigmoid().permute(&[0, 2, 1])?.reshape(&[b, 2, h, w])
        };
        Ok(ScoreMap {
            scores: logits.sigmoid(),
            offsets: planes(&self.offset)?,
            sizes: planes(&self.size)?,
            logits,
            extent,
        })
    }
}

/// Index of the first maximum, row-major.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Decodes one box per batch element at the highest-scoring cell:
/// centre `(cell + offset)·stride`, size `sizes·extent`.
pub fn predict_box<T: Scalar>(map: &ScoreMap<T>) -> Vec<BBox> {
    let (h, w) = map.grid();
    let n = h * w;
    let stride = map.stride();
    let logits = map.logits.to_f64_vec();
    let (off, size) = (map.offsets.to_f64_vec(), map.sizes.to_f64_vec());
    (0..map.batch())
        .map(|b| {
            let cell = argmax(&logits[b * n..(b + 1) * n]);
            let (r, c) = (cell / w, cell % w);
            let at = |v: &[f64], k: usize| v[(b * 2 + k) * n + cell];
            BBox::from_center(
                (c as f64 + at(&off, 0)) * stride,
                (r as f64 + at(&off, 1)) * stride,
                at(&size, 0) * map.extent,
                at(&size, 1) * map.extent,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: DEFAULT_LAMBDA,
            sigma: DEFAULT_SIGMA,
        }
    }
}

pub struct LossParts<T: Scalar> {
    pub total: Tensor<T>,
    pub bce: f64,
    pub l1: f64,
}

/// Grid cell holding the box centre, clamped to the grid.
pub fn gt_cell(gt: &BBox, grid: (usize, usize), stride: f64) -> (usize, usize) {
    let (cx, cy) = gt.center();
    let clamp = |v: f64, n: usize| (v / stride).floor().clamp(0.0, (n - 1) as f64) as usize;
    (clamp(cy, grid.0), clamp(cx, grid.1))
}

/// Gaussian target peaking at 1 on `cell`.
pub fn gaussian_target(grid: (usize, usize), cell: (usize, usize), sigma: f64) -> Vec<f64> {
    let (h, w) = grid;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let d2 = (r as f64 - cell.0 as f64).powi(2) + (c as f64 - cell.1 as f64).powi(2);
            out.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    out
}

/// Mean BCE against the Gaussian target plus `lambda` times the L1 error
/// of offsets and sizes at the ground-truth cell, averaged over the batch.
pub fn loss<T: Scalar>(map: &ScoreMap<T>, gt: &[BBox], cfg: &LossConfig) -> Result<LossParts<T>> {
    let b = map.batch();
    if gt.len() != b {
        return Err(Error::Contract(format!("{} boxes for a batch of {b}", gt.len())));
    }
    if let Some(bad) = gt.iter().find(|g| !g.is_positive()) {
        return Err(Error::Contract(format!("degenerate ground-truth box {bad:?}")));
    }
    let (h, w) = map.grid();
    let n = h * w;
    let stride = map.stride();
    let mut target = Vec::with_capacity(b * n);
    let mut reg_target = vec![0.0; b * 2 * n];
    let mut mask = vec![0.0; b * 2 * n];
    let mut size_target = vec![0.0; b * 2 * n];
    for (i, g) in gt.iter().enumerate() {
        let cell = gt_cell(g, (h, w), stride);
        target.extend(gaussian_target((h, w), cell, cfg.sigma));
        let (cx, cy) = g.center();
        let flat = cell.0 * w + cell.1;
        let off = [cx / stride - cell.1 as f64, cy / stride - cell.0 as f64];
        let size = [g.w / map.extent, g.h / map.extent];
        for k in 0..2 {
            let j = (i * 2 + k) * n + flat;
            mask[j] = 1.0;
            reg_target[j] = off[k];
            size_target[j] = size[k];
        }
    }
    let bce = map.logits.bce_with_logits(&Tensor::from_f64(&target, &[b, h, w])?)?.mean();
    let shape = [b, 2, h, w];
    let mask = Tensor::from_f64(&mask, &shape)?;
    let l1_part = |pred: &Tensor<T>, tgt: &[f64]| -> Result<Tensor<T>> {
        Ok(pred.sub(&Tensor::from_f64(tgt, &shape)?)?.abs().mul(&mask)?.sum())
    };
    let l1 = l1_part(&map.offsets, &reg_target)?
        .add(&l1_part(&map.sizes, &size_target)?)?
        .mul_scalar(1.0 / b as f64);
    let (bce_v, l1_v) = (bce.item()?.as_f64(), l1.item()?.as_f64());
    Ok(LossParts {
        total: bce.add(&l1.mul_scalar(cfg.lambda))?,
        bce: bce_v,
        l1: l1_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(logits: Vec<f64>, off: Vec<f64>, size: Vec<f64>, g: usize) -> ScoreMap<f64> {
        let l = Tensor::from_vec(logits, &[1, g, g]).unwrap();
        ScoreMap {
            scores: l.sigmoid(),
            logits: l,
            offsets: Tensor::from_vec(off, &[1, 2, g, g]).unwrap(),
            sizes: Tensor::from_vec(size, &[1, 2, g, g]).unwrap(),
            extent: 256.0,
        }
    }

    #[test]
    fn uniform_scores_pick_first_cell() {
        let m = map_from(vec![0.3; 16], vec![0.5; 32], vec![0.25; 32], 4);
        let b = predict_box(&m)[0];
        assert_eq!(b.center(), (32.0, 32.0));
    }

    #[test]
    fn decode_arithmetic() {
        let mut logits = vec![0.0; 256];
        logits[8 * 16 + 8] = 1.0;
        let m = map_from(logits, vec![0.5; 512], vec![0.25; 512], 16);
        let b = predict_box(&m)[0];
        assert_eq!(b.center(), (136.0, 136.0));
        assert_eq!((b.w, b.h), (64.0, 64.0));
    }

    #[test]
    fn degenerate_gt_is_rejected() {
        let m = map_from(vec![0.0; 16], vec![0.5; 32], vec![0.25; 32], 4);
        let r = loss(&m, &[BBox::new(1.0, 1.0, 0.0, 4.0)], &LossConfig::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
