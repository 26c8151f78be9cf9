//! Grey-level dumps of intermediate feature maps and score maps.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::event::{write_ppm, CropWindow, RgbImage, Sequence, TrackSample, SEARCH_FACTOR};
use crate::model::tracker::{Batch, Tracker};
use crate::model::TokenSet;
use crate::nn::ParamStore;
use crate::tensor::{no_grad, Scalar, Tensor};

/// Value a constant map is drawn with.
pub const FLAT_GREY: u8 = 128;

/// Mean over channels of the first batch element of a `[B, C, H, W]` map.
pub fn channel_mean<T: Scalar>(map: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    let (c, h, w) = match map.shape() {
        &[_, c, h, w] => (c, h, w),
        s => return Err(Error::dim("channel_mean", format!("expected [B, C, H, W], got {s:?}"))),
    };
    let d = map.data();
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(&d[ch * h * w..(ch + 1) * h * w]) {
            *o += v.as_f64();
        }
    }
    out.iter_mut().for_each(|v| *v /= c as f64);
    Ok((h, w, out))
}

/// Min-max normalisation to `0..=255`, rounding to nearest.
pub fn quantize(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![FLAT_GREY; values.len()];
    }
    values.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

pub fn grey_image(w: usize, h: usize, values: &[f64]) -> RgbImage {
    RgbImage {
        width: w,
        height: h,
        data: quantize(values).into_iter().flat_map(|g| [g, g, g]).collect(),
    }
}

fn save_map<T: Scalar>(dir: &Path, name: &str, map: &Tensor<T>, written: &mut Vec<PathBuf>) -> Result<()> {
    let (h, w, v) = channel_mean(map)?;
    let path = dir.join(format!("{name}.ppm"));
    write_ppm(&path, &grey_image(w, h, &v))?;
    written.push(path);
    Ok(())
}

fn save_scores(dir: &Path, name: &str, model: &Tracker, ps: &ParamStore<f32>, tokens: &TokenSet<f32>, written: &mut Vec<PathBuf>) -> Result<()> {
    let map = model.head.forward(ps, tokens, model.cfg.encoder.search_size as f64)?;
    let (b, h, w) = (map.batch(), map.grid().0, map.grid().1);
    save_map(dir, name, &map.scores.reshape(&[b, 1, h, w])?, written)
}

/// Writes pooler group, aggregation and output maps for frame `t` of
/// `seq`, plus score maps from the RGB, event and fused search tokens.
/// Returns the written paths in order.
pub fn viz_features(model: &Tracker, ps: &ParamStore<f32>, seq: &Sequence, t: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let enc = &model.cfg.encoder;
    if t == 0 || t >= seq.len() {
        return Err(Error::Contract(format!("frame {t} must lie in 1..{}", seq.len())));
    }
    let window = CropWindow::around(&seq.gt[t - 1], SEARCH_FACTOR, enc.search_size);
    let mut sample = TrackSample::build(seq, t, window, enc.template_size)?;
    sample.gt = window.to_crop(&seq.gt[t]);
    let batch = Batch::<f32>::from_samples(&[&sample])?;
    let out = no_grad(|| model.forward_detailed(ps, &batch, true))?;
    let mut written = Vec::new();
    if let Some(pooler) = &model.pooler {
        let feats = no_grad(|| pooler.features(ps, &batch.evt_search, true))?;
        save_map(dir, "pooler_stage1_output", &feats.e1, &mut written)?;
        if let Some(traces) = &out.pooler_traces {
            for (k, tr) in traces.iter().enumerate() {
                let stage = k + 2;
                if stage == 2 {
                    for (g, map) in tr.groups.iter().enumerate() {
                        save_map(dir, &format!("pooler_stage2_msp_group{}", g + 1), map, &mut written)?;
                    }
                }
                save_map(dir, &format!("pooler_stage{stage}_aggregation"), &tr.aggregation, &mut written)?;
                save_map(dir, &format!("pooler_stage{stage}_output"), &tr.output, &mut written)?;
            }
        }
    }
    no_grad(|| -> Result<()> {
        save_scores(dir, "score_rgb", model, ps, &out.rgb_search, &mut written)?;
        save_scores(dir, "score_event", model, ps, &out.event_search, &mut written)?;
        save_scores(dir, "score_fused", model, ps, &out.fused_search, &mut written)
    })?;
    Ok(written)
}
