use std::path::Path;

use super::checkpoint;
use super::config::RunConfig;
use crate::bbox::BBox;
use crate::error::Result;
use crate::event::{read_dataset, CropWindow, Corpus, Sequence, TrackSample, SEARCH_FACTOR};
use crate::metrics::{evaluate_tracker, EvalReport, SequenceTracker};
use crate::model::tracker::{Batch, Tracker};
use crate::nn::ParamStore;
use crate::tensor::no_grad;

/// Smallest box side a prediction is allowed to shrink to, in pixels.
const MIN_SIDE: f64 = 2.0;

/// Runs the model frame by frame, centring each search crop on the
/// previous prediction.
pub struct ModelTracker<'a> {
    pub model: &'a Tracker,
    pub ps: &'a ParamStore<f32>,
}

impl ModelTracker<'_> {
    fn step(&self, seq: &Sequence, t: usize, template: &TrackSample, prev: &BBox) -> Result<BBox> {
        let enc = &self.model.cfg.encoder;
        let window = CropWindow::around(prev, SEARCH_FACTOR, enc.search_size);
        let (rgb_search, evt_search) = TrackSample::search(seq, t, window)?;
        let sample = TrackSample {
            rgb_search,
            evt_search,
            window,
            ..template.clone()
        };
        let batch = Batch::<f32>::from_samples(&[&sample])?;
        let pred = no_grad(|| self.model.predict(self.ps, &batch))?[0];
        let b = window.to_frame(&pred);
        let (cx, cy) = b.center();
        Ok(BBox::from_center(cx, cy, b.w.max(MIN_SIDE), b.h.max(MIN_SIDE)))
    }
}

impl SequenceTracker for ModelTracker<'_> {
    fn track(&mut self, seq: &Sequence) -> Result<Vec<BBox>> {
        let enc = &self.model.cfg.encoder;
        let (rgb_template, evt_template) = TrackSample::template(seq, enc.template_size)?;
        let first = seq.gt[0];
        let template = TrackSample {
            rgb_search: rgb_template.clone(),
            evt_search: evt_template.clone(),
            rgb_template,
            evt_template,
            gt: first,
            window: CropWindow::around(&first, SEARCH_FACTOR, enc.search_size),
        };
        let mut out = vec![first];
        for t in 1..seq.len() {
            let b = self.step(seq, t, &template, &out[t - 1])?;
            out.push(b);
        }
        Ok(out)
    }
}

pub fn load_model(cfg: &RunConfig, ckpt: &Path) -> Result<(Tracker, ParamStore<f32>)> {
    let (model, mut ps) = Tracker::new::<f32>(&cfg.model, cfg.train.seed)?;
    checkpoint::load(ckpt, &mut ps)?;
    Ok((model, ps))
}

pub fn evaluate_corpus(model: &Tracker, ps: &ParamStore<f32>, corpus: &Corpus) -> Result<EvalReport> {
    evaluate_tracker(&mut ModelTracker { model, ps }, corpus)
}

/// Loads the checkpoint and evaluation corpus named by `cfg`.
pub fn evaluate(cfg: &RunConfig, ckpt: &Path) -> Result<EvalReport> {
    let (model, ps) = load_model(cfg, ckpt)?;
    let mut corpus = read_dataset(&cfg.eval.dir)?;
    if cfg.eval.sequences > 0 {
        corpus.sequences.truncate(cfg.eval.sequences);
    }
    evaluate_corpus(&model, &ps, &corpus)
}
