use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint;
use super::config::RunConfig;
use super::optim::AdamW;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::event::{CropWindow, Corpus, TrackSample, SEARCH_FACTOR};
use crate::model::tracker::{Batch, Tracker};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_TRACE: &str = "loss.csv";

/// Search window around `gt` with a random shift of up to `shift·side`
/// per axis and a log-uniform scale change of up to `±scale`.
pub fn jittered_window(gt: &BBox, rng: &mut ChaCha8Rng, shift: f64, scale: f64, out: usize) -> CropWindow {
    let mut w = CropWindow::around(gt, SEARCH_FACTOR, out);
    let side = gt.side();
    if shift > 0.0 {
        w.cx += rng.gen_range(-shift..=shift) * side;
        w.cy += rng.gen_range(-shift..=shift) * side;
    }
    if scale > 0.0 {
        w.side *= rng.gen_range(-scale..=scale).exp();
    }
    w
}

/// Training pairs `(sequence, frame)` with cached template crops.
pub struct TrainSet<'a> {
    pub corpus: &'a Corpus,
    templates: Vec<(Tensor<f32>, Tensor<f32>)>,
    pub pairs: Vec<(usize, usize)>,
}

impl<'a> TrainSet<'a> {
    pub fn new(corpus: &'a Corpus, template_size: usize) -> Result<Self> {
        let templates = corpus
            .sequences
            .iter()
            .map(|s| TrackSample::template(s, template_size))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<_> = corpus
            .sequences
            .iter()
            .enumerate()
            .flat_map(|(i, s)| (1..s.len()).map(move |t| (i, t)))
            .collect();
        if pairs.is_empty() {
            return Err(Error::Contract("training corpus has no frame pairs".into()));
        }
        Ok(TrainSet {
            corpus,
            templates,
            pairs,
        })
    }

    pub fn sample(&self, pair: (usize, usize), window: CropWindow) -> Result<TrackSample> {
        let (i, t) = pair;
        let seq = &self.corpus.sequences[i];
        let (rgb_search, evt_search) = TrackSample::search(seq, t, window)?;
        let (rgb_template, evt_template) = self.templates[i].clone();
        Ok(TrackSample {
            rgb_template,
            rgb_search,
            evt_template,
            evt_search,
            gt: window.to_crop(&seq.gt[t]),
            window,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    /// Loss of every optimizer step, in order.
    pub losses: Vec<f64>,
}

impl TrainSummary {
    pub fn initial(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

fn steps_per_epoch(pairs: usize, batch: usize) -> usize {
    pairs.div_ceil(batch)
}

/// Trains from the initialisation given by `train.seed`. Writes the
/// checkpoint after every epoch and at the end, and appends one
/// `step,loss` line per optimizer step to `out/loss.csv`.
pub fn train(cfg: &RunConfig, corpus: &Corpus, out: &Path, log: &mut dyn Write) -> Result<TrainSummary> {
    let tc = &cfg.train;
    let (model, mut ps) = Tracker::new::<f32>(&cfg.model, tc.seed)?;
    let set = TrainSet::new(corpus, cfg.model.encoder.template_size)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let trace_path = out.join(LOSS_TRACE);
    let mut trace = std::io::BufWriter::new(std::fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?);
    let io = |e| Error::io(&trace_path, e);
    writeln!(trace, "step,loss").map_err(io)?;

    let _ = writeln!(log, "{}", cfg.banner());
    let _ = writeln!(
        log,
        "{} parameters, {} training pairs, {} steps per epoch",
        ps.count(""),
        set.pairs.len(),
        steps_per_epoch(set.pairs.len(), tc.batch)
    );
    let mut opt = AdamW::new(tc.lr, tc.weight_decay);
    let mut losses = Vec::new();
    let limit = if tc.max_steps == 0 { usize::MAX } else { tc.max_steps };
    checkpoint::save(&ckpt, &ps)?;
    'epochs: for epoch in 0..tc.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order = set.pairs.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(tc.batch) {
            if losses.len() >= limit {
                break 'epochs;
            }
            let samples = chunk
                .iter()
                .map(|&pair| {
                    let gt = &corpus.sequences[pair.0].gt[pair.1];
                    let w = jittered_window(gt, &mut rng, tc.jitter_shift, tc.jitter_scale, cfg.model.encoder.search_size);
                    set.sample(pair, w)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::<f32>::from_samples(&samples.iter().collect::<Vec<_>>())?;
            let step = losses.len() + 1;
            let loss = step_once(&model, &mut ps, &mut opt, &batch).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
                other => other,
            })?;
            writeln!(trace, "{step},{loss}").map_err(io)?;
            trace.flush().map_err(io)?;
            losses.push(loss);
            if step == 1 || step % 10 == 0 {
                let _ = writeln!(log, "epoch {epoch} step {step} loss {loss:.5}");
            }
        }
        checkpoint::save(&ckpt, &ps)?;
    }
    checkpoint::save(&ckpt, &ps)?;
    Ok(TrainSummary {
        steps: losses.len(),
        losses,
    })
}

/// Forward, backward and one AdamW update; returns the loss value.
pub fn step_once(model: &Tracker, ps: &mut ParamStore<f32>, opt: &mut AdamW, batch: &Batch<f32>) -> Result<f64> {
    ps.zero_grads();
    let parts = model.loss(ps, batch)?;
    let value = parts.total.item()? as f64;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    parts.total.backward()?;
    opt.step(ps)?;
    Ok(value)
}
