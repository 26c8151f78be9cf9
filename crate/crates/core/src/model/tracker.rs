use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{Encoder, EncoderConfig};
use super::head::{loss, predict_box, Head, LossConfig, LossParts, ScoreMap};
use super::mgf::{Mgf, MgfConfig};
use super::pooler::{MspTrace, Pooler, PoolerConfig};
use super::relation::{fuse_modalities, RelationModel};
use super::{Modality, TokenSet};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::event::{render_event_planes, TrackSample};
use crate::nn::{Builder, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// What the pooler consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EventInput {
    /// Positive and negative count planes.
    #[default]
    Counts,
    /// Three-channel rendering of the counts.
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub pooler: PoolerConfig,
    /// When false the event crops are rendered and passed through the RGB
    /// encoder instead.
    pub pooler_enabled: bool,
    pub event_input: EventInput,
    pub mgf: MgfConfig,
    pub rm_enabled: bool,
    pub rm_layers: usize,
    pub rm_heads: usize,
    pub loss: LossConfig,
}

impl ModelConfig {
    pub fn with_width(d_model: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                d_model,
                ..Default::default()
            },
            pooler: PoolerConfig::with_width(d_model),
            pooler_enabled: true,
            event_input: EventInput::Counts,
            mgf: MgfConfig::default(),
            rm_enabled: true,
            rm_layers: 4,
            rm_heads: 3,
            loss: LossConfig::default(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.encoder.d_model
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.pooler.validate()?;
        let d = self.d_model();
        if self.pooler.stage_channels[2] != d {
            return Err(Error::Config(format!(
                "pooler output width {} differs from d_model {d}",
                self.pooler.stage_channels[2]
            )));
        }
        let expect_in = match self.event_input {
            EventInput::Counts => 2,
            EventInput::Image => 3,
        };
        if self.pooler_enabled && self.pooler.in_channels != expect_in {
            return Err(Error::Config(format!(
                "pooler.in_channels is {} but the event input has {expect_in} channels",
                self.pooler.in_channels
            )));
        }
        for (what, heads) in [("mgf", self.mgf.heads), ("rm", self.rm_heads)] {
            if heads == 0 || d % heads != 0 {
                return Err(Error::Config(format!("{what}.heads {heads} does not divide d_model {d}")));
            }
        }
        if self.encoder.patch_size != super::pooler::STRIDE {
            return Err(Error::Config(format!(
                "patch size {} must equal the event backbone stride {}",
                self.encoder.patch_size,
                super::pooler::STRIDE
            )));
        }
        Ok(())
    }
}

/// Stacked crops for a batch, `[B, C, S, S]` each.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar = f32> {
    pub rgb_template: Tensor<T>,
    pub rgb_search: Tensor<T>,
    pub evt_template: Tensor<T>,
    pub evt_search: Tensor<T>,
    /// Ground truth in search-crop pixels.
    pub gt: Vec<BBox>,
}

fn stack<T: Scalar>(parts: &[&Tensor<f32>]) -> Result<Tensor<T>> {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in parts {
        if p.shape() != parts[0].shape() {
            return Err(Error::dim("batch", format!("{:?} vs {:?}", p.shape(), parts[0].shape())));
        }
        data.extend(p.data().iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::from_vec(data, &shape)
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[&TrackSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let pick = |f: fn(&TrackSample) -> &Tensor<f32>| stack::<T>(&samples.iter().map(|s| f(s)).collect::<Vec<_>>());
        Ok(Batch {
            rgb_template: pick(|s| &s.rgb_template)?,
            rgb_search: pick(|s| &s.rgb_search)?,
            evt_template: pick(|s| &s.evt_template)?,
            evt_search: pick(|s| &s.evt_search)?,
            gt: samples.iter().map(|s| s.gt).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }
}

/// Renders each `[2, S, S]` plane pair of a `[B, 2, S, S]` batch.
fn render_batch<T: Scalar>(planes: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, _, h, w) = super::dims4("event rendering", planes)?;
    let mut out = Vec::with_capacity(b * 3 * h * w);
    for i in 0..b {
        let one = Tensor::from_vec(planes.data()[i * 2 * h * w..(i + 1) * 2 * h * w].to_vec(), &[2, h, w])?;
        out.extend_from_slice(render_event_planes(&one)?.data());
    }
    Tensor::from_vec(out, &[b, 3, h, w])
}

/// Everything computed in one forward pass.
pub struct ForwardOutput<T: Scalar> {
    pub map: ScoreMap<T>,
    pub rgb_search: TokenSet<T>,
    pub event_search: TokenSet<T>,
    pub fused_search: TokenSet<T>,
    pub pooler_traces: Option<[MspTrace<T>; 2]>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub pooler: Option<Pooler>,
    pub mgf: Mgf,
    pub relation: Option<RelationModel>,
    pub head: Head,
}

impl Tracker {
    /// Builds the model and its parameters from `seed`.
    pub fn new<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model();
        let encoder = Encoder::new(&mut Builder::new(&mut ps, &mut rng, "rgb"), &cfg.encoder)?;
        let pooler = match cfg.pooler_enabled {
            true => Some(Pooler::new(&mut Builder::new(&mut ps, &mut rng, "pooler"), &cfg.pooler)?),
            false => None,
        };
        let mgf = Mgf::new(&mut Builder::new(&mut ps, &mut rng, "mgf"), d, &cfg.mgf)?;
        let relation = match cfg.rm_enabled {
            true => Some(RelationModel::new(
                &mut Builder::new(&mut ps, &mut rng, "rm"),
                d,
                cfg.rm_layers,
                cfg.rm_heads,
                cfg.encoder.mlp_ratio,
            )?),
            false => None,
        };
        let head = Head::new(&mut Builder::new(&mut ps, &mut rng, "head"), d)?;
        let model = Tracker {
            cfg: cfg.clone(),
            encoder,
            pooler,
            mgf,
            relation,
            head,
        };
        Ok((model, ps))
    }

    pub fn forward_detailed<T: Scalar>(&self, ps: &ParamStore<T>, batch: &Batch<T>, trace: bool) -> Result<ForwardOutput<T>> {
        let (rgb_t, rgb_s) = self.encoder.encode(ps, &batch.rgb_template, &batch.rgb_search, Modality::Rgb)?;
        let (ev_t, ev_s, pooler_traces) = match &self.pooler {
            Some(p) => {
                let (et, es) = match self.cfg.event_input {
                    EventInput::Counts => (batch.evt_template.clone(), batch.evt_search.clone()),
                    EventInput::Image => (render_batch(&batch.evt_template)?, render_batch(&batch.evt_search)?),
                };
                let ft = p.features(ps, &et, false)?;
                let fs = p.features(ps, &es, trace)?;
                (
                    TokenSet::from_map(&ft.e3, Modality::Event, super::Region::Template)?,
                    TokenSet::from_map(&fs.e3, Modality::Event, super::Region::Search)?,
                    fs.traces,
                )
            }
            None => {
                let (t, s) = self.encoder.encode(
                    ps,
                    &render_batch(&batch.evt_template)?,
                    &render_batch(&batch.evt_search)?,
                    Modality::Event,
                )?;
                (t, s, None)
            }
        };
        let [rgb_t2, ev_t2, rgb_s2, ev_s2] = self.mgf.mutual_fuse(ps, &rgb_t, &ev_t, &rgb_s, &ev_s)?;
        let (ft, fs) = fuse_modalities(&rgb_t2, &ev_t2, &rgb_s2, &ev_s2)?;
        let fused = match &self.relation {
            Some(rm) => rm.forward(ps, &ft, &fs)?,
            None => fs,
        };
        let extent = self.cfg.encoder.search_size as f64;
        Ok(ForwardOutput {
            map: self.head.forward(ps, &fused, extent)?,
            rgb_search: rgb_s2,
            event_search: ev_s2,
            fused_search: fused,
            pooler_traces,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, batch: &Batch<T>) -> Result<ScoreMap<T>> {
        Ok(self.forward_detailed(ps, batch, false)?.map)
    }

    pub fn loss<T: Scalar>(&self, ps: &ParamStore<T>, batch: &Batch<T>) -> Result<LossParts<T>> {
        loss(&self.forward(ps, batch)?, &batch.gt, &self.cfg.loss)
    }

    /// Predicted boxes in search-crop pixels.
    pub fn predict<T: Scalar>(&self, ps: &ParamStore<T>, batch: &Batch<T>) -> Result<Vec<BBox>> {
        Ok(predict_box(&crate::tensor::no_grad(|| self.forward(ps, batch))?))
    }
}
