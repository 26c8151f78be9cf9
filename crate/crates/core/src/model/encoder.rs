use super::{dims4, Modality, Region, TokenSet};
use crate::error::{Error, Result};
use crate::nn::{Builder, Init, ParamId, ParamStore, TransformerBlock, PROJ_STD};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub in_channels: usize,
    pub template_size: usize,
    pub search_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 16,
            d_model: 192,
            layers: 4,
            heads: 3,
            mlp_ratio: 4,
            in_channels: 3,
            template_size: 128,
            search_size: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        for s in [self.template_size, self.search_size] {
            if self.patch_size == 0 || s % self.patch_size != 0 {
                return Err(Error::Config(format!("crop size {s} not divisible by patch {}", self.patch_size)));
            }
        }
        Ok(())
    }

    pub fn grid(&self, region: Region) -> (usize, usize) {
        let s = match region {
            Region::Template => self.template_size,
            Region::Search => self.search_size,
        } / self.patch_size;
        (s, s)
    }
}

/// Non-overlapping patch projection plus a learned position table per
/// region.
#[derive(Debug, Clone, Copy)]
pub struct PatchEmbed {
    pub weight: ParamId,
    pub bias: ParamId,
    pub pos_template: ParamId,
    pub pos_search: ParamId,
    pub patch: usize,
}

impl PatchEmbed {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &EncoderConfig) -> Result<Self> {
        let (p, d) = (cfg.patch_size, cfg.d_model);
        let count = |r| {
            let (h, w) = cfg.grid(r);
            h * w
        };
        Ok(PatchEmbed {
            weight: b.param("weight", &[d, cfg.in_channels, p, p], Init::TruncNormal(PROJ_STD))?,
            bias: b.param("bias", &[d], Init::Zeros)?,
            pos_template: b.param("pos_template", &[count(Region::Template), d], Init::TruncNormal(PROJ_STD))?,
            pos_search: b.param("pos_search", &[count(Region::Search), d], Init::TruncNormal(PROJ_STD))?,
            patch: p,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        img: &Tensor<T>,
        modality: Modality,
        region: Region,
    ) -> Result<TokenSet<T>> {
        let (_, _, h, w) = dims4("patch embed", img)?;
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::Config(format!("image {h}x{w} not divisible by patch {}", self.patch)));
        }
        let map = img.conv2d(ps.get(self.weight), Some(ps.get(self.bias)), self.patch, 0)?;
        let ts = TokenSet::from_map(&map, modality, region)?;
        let pos = ps.get(match region {
            Region::Template => self.pos_template,
            Region::Search => self.pos_search,
        });
        if pos.shape()[0] != ts.len() {
            return Err(Error::dim(
                "patch embed",
                format!("{} tokens but position table has {}", ts.len(), pos.shape()[0]),
            ));
        }
        ts.with_tokens(ts.tokens.add(pos)?)
    }
}

/// One-stream encoder: both regions are embedded, attended jointly, then
/// split back.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub embed: PatchEmbed,
    pub blocks: Vec<TransformerBlock>,
}

impl Encoder {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let embed = PatchEmbed::new(&mut b.scope("embed"), cfg)?;
        let blocks = (0..cfg.layers)
            .map(|i| TransformerBlock::new(&mut b.scope(&format!("blocks.{i}")), cfg.d_model, cfg.heads, cfg.mlp_ratio))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            cfg: cfg.clone(),
            embed,
            blocks,
        })
    }

    pub fn encode<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        template: &Tensor<T>,
        search: &Tensor<T>,
        modality: Modality,
    ) -> Result<(TokenSet<T>, TokenSet<T>)> {
        let t = self.embed.forward(ps, template, modality, Region::Template)?;
        let s = self.embed.forward(ps, search, modality, Region::Search)?;
        let (nt, ns) = (t.len(), s.len());
        let mut x = Tensor::concat(&[&t.tokens, &s.tokens], 1)?;
        for blk in &self.blocks {
            x = blk.forward(ps, &x)?;
        }
        let parts = x.split(1, &[nt, ns])?;
        Ok((t.with_tokens(parts[0].clone())?, s.with_tokens(parts[1].clone())?))
    }
}
