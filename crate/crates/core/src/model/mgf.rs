use super::{Region, TokenSet};
use crate::error::{Error, Result};
use crate::nn::{AttentionOutput, AttentionScale, Builder, LayerNorm, Mlp, MultiHeadAttention, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Which guided directions are active. `i` enhances event tokens with RGB
/// guidance, `ii` enhances RGB tokens with event guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Directions {
    #[default]
    Both,
    OnlyI,
    OnlyII,
    None,
}

impl Directions {
    pub fn event_enhanced(self) -> bool {
        matches!(self, Directions::Both | Directions::OnlyI)
    }

    pub fn rgb_enhanced(self) -> bool {
        matches!(self, Directions::Both | Directions::OnlyII)
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "both" => Directions::Both,
            "only_i" => Directions::OnlyI,
            "only_ii" => Directions::OnlyII,
            "none" => Directions::None,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgfConfig {
    pub downsample: usize,
    pub scale: AttentionScale,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub directions: Directions,
    pub depth: usize,
}

impl Default for MgfConfig {
    fn default() -> Self {
        MgfConfig {
            downsample: 4,
            scale: AttentionScale::SqrtDk,
            heads: 3,
            mlp_ratio: 4,
            directions: Directions::Both,
            depth: 1,
        }
    }
}

/// Integer square root when `k` is a perfect square.
fn exact_sqrt(k: usize) -> Option<usize> {
    let s = (k as f64).sqrt().round() as usize;
    (s * s == k).then_some(s)
}

/// Number of tokens [`downsample_kv`] keeps out of `grid`.
pub fn downsampled_len(grid: (usize, usize), k: usize) -> usize {
    let n = grid.0 * grid.1;
    match exact_sqrt(k) {
        Some(s) if grid.0 % s == 0 && grid.1 % s == 0 => n / k,
        _ => n.div_ceil(k),
    }
}

/// Shrinks a key/value token set by `k`: `s × s` average pooling over the
/// grid when `k = s²` and `s` divides it, otherwise every `k`-th token in
/// row-major order.
pub fn downsample_kv<T: Scalar>(t: &TokenSet<T>, k: usize) -> Result<TokenSet<T>> {
    if k == 0 {
        return Err(Error::Config("mgf.downsample must be at least 1".into()));
    }
    if k == 1 {
        return Ok(t.clone());
    }
    let (h, w) = t.grid;
    match exact_sqrt(k) {
        Some(s) if h % s == 0 && w % s == 0 => {
            let pooled = t.to_map()?.avg_pool2d(s, s, 0)?;
            TokenSet::from_map(&pooled, t.modality, t.region)
        }
        _ => {
            let idx: Vec<usize> = (0..h * w).step_by(k).collect();
            let n = idx.len();
            TokenSet::new(t.tokens.select(1, &idx)?, (1, n), t.modality, t.region)
        }
    }
}

/// Attention with queries from `q_src` and keys/values from the
/// downsampled `kv_src`.
pub fn cross_attend<T: Scalar>(
    ps: &ParamStore<T>,
    attn: &MultiHeadAttention,
    q_src: &TokenSet<T>,
    kv_src: &TokenSet<T>,
    k: usize,
) -> Result<AttentionOutput<T>> {
    if q_src.width() != kv_src.width() {
        return Err(Error::dim(
            "cross attention",
            format!("query width {} vs key width {}", q_src.width(), kv_src.width()),
        ));
    }
    let kv = downsample_kv(kv_src, k)?;
    attn.forward(ps, &q_src.tokens, &kv.tokens)
}

/// `y = p + CA(LN(p), LN(g))`, `out = y + MLP(LN(y))`.
#[derive(Debug, Clone, Copy)]
pub struct MgfBlock {
    pub norm_primary: LayerNorm,
    pub norm_guide: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
    pub downsample: usize,
}

impl MgfBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize, cfg: &MgfConfig) -> Result<Self> {
        if cfg.downsample == 0 {
            return Err(Error::Config("mgf.downsample must be at least 1".into()));
        }
        Ok(MgfBlock {
            norm_primary: LayerNorm::new(&mut b.scope("norm_primary"), d)?,
            norm_guide: LayerNorm::new(&mut b.scope("norm_guide"), d)?,
            attn: MultiHeadAttention::new(&mut b.scope("attn"), d, cfg.heads, cfg.scale)?,
            norm_mlp: LayerNorm::new(&mut b.scope("norm_mlp"), d)?,
            mlp: Mlp::new(&mut b.scope("mlp"), d, cfg.mlp_ratio)?,
            downsample: cfg.downsample,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, primary: &TokenSet<T>, guide: &TokenSet<T>) -> Result<TokenSet<T>> {
        Ok(self.forward_with_probs(ps, primary, guide)?.0)
    }

    pub fn forward_with_probs<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        primary: &TokenSet<T>,
        guide: &TokenSet<T>,
    ) -> Result<(TokenSet<T>, Tensor<T>)> {
        let q = primary.with_tokens(self.norm_primary.forward(ps, &primary.tokens)?)?;
        let kv = guide.with_tokens(self.norm_guide.forward(ps, &guide.tokens)?)?;
        let att = cross_attend(ps, &self.attn, &q, &kv, self.downsample)?;
        let y = primary.tokens.add(&att.out)?;
        let out = y.add(&self.mlp.forward(ps, &self.norm_mlp.forward(ps, &y)?)?)?;
        Ok((primary.with_tokens(out)?, att.probs))
    }
}

/// Stacks of guided blocks per region and direction.
#[derive(Debug, Clone)]
pub struct Mgf {
    pub cfg: MgfConfig,
    /// Indexed `[region][direction]`; direction 0 is `i`, 1 is `ii`.
    pub blocks: [[Vec<MgfBlock>; 2]; 2],
}

impl Mgf {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize, cfg: &MgfConfig) -> Result<Self> {
        let mut blocks: [[Vec<MgfBlock>; 2]; 2] = Default::default();
        for (r, region) in [Region::Template, Region::Search].into_iter().enumerate() {
            for (i, (dir, on)) in [("i", cfg.directions.event_enhanced()), ("ii", cfg.directions.rgb_enhanced())]
                .into_iter()
                .enumerate()
            {
                if !on {
                    continue;
                }
                for j in 0..cfg.depth {
                    let name = format!("{}.{dir}.{j}", region.name());
                    blocks[r][i].push(MgfBlock::new(&mut b.scope(&name), d, cfg)?);
                }
            }
        }
        Ok(Mgf { cfg: cfg.clone(), blocks })
    }

    /// Fuses one region. Every layer of both directions reads the tokens
    /// as they were before that layer.
    pub fn fuse_region<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        region: usize,
        rgb: &TokenSet<T>,
        ev: &TokenSet<T>,
    ) -> Result<(TokenSet<T>, TokenSet<T>)> {
        if rgb.grid != ev.grid || rgb.width() != ev.width() {
            return Err(Error::dim(
                "mutual fusion",
                format!(
                    "rgb grid {:?} width {} vs event grid {:?} width {}",
                    rgb.grid,
                    rgb.width(),
                    ev.grid,
                    ev.width()
                ),
            ));
        }
        let (mut rgb, mut ev) = (rgb.clone(), ev.clone());
        for j in 0..self.cfg.depth {
            let ev_next = match self.blocks[region][0].get(j) {
                Some(blk) => blk.forward(ps, &ev, &rgb)?,
                None => ev.clone(),
            };
            let rgb_next = match self.blocks[region][1].get(j) {
                Some(blk) => blk.forward(ps, &rgb, &ev)?,
                None => rgb.clone(),
            };
            (rgb, ev) = (rgb_next, ev_next);
        }
        Ok((rgb, ev))
    }

    /// Returns `(rgb_T', ev_T', rgb_S', ev_S')`.
    pub fn mutual_fuse<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        rgb_t: &TokenSet<T>,
        ev_t: &TokenSet<T>,
        rgb_s: &TokenSet<T>,
        ev_s: &TokenSet<T>,
    ) -> Result<[TokenSet<T>; 4]> {
        let (rt, et) = self.fuse_region(ps, 0, rgb_t, ev_t)?;
        let (rs, es) = self.fuse_region(ps, 1, rgb_s, ev_s)?;
        Ok([rt, et, rs, es])
    }
}
