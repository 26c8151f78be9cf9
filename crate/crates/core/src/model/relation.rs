use super::{Modality, TokenSet};
use crate::error::{Error, Result};
use crate::nn::{Builder, ParamStore, TransformerBlock};
use crate::tensor::{Scalar, Tensor};

fn sum_region<T: Scalar>(rgb: &TokenSet<T>, ev: &TokenSet<T>) -> Result<TokenSet<T>> {
    if rgb.grid != ev.grid || rgb.region != ev.region {
        return Err(Error::dim(
            "modality sum",
            format!("rgb grid {:?} vs event grid {:?}", rgb.grid, ev.grid),
        ));
    }
    let mut out = rgb.with_tokens(ev.tokens.add(&rgb.tokens)?)?;
    out.modality = Modality::Rgb;
    Ok(out)
}

/// Per-region sum of the two modalities: `(ev_T + rgb_T, ev_S + rgb_S)`.
pub fn fuse_modalities<T: Scalar>(
    rgb_t: &TokenSet<T>,
    ev_t: &TokenSet<T>,
    rgb_s: &TokenSet<T>,
    ev_s: &TokenSet<T>,
) -> Result<(TokenSet<T>, TokenSet<T>)> {
    Ok((sum_region(rgb_t, ev_t)?, sum_region(rgb_s, ev_s)?))
}

/// Joint self-attention over template and search tokens; only the search
/// part is returned.
#[derive(Debug, Clone)]
pub struct RelationModel {
    pub blocks: Vec<TransformerBlock>,
}

impl RelationModel {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, d: usize, layers: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| TransformerBlock::new(&mut b.scope(&format!("blocks.{i}")), d, heads, mlp_ratio))
            .collect::<Result<_>>()?;
        Ok(RelationModel { blocks })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, ft: &TokenSet<T>, fs: &TokenSet<T>) -> Result<TokenSet<T>> {
        if ft.width() != fs.width() {
            return Err(Error::dim(
                "relation model",
                format!("template width {} vs search width {}", ft.width(), fs.width()),
            ));
        }
        let (nt, ns) = (ft.len(), fs.len());
        let mut x = Tensor::concat(&[&ft.tokens, &fs.tokens], 1)?;
        for blk in &self.blocks {
            x = blk.forward(ps, &x)?;
        }
        fs.with_tokens(x.narrow(1, nt, ns)?)
    }
}
