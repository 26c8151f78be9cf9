//! Tracker building blocks: event pooler, RGB encoder, cross-modal fusion,
//! relation model and box head.

pub mod encoder;
pub mod head;
pub mod mgf;
pub mod pooler;
pub mod relation;
pub mod tracker;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Template,
    Search,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Template => "template",
            Region::Search => "search",
        }
    }
}

/// `[B, N, d]` tokens laid out row-major over an `h × w` grid.
#[derive(Debug, Clone)]
pub struct TokenSet<T: Scalar = f32> {
    pub tokens: Tensor<T>,
    pub grid: (usize, usize),
    pub modality: Modality,
    pub region: Region,
}

impl<T: Scalar> TokenSet<T> {
    pub fn new(tokens: Tensor<T>, grid: (usize, usize), modality: Modality, region: Region) -> Result<Self> {
        match tokens.shape() {
            &[_, n, _] if n == grid.0 * grid.1 => Ok(TokenSet {
                tokens,
                grid,
                modality,
                region,
            }),
            s => Err(Error::dim("token set", format!("tokens {s:?} do not fit grid {grid:?}"))),
        }
    }

    /// Flattens a `[B, d, h, w]` feature map into tokens.
    pub fn from_map(map: &Tensor<T>, modality: Modality, region: Region) -> Result<Self> {
        let (b, d, h, w) = dims4("token map", map)?;
        let tokens = map.reshape(&[b, d, h * w])?.permute(&[0, 2, 1])?;
        TokenSet::new(tokens, (h, w), modality, region)
    }

    /// Inverse of [`TokenSet::from_map`].
    pub fn to_map(&self) -> Result<Tensor<T>> {
        let (b, _, d) = (self.batch(), self.len(), self.width());
        self.tokens.permute(&[0, 2, 1])?.reshape(&[b, d, self.grid.0, self.grid.1])
    }

    pub fn batch(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.shape()[2]
    }

    /// Same tags, new tokens.
    pub fn with_tokens(&self, tokens: Tensor<T>) -> Result<Self> {
        TokenSet::new(tokens, self.grid, self.modality, self.region)
    }
}

pub(crate) fn dims4<T: Scalar>(what: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[b, c, h, w] => Ok((b, c, h, w)),
        s => Err(Error::dim(what, format!("expected [B, C, H, W], got {s:?}"))),
    }
}
