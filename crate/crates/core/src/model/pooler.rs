use super::{dims4, Modality, Region, TokenSet};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Downsampling of each pooling step in the first stage.
pub const STAGE1_POOL: (usize, usize, usize) = (3, 2, 1);
/// Total downsampling of the backbone.
pub const STRIDE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolerConfig {
    pub in_channels: usize,
    pub stage_channels: [usize; 3],
    pub groups: usize,
    pub kernels: Vec<usize>,
    /// First group (1-based) whose input receives the previous group's
    /// pooled output. 3 leaves group 2 without it.
    pub cascade_from_group: usize,
}

impl PoolerConfig {
    pub fn with_width(d_model: usize) -> Self {
        PoolerConfig {
            in_channels: 2,
            stage_channels: [48, 96, d_model],
            groups: 4,
            kernels: vec![3, 5, 7, 9],
            cascade_from_group: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.groups;
        if n == 0 || self.kernels.len() != n {
            return Err(Error::Config(format!("{} kernels for {n} groups", self.kernels.len())));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) || self.kernels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "pooling kernels {:?} must be odd and strictly increasing",
                self.kernels
            )));
        }
        for c in &self.stage_channels[1..] {
            if c % n != 0 {
                return Err(Error::Config(format!("{c} channels cannot be split into {n} groups")));
            }
        }
        if self.in_channels == 0 || self.stage_channels.contains(&0) {
            return Err(Error::Config("pooler channel counts must be positive".into()));
        }
        if !(2..=3).contains(&self.cascade_from_group) {
            return Err(Error::Config(format!(
                "msp.cascade_from_group must be 2 or 3, got {}",
                self.cascade_from_group
            )));
        }
        Ok(())
    }
}

/// Intermediate maps of one pooling stage, kept for inspection.
#[derive(Debug, Clone)]
pub struct MspTrace<T: Scalar> {
    /// Pooled groups `G_1..G_n`.
    pub groups: Vec<Tensor<T>>,
    /// Pointwise aggregation of the concatenated groups.
    pub aggregation: Tensor<T>,
    pub output: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct StageFeatures<T: Scalar> {
    pub e1: Tensor<T>,
    pub e2: Tensor<T>,
    pub e3: Tensor<T>,
    pub traces: Option<[MspTrace<T>; 2]>,
}

/// Channel-grouped multi-scale max pooling. Group `i` is pooled with
/// kernel `kernels[i]` at stride 1 and same padding; from group
/// `cascade_from` on, the previous group's pooled map is added to the
/// input first.
pub fn msp<T: Scalar>(x: &Tensor<T>, kernels: &[usize], cascade_from: usize) -> Result<Tensor<T>> {
    let groups = msp_groups(x, kernels, cascade_from)?;
    Tensor::concat(&groups.iter().collect::<Vec<_>>(), 1)
}

pub fn msp_groups<T: Scalar>(x: &Tensor<T>, kernels: &[usize], cascade_from: usize) -> Result<Vec<Tensor<T>>> {
    let (_, c, _, _) = dims4("msp", x)?;
    let n = kernels.len();
    if n == 0 || c % n != 0 {
        return Err(Error::Config(format!("{c} channels cannot be split into {n} groups")));
    }
    let parts = x.split(1, &vec![c / n; n])?;
    let mut out: Vec<Tensor<T>> = Vec::with_capacity(n);
    for (i, (xi, &k)) in parts.iter().zip(kernels).enumerate() {
        let input = match out.last() {
            Some(prev) if i + 1 >= cascade_from.max(2) => xi.add(prev)?,
            _ => xi.clone(),
        };
        out.push(input.max_pool2d(k, 1, (k - 1) / 2)?);
    }
    Ok(out)
}

/// Max and average aggregation stage; quarter resolution.
#[derive(Debug, Clone, Copy)]
pub struct Stage1 {
    pub stem: Conv2d,
    pub conv_i: Conv2d,
    pub conv_j: Conv2d,
}

impl Stage1 {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, c: usize) -> Result<Self> {
        Ok(Stage1 {
            stem: Conv2d::pointwise(&mut b.scope("stem"), cin, c)?,
            conv_i: Conv2d::pointwise(&mut b.scope("conv_i"), c, c)?,
            conv_j: Conv2d::pointwise(&mut b.scope("conv_j"), c, c)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, _, h, w) = dims4("pooler stage 1", e)?;
        if h % STRIDE != 0 || w % STRIDE != 0 {
            return Err(Error::Config(format!("event input {h}x{w} not divisible by {STRIDE}")));
        }
        let (k, s, p) = STAGE1_POOL;
        let f = self.stem.forward(ps, e)?.max_pool2d(k, s, p)?;
        let fi = self.conv_i.forward(ps, &f)?.max_pool2d(k, s, p)?;
        let fj = self.conv_j.forward(ps, &f)?.avg_pool2d(k, s, p)?;
        fi.add(&fj)
    }
}

/// Strided stem followed by a pointwise shortcut and a multi-scale
/// pooling trunk; half resolution.
#[derive(Debug, Clone)]
pub struct StageMsp {
    pub down: Conv2d,
    pub shortcut: Conv2d,
    pub fuse: Conv2d,
    pub kernels: Vec<usize>,
    pub cascade_from: usize,
}

impl StageMsp {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cin: usize, c: usize, cfg: &PoolerConfig) -> Result<Self> {
        Ok(StageMsp {
            down: Conv2d::new(&mut b.scope("down"), cin, c, 2, 2, 0)?,
            shortcut: Conv2d::pointwise(&mut b.scope("shortcut"), c, c)?,
            fuse: Conv2d::pointwise(&mut b.scope("fuse"), c, c)?,
            kernels: cfg.kernels.clone(),
            cascade_from: cfg.cascade_from_group,
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(ps, x)?.output)
    }

    pub fn forward_traced<T: Scalar>(&self, ps: &ParamStore<T>, x: &Tensor<T>) -> Result<MspTrace<T>> {
        let (_, _, h, w) = dims4("pooling stage", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!("pooling stage input {h}x{w} has odd extent")));
        }
        let d = self.down.forward(ps, x)?;
        let shortcut = self.shortcut.forward(ps, &d)?;
        let groups = msp_groups(&d, &self.kernels, self.cascade_from)?;
        let trunk = Tensor::concat(&groups.iter().collect::<Vec<_>>(), 1)?;
        let aggregation = self.fuse.forward(ps, &trunk)?;
        let output = aggregation.add(&shortcut)?;
        Ok(MspTrace {
            groups,
            aggregation,
            output,
        })
    }
}

/// Three-stage event backbone, total stride 16.
#[derive(Debug, Clone)]
pub struct Pooler {
    pub cfg: PoolerConfig,
    pub stage1: Stage1,
    pub stage2: StageMsp,
    pub stage3: StageMsp,
}

impl Pooler {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &PoolerConfig) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2, c3] = cfg.stage_channels;
        Ok(Pooler {
            stage1: Stage1::new(&mut b.scope("stage1"), cfg.in_channels, c1)?,
            stage2: StageMsp::new(&mut b.scope("stage2"), c1, c2, cfg)?,
            stage3: StageMsp::new(&mut b.scope("stage3"), c2, c3, cfg)?,
            cfg: cfg.clone(),
        })
    }

    pub fn features<T: Scalar>(&self, ps: &ParamStore<T>, e: &Tensor<T>, trace: bool) -> Result<StageFeatures<T>> {
        let (_, c, _, _) = dims4("pooler", e)?;
        if c != self.cfg.in_channels {
            return Err(Error::dim(
                "pooler",
                format!("input has {c} channels, pooler expects {}", self.cfg.in_channels),
            ));
        }
        let e1 = self.stage1.forward(ps, e)?;
        let t2 = self.stage2.forward_traced(ps, &e1)?;
        let t3 = self.stage3.forward_traced(ps, &t2.output)?;
        Ok(StageFeatures {
            e1,
            e2: t2.output.clone(),
            e3: t3.output.clone(),
            traces: trace.then_some([t2, t3]),
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, e: &Tensor<T>, region: Region) -> Result<TokenSet<T>> {
        TokenSet::from_map(&self.features(ps, e, false)?.e3, Modality::Event, region)
    }

    /// Tokens for the template and search event crops.
    pub fn encode<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        template: &Tensor<T>,
        search: &Tensor<T>,
    ) -> Result<(TokenSet<T>, TokenSet<T>)> {
        Ok((
            self.forward(ps, template, Region::Template)?,
            self.forward(ps, search, Region::Search)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_checks() {
        let mut cfg = PoolerConfig::with_width(192);
        cfg.validate().unwrap();
        cfg.kernels = vec![3, 5, 9, 7];
        assert!(cfg.validate().is_err());
        cfg.kernels = vec![3, 5, 7, 8];
        assert!(cfg.validate().is_err());
        let mut cfg = PoolerConfig::with_width(190);
        assert!(cfg.validate().is_err());
        cfg.stage_channels[2] = 192;
        cfg.cascade_from_group = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn token_counts() {
        let mut ps = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PoolerConfig {
            stage_channels: [8, 8, 16],
            ..PoolerConfig::with_width(16)
        };
        let p = Pooler::new(&mut Builder::new(&mut ps, &mut rng, "pooler"), &cfg).unwrap();
        let (t, s) = p
            .encode(&ps, &Tensor::zeros(&[1, 2, 128, 128]), &Tensor::zeros(&[1, 2, 256, 256]))
            .unwrap();
        assert_eq!((t.len(), t.grid, t.width()), (64, (8, 8), 16));
        assert_eq!((s.len(), s.grid), (256, (16, 16)));
        assert!(p.forward(&ps, &Tensor::zeros(&[1, 2, 40, 40]), Region::Search).is_err());
    }
}
