//! Finite-difference checks over every differentiable op and the composite
//! blocks, in float64 at small widths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::error::Result;
use crate::model::encoder::{Encoder, EncoderConfig};
use crate::model::head::{loss, Head, LossConfig};
use crate::model::mgf::{MgfBlock, MgfConfig};
use crate::model::pooler::{msp, Pooler, PoolerConfig, Stage1, StageMsp};
use crate::model::relation::RelationModel;
use crate::model::{Modality, Region, TokenSet};
use crate::nn::{Builder, ParamStore, TransformerBlock};
use crate::tensor::gradcheck::{grad_check_report, gradients, probe, DEFAULT_EPS};
use crate::tensor::init::uniform;
use crate::tensor::Tensor;

pub const LINEAR_TOL: f64 = 1e-6;
pub const NONLINEAR_TOL: f64 = 1e-4;

/// Largest gradient magnitude accepted where the true gradient is zero;
/// central differences at `eps = 1e-5` leave roundoff near `1e-10`.
pub const ZERO_GRAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// `|a - n| / max(|a|, |n|, 1e-8)` over all coordinates.
    Relative,
    /// `max(|a|, |n|)` over coordinates whose gradient must vanish.
    Vanishing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub measure: Measure,
    pub tolerance: f64,
    pub error: f64,
    /// Analytic and numeric gradient at the worst coordinate.
    pub worst: (f64, f64),
    /// Input (or parameter name) holding the worst coordinate.
    pub at: String,
    pub coords: usize,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

type T64 = Tensor<f64>;

/// Values in random order with spacing 0.01, so a perturbation never
/// changes the winner of a max-pooling window.
pub fn spaced(shape: &[usize], rng: &mut ChaCha8Rng) -> T64 {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    Tensor::from_vec(v, shape).expect("non-empty shape")
}

struct Suite {
    cases: Vec<GradCase>,
    rng: ChaCha8Rng,
}

impl Suite {
    fn check(
        &mut self,
        name: &'static str,
        tolerance: f64,
        inputs: &[T64],
        f: impl Fn(&[T64]) -> Result<T64>,
    ) -> Result<()> {
        let r = grad_check_report(|t| probe(&f(t)?), inputs, DEFAULT_EPS)?;
        self.cases.push(GradCase {
            name: name.to_string(),
            measure: Measure::Relative,
            tolerance,
            error: r.max_rel_error,
            worst: (r.analytic, r.numeric),
            at: format!("input {}[{}]", r.worst.0, r.worst.1),
            coords: r.coords,
        });
        Ok(())
    }

    fn u(&mut self, shape: &[usize], lo: f64, hi: f64) -> T64 {
        uniform(shape, lo, hi, &mut self.rng)
    }

    /// Checks a parametrised block: inputs are the parameters followed by
    /// `extra`. Key biases are held fixed for the relative check and
    /// checked separately for a vanishing gradient.
    fn check_params(
        &mut self,
        name: &'static str,
        ps: &ParamStore<f64>,
        extra: &[T64],
        f: impl Fn(&ParamStore<f64>, &[T64]) -> Result<T64>,
    ) -> Result<()> {
        let names: Vec<&str> = ps.iter().map(|p| p.name.as_str()).collect();
        let base: Vec<T64> = ps.tensors().iter().map(|t| t.detach()).collect();
        let (fixed, free): (Vec<usize>, Vec<usize>) = (0..names.len()).partition(|&i| is_key_bias(names[i]));
        let assemble = |which: &[usize], values: &[T64]| -> Result<ParamStore<f64>> {
            let mut all = base.clone();
            for (&i, v) in which.iter().zip(values) {
                all[i] = v.clone();
            }
            ps.with_tensors(&all)
        };

        let nf = free.len();
        let mut inputs: Vec<T64> = free.iter().map(|&i| base[i].clone()).collect();
        inputs.extend(extra.iter().cloned());
        self.check(name, NONLINEAR_TOL, &inputs, |t| f(&assemble(&free, &t[..nf])?, &t[nf..]))?;
        let case = self.cases.last_mut().expect("just pushed");
        case.at = label(&case.at, |i| free.get(i).map(|&j| names[j]), nf);

        if fixed.is_empty() {
            return Ok(());
        }
        let held: Vec<T64> = fixed.iter().map(|&i| base[i].clone()).collect();
        let grads = gradients(|t| probe(&f(&assemble(&fixed, t)?, extra)?), &held, DEFAULT_EPS)?;
        let mut case = GradCase {
            name: format!("{name}/key_bias"),
            measure: Measure::Vanishing,
            tolerance: ZERO_GRAD_TOL,
            error: 0.0,
            worst: (0.0, 0.0),
            at: String::new(),
            coords: 0,
        };
        for (k, (analytic, numeric)) in grads.iter().enumerate() {
            for (c, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
                let e = a.abs().max(n.abs());
                if e >= case.error {
                    case.error = e;
                    case.worst = (a, n);
                    case.at = format!("{}[{c}]", names[fixed[k]]);
                }
                case.coords += 1;
            }
        }
        self.cases.push(case);
        Ok(())
    }
}

/// A uniform shift of one query's logits leaves its softmax unchanged, so
/// the key-projection bias never receives gradient.
fn is_key_bias(name: &str) -> bool {
    name.ends_with("attn.k.bias")
}

/// Rewrites `input i[c]` into a parameter name when `name_of(i)` knows it;
/// later inputs are renumbered from `offset`.
fn label<'a>(at: &str, name_of: impl Fn(usize) -> Option<&'a str>, offset: usize) -> String {
    let parse = || -> Option<(usize, &str)> {
        let rest = at.strip_prefix("input ")?;
        let (i, c) = rest.split_once('[')?;
        Some((i.parse().ok()?, c))
    };
    match parse() {
        Some((i, c)) => match name_of(i) {
            Some(n) => format!("{n}[{c}"),
            None => format!("input {}[{c}", i - offset),
        },
        None => at.to_string(),
    }
}

fn randomise(ps: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, std: f64) -> Result<()> {
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let shape = ps.get(id).shape().to_vec();
        ps.set(id, uniform(&shape, -std, std, rng))?;
    }
    Ok(())
}

fn tokens(t: &T64, grid: (usize, usize), m: Modality, r: Region) -> Result<TokenSet<f64>> {
    TokenSet::new(t.clone(), grid, m, r)
}

/// Runs every case. Errors only on malformed checks; tolerance failures
/// are reported through [`GradCase::passed`].
pub fn run() -> Result<Vec<GradCase>> {
    let mut s = Suite {
        cases: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(0x6a0d),
    };

    // Ops that are linear in each input.
    let (a, b) = (s.u(&[3, 4], -1.0, 1.0), s.u(&[3, 4], -1.0, 1.0));
    let row = s.u(&[4], -1.0, 1.0);
    let col = s.u(&[3, 1], -1.0, 1.0);
    s.check("add", LINEAR_TOL, &[a.clone(), row.clone()], |t| t[0].add(&t[1]))?;
    s.check("sub", LINEAR_TOL, &[a.clone(), col.clone()], |t| t[0].sub(&t[1]))?;
    s.check("mul", LINEAR_TOL, &[a.clone(), b.clone()], |t| t[0].mul(&t[1]))?;
    s.check("mul_broadcast", LINEAR_TOL, &[a.clone(), col], |t| t[0].mul(&t[1]))?;
    s.check("mul_scalar", LINEAR_TOL, &[a.clone()], |t| Ok(t[0].mul_scalar(-1.7).add_scalar(0.3)))?;
    s.check("sum", LINEAR_TOL, &[a.clone()], |t| Ok(t[0].sum()))?;
    s.check("mean", LINEAR_TOL, &[a.clone()], |t| Ok(t[0].mean()))?;
    let m = s.u(&[2, 4, 5], -1.0, 1.0);
    s.check("matmul", LINEAR_TOL, &[a.clone(), m.clone()], |t| t[0].matmul(&t[1]))?;
    s.check("reshape_permute", LINEAR_TOL, &[m.clone()], |t| t[0].reshape(&[4, 2, 5])?.permute(&[2, 0, 1]))?;
    s.check("transpose", LINEAR_TOL, &[m.clone()], |t| t[0].transpose(0, 2))?;
    s.check("concat_split", LINEAR_TOL, &[a.clone(), b.clone()], |t| {
        let c = Tensor::concat(&[&t[0], &t[1]], 1)?;
        let parts = c.split(1, &[3, 5])?;
        parts[1].mul(&parts[1])
    })?;
    s.check("narrow_select", LINEAR_TOL, &[m.clone()], |t| t[0].narrow(2, 1, 3)?.select(1, &[3, 0, 0, 2]))?;
    let x = s.u(&[2, 3, 7, 6], -1.0, 1.0);
    let w = s.u(&[4, 3, 3, 3], -1.0, 1.0);
    let bias = s.u(&[4], -1.0, 1.0);
    s.check("conv2d", LINEAR_TOL, &[x.clone(), w, bias], |t| t[0].conv2d(&t[1], Some(&t[2]), 2, 1))?;
    let w1 = s.u(&[5, 3, 1, 1], -1.0, 1.0);
    s.check("conv2d_pointwise", LINEAR_TOL, &[x.clone(), w1], |t| t[0].conv2d(&t[1], None, 1, 0))?;
    s.check("avg_pool2d", LINEAR_TOL, &[x.clone()], |t| t[0].avg_pool2d(3, 2, 1))?;
    let sp = spaced(&[2, 3, 7, 6], &mut s.rng);
    s.check("max_pool2d", LINEAR_TOL, &[sp.clone()], |t| t[0].max_pool2d(3, 2, 1))?;
    s.check("max_pool2d_same", LINEAR_TOL, &[sp], |t| t[0].max_pool2d(5, 1, 2))?;

    // Nonlinear ops.
    let pos = s.u(&[3, 5], 0.5, 2.0);
    let wide = s.u(&[3, 5], -2.0, 2.0);
    let tgt = s.u(&[3, 5], 0.0, 1.0);
    s.check("exp", NONLINEAR_TOL, &[wide.clone()], |t| Ok(t[0].exp()))?;
    s.check("ln", NONLINEAR_TOL, &[pos.clone()], |t| Ok(t[0].ln()))?;
    s.check("abs", NONLINEAR_TOL, &[pos.mul_scalar(-1.0)], |t| Ok(t[0].abs()))?;
    s.check("sigmoid", NONLINEAR_TOL, &[wide.clone()], |t| Ok(t[0].sigmoid()))?;
    s.check("tanh", NONLINEAR_TOL, &[wide.clone()], |t| Ok(t[0].tanh()))?;
    s.check("gelu", NONLINEAR_TOL, &[wide.clone()], |t| Ok(t[0].gelu()))?;
    s.check("softmax", NONLINEAR_TOL, &[wide.clone()], |t| t[0].softmax(1))?;
    s.check("bce_with_logits", NONLINEAR_TOL, &[wide.clone()], |t| t[0].bce_with_logits(&tgt))?;
    let (g, be) = (s.u(&[5], 0.5, 1.5), s.u(&[5], -0.5, 0.5));
    s.check("layer_norm", NONLINEAR_TOL, &[wide, g, be], |t| t[0].layer_norm(&t[1], &t[2], 1e-5))?;

    // Composite blocks.
    let mut ps = ParamStore::<f64>::new();
    let mut init = ChaCha8Rng::seed_from_u64(11);
    let st1 = Stage1::new(&mut Builder::new(&mut ps, &mut init, "s1"), 2, 8)?;
    let e = s.u(&[1, 2, 16, 16], 0.0, 3.0);
    s.check_params("stage1", &ps, &[e], |ps, t| st1.forward(ps, &t[0]))?;

    let sp = spaced(&[1, 8, 6, 6], &mut s.rng);
    s.check("msp", NONLINEAR_TOL, &[sp], |t| msp(&t[0], &[3, 5, 7, 9], 3))?;

    let mut ps = ParamStore::<f64>::new();
    let cfg = PoolerConfig {
        stage_channels: [8, 8, 8],
        ..PoolerConfig::with_width(8)
    };
    let st = StageMsp::new(&mut Builder::new(&mut ps, &mut init, "s2"), 4, 8, &cfg)?;
    let f = s.u(&[1, 4, 8, 8], -1.0, 1.0);
    s.check_params("stage_msp", &ps, &[f], |ps, t| st.forward(ps, &t[0]))?;

    let mut ps = ParamStore::<f64>::new();
    let pooler = Pooler::new(&mut Builder::new(&mut ps, &mut init, "pooler"), &cfg)?;
    let e = s.u(&[1, 2, 32, 32], 0.0, 3.0);
    s.check_params("pooler", &ps, &[e], |ps, t| Ok(pooler.forward(ps, &t[0], Region::Search)?.tokens))?;

    let d = 16;
    let mut ps = ParamStore::<f64>::new();
    let blk = TransformerBlock::new(&mut Builder::new(&mut ps, &mut init, "blk"), d, 2, 2)?;
    randomise(&mut ps, &mut init, 0.5)?;
    let x = s.u(&[2, 5, d], -1.0, 1.0);
    s.check_params("mhsa_block", &ps, &[x], |ps, t| blk.forward(ps, &t[0]))?;

    let ecfg = EncoderConfig {
        patch_size: 4,
        d_model: d,
        layers: 1,
        heads: 2,
        mlp_ratio: 2,
        in_channels: 3,
        template_size: 8,
        search_size: 12,
    };
    let mut ps = ParamStore::<f64>::new();
    let enc = Encoder::new(&mut Builder::new(&mut ps, &mut init, "rgb"), &ecfg)?;
    randomise(&mut ps, &mut init, 0.5)?;
    let (it, is) = (s.u(&[1, 3, 8, 8], 0.0, 1.0), s.u(&[1, 3, 12, 12], 0.0, 1.0));
    s.check_params("encoder", &ps, &[it, is], |ps, t| {
        let (a, b) = enc.encode(ps, &t[0], &t[1], Modality::Rgb)?;
        Tensor::concat(&[&a.tokens, &b.tokens], 1)
    })?;

    let mcfg = MgfConfig {
        downsample: 4,
        heads: 2,
        mlp_ratio: 2,
        ..Default::default()
    };
    let mut ps = ParamStore::<f64>::new();
    let mgf = MgfBlock::new(&mut Builder::new(&mut ps, &mut init, "mgf"), d, &mcfg)?;
    randomise(&mut ps, &mut init, 0.5)?;
    let (p, q) = (s.u(&[1, 8, d], -1.0, 1.0), s.u(&[1, 8, d], -1.0, 1.0));
    s.check_params("mgf_block", &ps, &[p, q], |ps, t| {
        let primary = tokens(&t[0], (2, 4), Modality::Event, Region::Search)?;
        let guide = tokens(&t[1], (2, 4), Modality::Rgb, Region::Search)?;
        Ok(mgf.forward(ps, &primary, &guide)?.tokens)
    })?;

    let mut ps = ParamStore::<f64>::new();
    let rm = RelationModel::new(&mut Builder::new(&mut ps, &mut init, "rm"), d, 1, 2, 2)?;
    randomise(&mut ps, &mut init, 0.5)?;
    let (ft, fs) = (s.u(&[1, 4, d], -1.0, 1.0), s.u(&[1, 9, d], -1.0, 1.0));
    s.check_params("relation_model", &ps, &[ft, fs], |ps, t| {
        let a = tokens(&t[0], (2, 2), Modality::Rgb, Region::Template)?;
        let b = tokens(&t[1], (3, 3), Modality::Rgb, Region::Search)?;
        Ok(rm.forward(ps, &a, &b)?.tokens)
    })?;

    let mut ps = ParamStore::<f64>::new();
    let head = Head::new(&mut Builder::new(&mut ps, &mut init, "head"), d)?;
    randomise(&mut ps, &mut init, 0.5)?;
    let x = s.u(&[2, 16, d], -1.0, 1.0);
    let gt = [BBox::new(10.0, 20.0, 12.0, 9.0), BBox::new(40.0, 3.0, 20.0, 30.0)];
    let np = ps.len();
    let mut inputs: Vec<T64> = ps.tensors().iter().map(|t| t.detach()).collect();
    inputs.push(x);
    let r = grad_check_report(
        |t| {
            let ps = ps.with_tensors(&t[..np])?;
            let map = head.forward(&ps, &tokens(&t[np], (4, 4), Modality::Rgb, Region::Search)?, 64.0)?;
            Ok(loss(&map, &gt, &LossConfig::default())?.total)
        },
        &inputs,
        DEFAULT_EPS,
    )?;
    let names: Vec<&str> = ps.iter().map(|p| p.name.as_str()).collect();
    s.cases.push(GradCase {
        name: "loss".to_string(),
        measure: Measure::Relative,
        tolerance: NONLINEAR_TOL,
        error: r.max_rel_error,
        worst: (r.analytic, r.numeric),
        at: label(&format!("input {}[{}]", r.worst.0, r.worst.1), |i| names.get(i).copied(), np),
        coords: r.coords,
    });

    Ok(s.cases)
}
