mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbe_track::model::head::{argmax, gaussian_target, gt_cell, loss, predict_box, Head, LossConfig, ScoreMap};
use rgbe_track::model::relation::{fuse_modalities, RelationModel};
use rgbe_track::model::{Modality, Region, TokenSet};
use rgbe_track::nn::{Builder, ParamStore};
use rgbe_track::tensor::init::uniform;
use rgbe_track::{BBox, Error, Tensor};
use support::{blocks, oracles};

type T64 = Tensor<f64>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tokens(seed: u64, b: usize, grid: (usize, usize), d: usize, m: Modality, r: Region) -> TokenSet<f64> {
    let t = uniform::<f64>(&[b, grid.0 * grid.1, d], -1.0, 1.0, &mut rng(seed));
    TokenSet::new(t, grid, m, r).unwrap()
}

fn randomise(ps: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    for id in ps.ids().collect::<Vec<_>>() {
        let shape = ps.get(id).shape().to_vec();
        ps.set(id, uniform(&shape, -0.5, 0.5, &mut r)).unwrap();
    }
}

#[test]
fn fusion_is_an_elementwise_sum() {
    let rt = tokens(1, 2, (2, 2), 4, Modality::Rgb, Region::Template);
    let et = tokens(2, 2, (2, 2), 4, Modality::Event, Region::Template);
    let rs = tokens(3, 2, (4, 4), 4, Modality::Rgb, Region::Search);
    let es = tokens(4, 2, (4, 4), 4, Modality::Event, Region::Search);
    let (ft, fs) = fuse_modalities(&rt, &et, &rs, &es).unwrap();
    let want_t = blocks::add(rt.tokens.data(), et.tokens.data());
    assert_eq!(ft.tokens.data(), &want_t[..]);
    assert_eq!((ft.grid, fs.grid, fs.region), ((2, 2), (4, 4), Region::Search));

    let (gt, gs) = fuse_modalities(&et, &rt, &es, &rs).unwrap();
    assert_eq!(gt.tokens.data(), ft.tokens.data());
    assert_eq!(gs.tokens.data(), fs.tokens.data());

    let zero_t = et.with_tokens(T64::zeros(et.tokens.shape())).unwrap();
    let zero_s = es.with_tokens(T64::zeros(es.tokens.shape())).unwrap();
    let (zt, zs) = fuse_modalities(&rt, &zero_t, &rs, &zero_s).unwrap();
    assert_eq!((zt.tokens.data(), zs.tokens.data()), (rt.tokens.data(), rs.tokens.data()));

    assert!(matches!(fuse_modalities(&rt, &es, &rs, &es), Err(Error::Dimension { .. })));
}

fn relation(layers: usize, d: usize, seed: u64) -> (RelationModel, ParamStore<f64>) {
    let mut ps = ParamStore::<f64>::new();
    let rm = RelationModel::new(&mut Builder::new(&mut ps, &mut rng(seed), "rm"), d, layers, 2, 2).unwrap();
    randomise(&mut ps, seed + 1);
    (rm, ps)
}

#[test]
fn relation_returns_search_tokens_only() {
    let (rm, ps) = relation(2, 8, 5);
    let ft = tokens(6, 1, (2, 2), 8, Modality::Rgb, Region::Template);
    let fs = tokens(7, 1, (3, 3), 8, Modality::Rgb, Region::Search);
    let out = rm.forward(&ps, &ft, &fs).unwrap();
    assert_eq!((out.len(), out.grid, out.region), (9, (3, 3), Region::Search));
}

#[test]
fn one_layer_relation_matches_direct_formula() {
    let (rm, ps) = relation(1, 8, 8);
    let ft = tokens(9, 1, (1, 2), 8, Modality::Rgb, Region::Template);
    let fs = tokens(10, 1, (1, 3), 8, Modality::Rgb, Region::Search);
    let out = rm.forward(&ps, &ft, &fs).unwrap();
    let joint: Vec<f64> = ft.tokens.data().iter().chain(fs.tokens.data()).copied().collect();
    let want = blocks::block(&ps, &rm.blocks[0], &joint);
    assert!(oracles::max_abs_diff(out.tokens.data(), &want[2 * 8..]) <= 1e-10);
}

#[test]
fn zeroed_relation_is_identity() {
    let (rm, mut ps) = relation(3, 8, 11);
    for i in 0..3 {
        for p in ["attn.proj", "mlp.fc2"] {
            for t in ["weight", "bias"] {
                let id = ps.id(&format!("rm.blocks.{i}.{p}.{t}")).unwrap();
                let shape = ps.get(id).shape().to_vec();
                ps.set(id, T64::zeros(&shape)).unwrap();
            }
        }
    }
    let ft = tokens(12, 2, (2, 2), 8, Modality::Rgb, Region::Template);
    let fs = tokens(13, 2, (4, 4), 8, Modality::Rgb, Region::Search);
    assert_eq!(rm.forward(&ps, &ft, &fs).unwrap().tokens.data(), fs.tokens.data());
}

fn map(logits: Vec<f64>, off: Vec<f64>, size: Vec<f64>, g: usize, extent: f64) -> ScoreMap<f64> {
    let l = T64::from_vec(logits, &[1, g, g]).unwrap();
    ScoreMap {
        scores: l.sigmoid(),
        logits: l,
        offsets: T64::from_vec(off, &[1, 2, g, g]).unwrap(),
        sizes: T64::from_vec(size, &[1, 2, g, g]).unwrap(),
        extent,
    }
}

#[test]
fn ties_resolve_to_first_cell() {
    assert_eq!(argmax(&[0.5; 16]), 0);
    assert_eq!(argmax(&[0.1, 0.9, 0.3, 0.9]), 1);
    let b = predict_box(&map(vec![0.2; 16], vec![0.0; 32], vec![0.25; 32], 4, 256.0))[0];
    assert_eq!(b.center(), (0.0, 0.0));
}

#[test]
fn decode_centre_and_size() {
    let mut logits = vec![0.0; 256];
    logits[8 * 16 + 8] = 2.0;
    let b = predict_box(&map(logits, vec![0.5; 512], vec![0.25; 512], 16, 256.0))[0];
    assert_eq!(b.center(), (136.0, 136.0));
    assert_eq!((b.w, b.h), (64.0, 64.0));
    assert!(b.intersects(&BBox::from_center(136.0, 136.0, 10.0, 10.0)));
    assert!(!b.intersects(&BBox::new(0.0, 0.0, 20.0, 20.0)));
}

#[test]
fn head_output_shapes_and_ranges() {
    let mut ps = ParamStore::<f64>::new();
    let head = Head::new(&mut Builder::new(&mut ps, &mut rng(14), "head"), 8).unwrap();
    randomise(&mut ps, 15);
    let s = tokens(16, 2, (4, 4), 8, Modality::Rgb, Region::Search);
    let m = head.forward(&ps, &s, 256.0).unwrap();
    assert_eq!((m.grid(), m.batch(), m.stride()), ((4, 4), 2, 64.0));
    assert_eq!(m.offsets.shape(), &[2, 2, 4, 4]);
    for v in m.offsets.data().iter().chain(m.sizes.data()).chain(m.scores.data()) {
        assert!(*v > 0.0 && *v < 1.0);
    }
    assert_eq!(predict_box(&m).len(), 2);
}

#[test]
fn perfect_regression_has_zero_l1() {
    let (g, extent) = (16, 256.0);
    let gt = BBox::from_center(100.0, 60.0, 40.0, 30.0);
    let stride = extent / g as f64;
    let cell = gt_cell(&gt, (g, g), stride);
    assert_eq!(cell, (3, 6));
    let n = g * g;
    let mut off = vec![0.3; 2 * n];
    let mut size = vec![0.7; 2 * n];
    let flat = cell.0 * g + cell.1;
    off[flat] = 100.0 / stride - 6.0;
    off[n + flat] = 60.0 / stride - 3.0;
    size[flat] = 40.0 / extent;
    size[n + flat] = 30.0 / extent;
    let logits: Vec<f64> = (0..n).map(|i| (i % 7) as f64 - 3.0).collect();
    let m = map(logits.clone(), off, size, g, extent);
    let parts = loss(&m, &[gt], &LossConfig::default()).unwrap();
    assert!(parts.l1.abs() <= 1e-12);

    let target = gaussian_target((g, g), cell, 2.0);
    let bce: f64 = logits
        .iter()
        .zip(&target)
        .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
        .sum::<f64>()
        / n as f64;
    assert!((parts.bce - bce).abs() <= 1e-12);
    assert!((parts.total.item().unwrap() - bce).abs() <= 1e-12);
}

#[test]
fn degenerate_or_missing_gt_is_a_contract_error() {
    let m = map(vec![0.0; 16], vec![0.5; 32], vec![0.5; 32], 4, 64.0);
    let bad = BBox::new(1.0, 1.0, 0.0, 5.0);
    assert!(matches!(loss(&m, &[bad], &LossConfig::default()), Err(Error::Contract(_))));
    assert!(matches!(loss(&m, &[], &LossConfig::default()), Err(Error::Contract(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_non_negative(seed in any::<u64>(), cx in 0.0f64..64.0, cy in 0.0f64..64.0, w in 1.0f64..40.0) {
        let mut r = rng(seed);
        let m = map(
            uniform::<f64>(&[16], -4.0, 4.0, &mut r).data().to_vec(),
            uniform::<f64>(&[32], 0.0, 1.0, &mut r).data().to_vec(),
            uniform::<f64>(&[32], 0.0, 1.0, &mut r).data().to_vec(),
            4,
            64.0,
        );
        let p = loss(&m, &[BBox::from_center(cx, cy, w, w)], &LossConfig::default()).unwrap();
        prop_assert!(p.bce >= 0.0 && p.l1 >= 0.0);
        prop_assert!(p.total.item().unwrap() >= 0.0);
    }

    #[test]
    fn decode_ignores_monotone_rescaling(seed in any::<u64>(), a in 0.1f64..5.0, c in -3.0f64..3.0) {
        let mut r = rng(seed);
        let logits = uniform::<f64>(&[64], -2.0, 2.0, &mut r).data().to_vec();
        let off = uniform::<f64>(&[128], 0.0, 1.0, &mut r).data().to_vec();
        let size = uniform::<f64>(&[128], 0.0, 1.0, &mut r).data().to_vec();
        let scaled: Vec<f64> = logits.iter().map(|v| a * v + c).collect();
        let x = predict_box(&map(logits, off.clone(), size.clone(), 8, 128.0))[0];
        let y = predict_box(&map(scaled, off, size, 8, 128.0))[0];
        prop_assert_eq!(x, y);
    }
}
