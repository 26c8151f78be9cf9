mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgbe_track::model::encoder::{Encoder, EncoderConfig, PatchEmbed};
use rgbe_track::model::{Modality, Region};
use rgbe_track::nn::{Builder, ParamStore, TransformerBlock};
use rgbe_track::tensor::init::uniform;
use rgbe_track::{Error, Tensor};
use support::{blocks, oracles};

type T64 = Tensor<f64>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small(d: usize, layers: usize) -> EncoderConfig {
    EncoderConfig {
        patch_size: 16,
        d_model: d,
        layers,
        heads: 3,
        mlp_ratio: 2,
        in_channels: 3,
        template_size: 128,
        search_size: 256,
    }
}

fn randomise(ps: &mut ParamStore<f64>, r: &mut ChaCha8Rng, std: f64) {
    for id in ps.ids().collect::<Vec<_>>() {
        let shape = ps.get(id).shape().to_vec();
        ps.set(id, uniform(&shape, -std, std, r)).unwrap();
    }
}

fn zero(ps: &mut ParamStore<f64>, name: &str) {
    let id = ps.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let shape = ps.get(id).shape().to_vec();
    ps.set(id, T64::zeros(&shape)).unwrap();
}

#[test]
fn patch_embed_token_counts_and_zero_case() {
    let cfg = small(12, 1);
    let mut ps = ParamStore::<f64>::new();
    let pe = PatchEmbed::new(&mut Builder::new(&mut ps, &mut rng(1), "e"), &cfg).unwrap();
    let s = pe.forward(&ps, &T64::zeros(&[1, 3, 256, 256]), Modality::Rgb, Region::Search).unwrap();
    assert_eq!((s.len(), s.grid, s.width()), (256, (16, 16), 12));
    for n in ["e.bias", "e.pos_template", "e.pos_search"] {
        zero(&mut ps, n);
    }
    let t = pe.forward(&ps, &T64::zeros(&[2, 3, 128, 128]), Modality::Rgb, Region::Template).unwrap();
    assert_eq!(t.len(), 64);
    assert!(t.tokens.data().iter().all(|&v| v == 0.0));
    let bad = pe.forward(&ps, &T64::zeros(&[1, 3, 120, 128]), Modality::Rgb, Region::Template);
    assert!(matches!(bad, Err(Error::Config(_))));
}

#[test]
fn patch_embed_matches_gather_matmul() {
    let cfg = EncoderConfig {
        patch_size: 4,
        template_size: 8,
        search_size: 12,
        ..small(6, 1)
    };
    let mut ps = ParamStore::<f64>::new();
    let pe = PatchEmbed::new(&mut Builder::new(&mut ps, &mut rng(2), "e"), &cfg).unwrap();
    let mut r = rng(3);
    randomise(&mut ps, &mut r, 0.5);
    let img = uniform::<f64>(&[2, 3, 12, 12], 0.0, 1.0, &mut r);
    let (p, d, g) = (4, 6, 3);
    // Flatten each patch in (channel, row, col) order, then multiply by the
    // transposed kernel matrix.
    let w = ps.get(pe.weight).data().to_vec();
    let mut wt = vec![0.0; 3 * p * p * d];
    for o in 0..d {
        for k in 0..3 * p * p {
            wt[k * d + o] = w[o * 3 * p * p + k];
        }
    }
    let bias = ps.get(pe.bias).data().to_vec();
    let pos = ps.get(pe.pos_search).data().to_vec();
    let out = pe.forward(&ps, &img, Modality::Rgb, Region::Search).unwrap();
    for b in 0..2 {
        let mut rows = Vec::new();
        for (py, px) in (0..g).flat_map(|y| (0..g).map(move |x| (y, x))) {
            for c in 0..3 {
                for i in 0..p {
                    for j in 0..p {
                        rows.push(img.data()[((b * 3 + c) * 12 + py * p + i) * 12 + px * p + j]);
                    }
                }
            }
        }
        let want = blocks::add(&oracles::linear(&rows, &wt, &bias, g * g, 3 * p * p, d), &pos);
        let got = &out.tokens.data()[b * g * g * d..(b + 1) * g * g * d];
        assert!(oracles::max_abs_diff(got, &want) <= 1e-12);
    }
}

fn block(d: usize, heads: usize, seed: u64) -> (TransformerBlock, ParamStore<f64>) {
    let mut ps = ParamStore::<f64>::new();
    let blk = TransformerBlock::new(&mut Builder::new(&mut ps, &mut rng(seed), "blk"), d, heads, 2).unwrap();
    randomise(&mut ps, &mut rng(seed + 100), 0.5);
    (blk, ps)
}

#[test]
fn single_token_attention_is_value_projection() {
    let (blk, ps) = block(6, 2, 4);
    let x = uniform::<f64>(&[1, 1, 6], -1.0, 1.0, &mut rng(5));
    let att = blk.attn.forward(&ps, &x, &x).unwrap();
    let want = blocks::linear(&ps, &blk.attn.proj, &blocks::linear(&ps, &blk.attn.v, x.data()));
    assert!(oracles::max_abs_diff(att.out.data(), &want) <= 1e-12);
    assert!(att.probs.data().iter().all(|&p| p == 1.0));
}

#[test]
fn attention_rows_are_distributions() {
    let (blk, ps) = block(12, 3, 6);
    let x = uniform::<f64>(&[2, 7, 12], -3.0, 3.0, &mut rng(7));
    let (_, probs) = blk.forward_with_probs(&ps, &x).unwrap();
    assert_eq!(probs.shape(), &[2, 3, 7, 7]);
    for row in probs.data().chunks(7) {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn two_token_block_matches_direct_formula() {
    let (blk, ps) = block(6, 2, 8);
    let x = uniform::<f64>(&[1, 2, 6], -1.0, 1.0, &mut rng(9));
    let got = blk.forward(&ps, &x).unwrap();
    assert!(oracles::max_abs_diff(got.data(), &blocks::block(&ps, &blk, x.data())) <= 1e-10);
}

#[test]
fn encode_splits_joint_sequence() {
    let cfg = small(12, 2);
    let mut ps = ParamStore::<f64>::new();
    let enc = Encoder::new(&mut Builder::new(&mut ps, &mut rng(10), "rgb"), &cfg).unwrap();
    let mut r = rng(11);
    let (t, s) = (uniform::<f64>(&[1, 3, 128, 128], 0.0, 1.0, &mut r), uniform::<f64>(&[1, 3, 256, 256], 0.0, 1.0, &mut r));
    let (ot, os) = enc.encode(&ps, &t, &s, Modality::Rgb).unwrap();
    assert_eq!((ot.len(), os.len()), (64, 256));
    assert_eq!((ot.region, os.region), (Region::Template, Region::Search));

    let et = enc.embed.forward(&ps, &t, Modality::Rgb, Region::Template).unwrap();
    let es = enc.embed.forward(&ps, &s, Modality::Rgb, Region::Search).unwrap();
    let mut x: Vec<f64> = et.tokens.data().iter().chain(es.tokens.data()).copied().collect();
    for b in &enc.blocks {
        x = blocks::block(&ps, b, &x);
    }
    assert!(oracles::max_abs_diff(ot.tokens.data(), &x[..64 * 12]) <= 1e-10);
    assert!(oracles::max_abs_diff(os.tokens.data(), &x[64 * 12..]) <= 1e-10);
}

#[test]
fn zeroed_branches_reduce_encode_to_patch_embed() {
    let cfg = small(12, 2);
    let mut ps = ParamStore::<f64>::new();
    let enc = Encoder::new(&mut Builder::new(&mut ps, &mut rng(12), "rgb"), &cfg).unwrap();
    randomise(&mut ps, &mut rng(13), 0.3);
    for i in 0..2 {
        for p in ["attn.proj", "mlp.fc2"] {
            zero(&mut ps, &format!("rgb.blocks.{i}.{p}.weight"));
            zero(&mut ps, &format!("rgb.blocks.{i}.{p}.bias"));
        }
    }
    let mut r = rng(14);
    let (t, s) = (uniform::<f64>(&[1, 3, 128, 128], 0.0, 1.0, &mut r), uniform::<f64>(&[1, 3, 256, 256], 0.0, 1.0, &mut r));
    let (ot, os) = enc.encode(&ps, &t, &s, Modality::Rgb).unwrap();
    let et = enc.embed.forward(&ps, &t, Modality::Rgb, Region::Template).unwrap();
    let es = enc.embed.forward(&ps, &s, Modality::Rgb, Region::Search).unwrap();
    assert_eq!(ot.tokens.data(), et.tokens.data());
    assert_eq!(os.tokens.data(), es.tokens.data());
}

#[test]
fn encode_is_batch_equivariant() {
    let cfg = small(12, 1);
    let mut ps = ParamStore::<f64>::new();
    let enc = Encoder::new(&mut Builder::new(&mut ps, &mut rng(15), "rgb"), &cfg).unwrap();
    let mut r = rng(16);
    let t = uniform::<f64>(&[3, 3, 128, 128], 0.0, 1.0, &mut r);
    let s = uniform::<f64>(&[3, 3, 256, 256], 0.0, 1.0, &mut r);
    let perm = [2, 0, 1];
    let (_, os) = enc.encode(&ps, &t, &s, Modality::Rgb).unwrap();
    let (_, ps_out) = enc.encode(&ps, &t.select(0, &perm).unwrap(), &s.select(0, &perm).unwrap(), Modality::Rgb).unwrap();
    assert_eq!(ps_out.tokens.data(), os.tokens.select(0, &perm).unwrap().data());
}
