use std::path::Path;

use rgbe_track::event::{read_dataset, synthesize, write_dataset, Corpus};
use rgbe_track::harness::cli::main_with_args;
use rgbe_track::harness::config::{RawConfig, RunConfig, KEYS};
use rgbe_track::harness::viz::{quantize, FLAT_GREY};
use rgbe_track::harness::{checkpoint, eval, train, viz};
use rgbe_track::model::tracker::Tracker;
use rgbe_track::Error;

const TINY: &str = "\
model.d_model = 24
encoder.layers = 1
encoder.heads = 3
encoder.mlp_ratio = 2
pooler.stage1_channels = 8
pooler.stage2_channels = 16
mgf.mlp_ratio = 2
rm.layers = 1
train.batch = 2
train.max_steps = 3
data.sequences = 2
data.frames = 4
data.width = 160
data.height = 120
data.template_size = 64
data.search_size = 128
";

fn tiny(overrides: &[&str]) -> RunConfig {
    let mut raw = RawConfig::parse_str(TINY, Path::new("tiny.cfg")).unwrap();
    for o in overrides {
        raw.apply_override(o).unwrap();
    }
    RunConfig::from_raw(raw).unwrap()
}

fn tiny_corpus(cfg: &RunConfig) -> Corpus {
    synthesize(&cfg.data.sampler, cfg.data.seed, cfg.data.sequences, cfg.data.threshold).unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn config_parses_and_rejects_unknown_keys() {
    let cfg = tiny(&["mgf.directions=only_ii", "pooler.enabled=off"]);
    assert_eq!(cfg.model.d_model(), 24);
    assert!(!cfg.model.pooler_enabled);
    assert_eq!(RawConfig::default().get("mgf.downsample"), "4");
    assert_eq!(KEYS.len(), RawConfig::default().to_text().lines().count());

    let err = RawConfig::parse_str("model.d_model = 24\nmodel.width = 3\n", Path::new("bad.cfg")).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    assert!(err.to_string().contains("bad.cfg"));
    let err = RawConfig::parse_str("no equals sign\n", Path::new("bad.cfg")).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 1, .. }));

    let raw = RawConfig::parse_str(TINY, Path::new("tiny.cfg")).unwrap();
    let back = RawConfig::parse_str(&raw.to_text(), Path::new("tiny.cfg")).unwrap();
    assert_eq!(back, raw);

    for bad in ["mgf.downsample=0", "mgf.scale_mode=dk", "mgf.directions=left", "train.lr=0"] {
        let mut raw = RawConfig::parse_str(TINY, Path::new("tiny.cfg")).unwrap();
        raw.apply_override(bad).unwrap();
        assert!(matches!(RunConfig::from_raw(raw), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn zero_epochs_writes_the_initialisation() {
    let cfg = tiny(&["train.epochs=0"]);
    let corpus = tiny_corpus(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let summary = train::train(&cfg, &corpus, dir.path(), &mut std::io::sink()).unwrap();
    assert_eq!(summary.steps, 0);
    let (_, ps) = Tracker::new::<f32>(&cfg.model, cfg.train.seed).unwrap();
    let init = dir.path().join("init");
    checkpoint::save(&init, &ps).unwrap();
    assert_eq!(read_dir_bytes(&dir.path().join(train::CHECKPOINT_DIR)), read_dir_bytes(&init));
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let cfg = tiny(&[]);
    let corpus = tiny_corpus(&cfg);
    let dir = tempfile::tempdir().unwrap();
    train::train(&cfg, &corpus, dir.path(), &mut std::io::sink()).unwrap();
    let ckpt = dir.path().join(train::CHECKPOINT_DIR);
    let (_, ps) = eval::load_model(&cfg, &ckpt).unwrap();
    let again = dir.path().join("again");
    checkpoint::save(&again, &ps).unwrap();
    assert_eq!(read_dir_bytes(&ckpt), read_dir_bytes(&again));

    let other = tiny(&["model.d_model=36"]);
    assert!(matches!(eval::load_model(&other, &ckpt), Err(Error::Parse { .. })));
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let cfg = tiny(&[]);
    let corpus = tiny_corpus(&cfg);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = train::train(&cfg, &corpus, a.path(), &mut std::io::sink()).unwrap();
    let sb = train::train(&cfg, &corpus, b.path(), &mut std::io::sink()).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(sa.steps, 3);
    let ck = |d: &Path| read_dir_bytes(&d.join(train::CHECKPOINT_DIR));
    assert_eq!(ck(a.path()), ck(b.path()));
    let (m, ps) = eval::load_model(&cfg, &a.path().join(train::CHECKPOINT_DIR)).unwrap();
    let ra = eval::evaluate_corpus(&m, &ps, &corpus).unwrap();
    let rb = eval::evaluate_corpus(&m, &ps, &corpus).unwrap();
    assert_eq!(ra.to_json().unwrap(), rb.to_json().unwrap());
}

#[test]
fn viz_writes_every_pooler_map() {
    let cfg = tiny(&[]);
    let corpus = tiny_corpus(&cfg);
    let (model, ps) = Tracker::new::<f32>(&cfg.model, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = viz::viz_features(&model, &ps, &corpus.sequences[0], 1, dir.path()).unwrap();
    let names: Vec<String> = written.iter().map(|p| p.file_stem().unwrap().to_string_lossy().into_owned()).collect();
    let groups = names.iter().filter(|n| n.contains("_msp_group")).count();
    assert_eq!(groups, 4);
    assert!(names.iter().any(|n| n == "pooler_stage2_aggregation"));
    assert!(names.iter().any(|n| n == "score_fused"));
    for p in &written {
        assert!(std::fs::read(p).unwrap().starts_with(b"P6\n"));
    }
    assert!(viz::viz_features(&model, &ps, &corpus.sequences[0], 0, dir.path()).is_err());
}

#[test]
fn quantize_is_min_max_rounding() {
    let v = [0.3, -1.0, 2.5, 0.75, 2.5];
    let want: Vec<u8> = v.iter().map(|x| ((x + 1.0) / 3.5 * 255.0_f64).round() as u8).collect();
    assert_eq!(quantize(&v), want);
    assert_eq!(quantize(&[4.2; 6]), vec![FLAT_GREY; 6]);
    assert_eq!(FLAT_GREY, 128);
}

#[test]
fn pooler_off_routes_events_through_the_rgb_encoder() {
    let on = tiny(&[]);
    let off = tiny(&["pooler.enabled=false"]);
    let (m_on, ps_on) = Tracker::new::<f32>(&on.model, 0).unwrap();
    let (m_off, ps_off) = Tracker::new::<f32>(&off.model, 0).unwrap();
    assert!(m_on.pooler.is_some() && m_off.pooler.is_none());
    assert!(ps_on.count("pooler.") > 0);
    assert_eq!(ps_off.count("pooler."), 0);
    assert_eq!(ps_off.count("rgb."), ps_on.count("rgb."));
    let corpus = tiny_corpus(&off);
    let dir = tempfile::tempdir().unwrap();
    let s = train::train(&off, &corpus, dir.path(), &mut std::io::sink()).unwrap();
    assert!(s.losses.iter().all(|l| l.is_finite()));
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["rgbe-track"];
    full.extend_from_slice(args);
    let code = main_with_args(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn cli_exit_codes() {
    let (code, _, err) = run_cli(&["train", "--config", "missing.cfg"]);
    assert_eq!(code, 2);
    assert!(err.contains("missing.cfg"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.cfg");
    std::fs::write(&cfg_path, TINY).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let (code, _, err) = run_cli(&["eval", "--config", cfg]);
    assert_eq!(code, 1);
    assert!(err.contains("--checkpoint") && err.contains("Usage"), "{err}");

    let (code, _, err) = run_cli(&["train", "--config", cfg, "--bogus"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");

    std::fs::write(dir.path().join("bad.cfg"), "model.nope = 1\n").unwrap();
    let (code, _, err) = run_cli(&["train", "--config", dir.path().join("bad.cfg").to_str().unwrap()]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn cli_synth_train_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg_path,
        format!("{TINY}data.dir = {}\ntrain.out = {}\n", data.display(), out.display()),
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();
    assert_eq!(run_cli(&["synth-data", "--config", cfg]).0, 0);
    let corpus = read_dataset(&data).unwrap();
    assert_eq!(corpus.sequences.len(), 2);
    let (code, log, err) = run_cli(&["train", "--config", cfg]);
    assert_eq!(code, 0, "{err}");
    assert!(log.contains("3 steps"), "{log}");
    let ckpt = out.join(train::CHECKPOINT_DIR);
    let (code, log, err) = run_cli(&["eval", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(log.contains("all"));
    assert!(out.join("eval").join("report.json").is_file());
    let viz_dir = dir.path().join("viz");
    let args = ["viz-features", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", viz_dir.to_str().unwrap()];
    assert_eq!(run_cli(&args).0, 0);

    let copy = dir.path().join("copy");
    write_dataset(&copy, &corpus).unwrap();
    assert_eq!(read_dataset(&copy).unwrap(), corpus);
}
