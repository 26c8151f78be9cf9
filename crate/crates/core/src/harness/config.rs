//! Line-oriented `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::event::ScenarioSampler;
use crate::model::encoder::EncoderConfig;
use crate::model::head::LossConfig;
use crate::model::mgf::{Directions, MgfConfig};
use crate::model::pooler::PoolerConfig;
use crate::model::tracker::{EventInput, ModelConfig};
use crate::nn::AttentionScale;

/// Every accepted key with its default. An empty default means "derived".
pub const KEYS: &[(&str, &str)] = &[
    ("model.d_model", "192"),
    ("encoder.layers", "4"),
    ("encoder.heads", "3"),
    ("encoder.mlp_ratio", "4"),
    ("encoder.patch_size", "16"),
    ("pooler.enabled", "true"),
    ("pooler.input", "counts"),
    ("pooler.in_channels", ""),
    ("pooler.stage1_channels", "48"),
    ("pooler.stage2_channels", "96"),
    ("pooler.groups", "4"),
    ("pooler.kernels", "3,5,7,9"),
    ("msp.cascade_from_group", "3"),
    ("mgf.downsample", "4"),
    ("mgf.scale_mode", "sqrt_dk"),
    ("mgf.directions", "both"),
    ("mgf.heads", "3"),
    ("mgf.mlp_ratio", "4"),
    ("mgf.depth", "1"),
    ("rm.enabled", "true"),
    ("rm.layers", "4"),
    ("rm.heads", "3"),
    ("head.lambda", "5"),
    ("head.sigma", "2"),
    ("train.epochs", "60"),
    ("train.lr", "1e-4"),
    ("train.batch", "8"),
    ("train.weight_decay", "1e-4"),
    ("train.seed", "0"),
    ("train.max_steps", "0"),
    ("train.jitter_shift", "0.25"),
    ("train.jitter_scale", "0.1"),
    ("train.out", "out"),
    ("data.dir", "data"),
    ("data.sequences", "20"),
    ("data.frames", "24"),
    ("data.width", "346"),
    ("data.height", "230"),
    ("data.threshold", "0.15"),
    ("data.seed", "0"),
    ("data.template_size", "128"),
    ("data.search_size", "256"),
    ("eval.dir", ""),
    ("eval.out", ""),
    ("eval.sequences", "0"),
];

/// Raw key/value pairs after defaults and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
    /// Config file the values came from, for error messages.
    source: PathBuf,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            source: PathBuf::from("<defaults>"),
        }
    }
}

impl RawConfig {
    pub fn parse_str(text: &str, source: &Path) -> Result<Self> {
        let mut raw = RawConfig {
            source: source.to_path_buf(),
            ..Default::default()
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, i + 1, format!("expected `key = value`, found {line:?}")))?;
            raw.set(k.trim(), v.trim())
                .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn num<N: std::str::FromStr>(&self, key: &str) -> Result<N> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key} = {v:?} is not a valid number")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            v => Err(Error::Config(format!("{key} = {v:?} is not a boolean"))),
        }
    }

    fn list(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key} = {:?} is not a list of integers", self.get(key))))
            })
            .collect()
    }

    /// Canonical text form; parsing it back gives the same configuration.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Zero means no limit.
    pub max_steps: usize,
    /// Search-centre shift as a fraction of the box side.
    pub jitter_shift: f64,
    /// Log-uniform search-scale jitter half width.
    pub jitter_scale: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub sequences: usize,
    pub threshold: f64,
    pub seed: u64,
    pub sampler: ScenarioSampler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub dir: PathBuf,
    pub out: PathBuf,
    /// Zero means all sequences.
    pub sequences: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub raw: RawConfig,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        Self::from_raw(raw)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let r = &raw;
        let d: usize = r.num("model.d_model")?;
        let event_input = match r.get("pooler.input") {
            "counts" => EventInput::Counts,
            "image" => EventInput::Image,
            v => return Err(Error::Config(format!("pooler.input = {v:?}, expected counts or image"))),
        };
        let in_channels = match r.get("pooler.in_channels") {
            "" => match event_input {
                EventInput::Counts => 2,
                EventInput::Image => 3,
            },
            _ => r.num("pooler.in_channels")?,
        };
        let kernels = r.list("pooler.kernels")?;
        let template_size = r.num("data.template_size")?;
        let search_size = r.num("data.search_size")?;
        let model = ModelConfig {
            encoder: EncoderConfig {
                patch_size: r.num("encoder.patch_size")?,
                d_model: d,
                layers: r.num("encoder.layers")?,
                heads: r.num("encoder.heads")?,
                mlp_ratio: r.num("encoder.mlp_ratio")?,
                in_channels: 3,
                template_size,
                search_size,
            },
            pooler: PoolerConfig {
                in_channels,
                stage_channels: [r.num("pooler.stage1_channels")?, r.num("pooler.stage2_channels")?, d],
                groups: r.num("pooler.groups")?,
                kernels,
                cascade_from_group: r.num("msp.cascade_from_group")?,
            },
            pooler_enabled: r.flag("pooler.enabled")?,
            event_input,
            mgf: MgfConfig {
                downsample: r.num("mgf.downsample")?,
                scale: match r.get("mgf.scale_mode") {
                    "sqrt_dk" => AttentionScale::SqrtDk,
                    "paper_dk" => AttentionScale::Dk,
                    v => return Err(Error::Config(format!("mgf.scale_mode = {v:?}, expected sqrt_dk or paper_dk"))),
                },
                heads: r.num("mgf.heads")?,
                mlp_ratio: r.num("mgf.mlp_ratio")?,
                directions: Directions::parse(r.get("mgf.directions")).ok_or_else(|| {
                    Error::Config(format!(
                        "mgf.directions = {:?}, expected both, only_i, only_ii or none",
                        r.get("mgf.directions")
                    ))
                })?,
                depth: r.num("mgf.depth")?,
            },
            rm_enabled: r.flag("rm.enabled")?,
            rm_layers: r.num("rm.layers")?,
            rm_heads: r.num("rm.heads")?,
            loss: LossConfig {
                lambda: r.num("head.lambda")?,
                sigma: r.num("head.sigma")?,
            },
        };
        model.validate()?;
        if model.mgf.downsample == 0 {
            return Err(Error::Config("mgf.downsample must be at least 1".into()));
        }
        let train = TrainConfig {
            epochs: r.num("train.epochs")?,
            lr: r.num("train.lr")?,
            batch: r.num("train.batch")?,
            weight_decay: r.num("train.weight_decay")?,
            seed: r.num("train.seed")?,
            max_steps: r.num("train.max_steps")?,
            jitter_shift: r.num("train.jitter_shift")?,
            jitter_scale: r.num("train.jitter_scale")?,
            out: PathBuf::from(r.get("train.out")),
        };
        if train.batch == 0 || !(train.lr > 0.0) || train.weight_decay < 0.0 {
            return Err(Error::Config("train.batch and train.lr must be positive, weight decay non-negative".into()));
        }
        let data_dir = PathBuf::from(r.get("data.dir"));
        let data = DataConfig {
            sequences: r.num("data.sequences")?,
            threshold: r.num("data.threshold")?,
            seed: r.num("data.seed")?,
            sampler: ScenarioSampler {
                width: r.num("data.width")?,
                height: r.num("data.height")?,
                frames: r.num("data.frames")?,
                ..Default::default()
            },
            dir: data_dir.clone(),
        };
        if !(data.threshold > 0.0) {
            return Err(Error::Config(format!("data.threshold = {} must be positive", data.threshold)));
        }
        let eval = EvalConfig {
            dir: match r.get("eval.dir") {
                "" => data_dir,
                v => PathBuf::from(v),
            },
            out: match r.get("eval.out") {
                "" => train.out.join("eval"),
                v => PathBuf::from(v),
            },
            sequences: r.num("eval.sequences")?,
        };
        Ok(RunConfig {
            model,
            train,
            data,
            eval,
            raw,
        })
    }

    /// Names the active ablation switches.
    pub fn banner(&self) -> String {
        let m = &self.model;
        format!(
            "pooler={} mgf.directions={} mgf.downsample={} rm.enabled={} | desk scale: batch {}, d_model {}, \
             random init, synthetic data; not a reproduction of published numbers",
            if m.pooler_enabled { "on" } else { "off" },
            self.raw.get("mgf.directions"),
            m.mgf.downsample,
            m.rm_enabled,
            self.train.batch,
            m.d_model(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let cfg = RunConfig::from_raw(RawConfig::default()).unwrap();
        assert_eq!(cfg.train.epochs, 60);
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.model.pooler.stage_channels, [48, 96, 192]);
        assert_eq!(cfg.model.pooler.in_channels, 2);
        assert_eq!(cfg.eval.out, PathBuf::from("out/eval"));
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = RawConfig::parse_str("# c\nmodel.d_model = 96\nmodel.depth = 3\n", Path::new("a.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn text_form_round_trips() {
        let mut raw = RawConfig::parse_str("mgf.directions = only_ii # ablation\n", Path::new("a.cfg")).unwrap();
        raw.apply_override("pooler.enabled=false").unwrap();
        let again = RawConfig::parse_str(&raw.to_text(), Path::new("a.cfg")).unwrap();
        assert_eq!(again.values, raw.values);
        let cfg = RunConfig::from_raw(raw).unwrap();
        assert_eq!(cfg.model.mgf.directions, Directions::OnlyII);
        assert!(!cfg.model.pooler_enabled);
    }

    #[test]
    fn bad_values() {
        for kv in ["mgf.scale_mode=dk", "rm.enabled=maybe", "model.d_model=100", "pooler.kernels=3,5,x,9"] {
            let mut raw = RawConfig::default();
            raw.apply_override(kv).unwrap();
            assert!(RunConfig::from_raw(raw).is_err(), "{kv}");
        }
    }
}
