use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::{RawConfig, RunConfig};
use super::{eval, gradsuite, train, viz};
use crate::error::{Error, Result};
use crate::event::{read_dataset, synthesize, write_dataset};

#[derive(Debug, Parser)]
#[command(name = "rgbe-track", version, about = "RGB + event single object tracking on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Run configuration (`section.key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic sequences and their event frames to a dataset directory.
    SynthData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train on the dataset in `data.dir`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory (defaults to `train.out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Track every sequence of `eval.dir` and write the report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump pooler feature maps and score maps as PPM images.
    VizFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        #[arg(long, default_value_t = 1)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    RunConfig::load(&common.config, &common.overrides)
}

fn synth(
    config: Option<&Path>,
    overrides: &[String],
    out: Option<PathBuf>,
    sequences: Option<usize>,
    seed: Option<u64>,
    threshold: Option<f64>,
    log: &mut dyn Write,
) -> Result<()> {
    let mut raw = match config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    for o in overrides {
        raw.apply_override(o)?;
    }
    let mut cfg = RunConfig::from_raw(raw)?;
    let dir = out.unwrap_or(cfg.data.dir.clone());
    cfg.data.sequences = sequences.unwrap_or(cfg.data.sequences);
    cfg.data.seed = seed.unwrap_or(cfg.data.seed);
    cfg.data.threshold = threshold.unwrap_or(cfg.data.threshold);
    if !(cfg.data.threshold > 0.0) {
        return Err(Error::Config(format!("threshold {} must be positive", cfg.data.threshold)));
    }
    let corpus = synthesize(&cfg.data.sampler, cfg.data.seed, cfg.data.sequences, cfg.data.threshold)?;
    write_dataset(&dir, &corpus)?;
    let _ = writeln!(log, "wrote {} sequences to {}", corpus.sequences.len(), dir.display());
    Ok(())
}

pub fn run(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::SynthData {
            config,
            overrides,
            out,
            sequences,
            seed,
            threshold,
        } => synth(config.as_deref(), &overrides, out, sequences, seed, threshold, log),
        Command::Train { common, out } => {
            let cfg = load(&common)?;
            let corpus = read_dataset(&cfg.data.dir)?;
            let out = out.unwrap_or(cfg.train.out.clone());
            let summary = train::train(&cfg, &corpus, &out, log)?;
            let _ = writeln!(
                log,
                "{} steps, first loss {:?}, last loss {:?}; checkpoint in {}",
                summary.steps,
                summary.initial(),
                summary.last(),
                out.join(train::CHECKPOINT_DIR).display()
            );
            Ok(())
        }
        Command::Eval { common, checkpoint, out } => {
            let cfg = load(&common)?;
            let _ = writeln!(log, "{}", cfg.banner());
            let report = eval::evaluate(&cfg, &checkpoint)?;
            let out = out.unwrap_or(cfg.eval.out.clone());
            report.write(&out)?;
            let _ = write!(log, "{}", report.table());
            Ok(())
        }
        Command::VizFeatures {
            common,
            checkpoint,
            sequence,
            frame,
            out,
        } => {
            let cfg = load(&common)?;
            let (model, ps) = eval::load_model(&cfg, &checkpoint)?;
            let corpus = read_dataset(&cfg.data.dir)?;
            let seq = corpus.sequences.get(sequence).ok_or_else(|| {
                Error::Contract(format!("sequence {sequence} not in a corpus of {}", corpus.sequences.len()))
            })?;
            for p in viz::viz_features(&model, &ps, seq, frame, &out)? {
                let _ = writeln!(log, "{}", p.display());
            }
            Ok(())
        }
        Command::GradCheck { config } => {
            if let Some(p) = config {
                RunConfig::load(&p, &[])?;
            }
            let cases = gradsuite::run()?;
            let mut failed = 0;
            for c in &cases {
                let verdict = if c.passed() { "ok  " } else { "FAIL" };
                failed += usize::from(!c.passed());
                let measure = match c.measure {
                    gradsuite::Measure::Relative => "max rel err",
                    gradsuite::Measure::Vanishing => "max |grad| ",
                };
                let _ = writeln!(
                    log,
                    "{verdict} {:<24} {measure} {:.3e} (tol {:.0e}, {} coords; worst at {}: {:.6e} vs {:.6e})",
                    c.name, c.error, c.tolerance, c.coords, c.at, c.worst.0, c.worst.1
                );
            }
            if failed > 0 {
                return Err(Error::Numeric(format!("{failed} of {} gradient checks failed", cases.len())));
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let help = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = if help {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return if help { 0 } else { 1 };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
