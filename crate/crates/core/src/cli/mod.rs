//! The `uncertseg` command line: `generate`, `train`, `predict`,
//! `evaluate`.
//!
//! Every option may also come from a `--config` file of `key=value` lines
//! using the long flag names; flags win over the file. Exit codes are 0 on
//! success, 1 on numeric failure and 2 on usage or input errors.

mod settings;

pub use settings::{Settings, Source};

use crate::bayes::{mc_predict_stack, normalize_uncertainty};
use crate::data::format::{create_dir, read_text, write_text};
use crate::data::{
    export_pgm, load_tensor, save_tensor, write_dataset, CorpusParams, Dataset, Geometry,
    Split, Volume,
};
use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::experiment::{corpus_split_counts, sweep_auc};
use crate::metrics::{evaluate, sweep_csv, VolumeOutcome};
use crate::model::{load_checkpoint, save_checkpoint, Variant};
use crate::postprocess::otsu_threshold;
use crate::rng::RngState;
use crate::train::{train_with, TrainConfig};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

pub const THREADS_ENV: &str = "UNCERTSEG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "uncertseg", version, about = "Photoreceptor-layer segmentation with MC-dropout uncertainty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its split manifest.
    Generate(GenerateArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Monte-Carlo prediction maps for volumes of a dataset.
    Predict(PredictArgs),
    /// Evaluation report for the predictions of a split.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of volumes (default 60).
    #[arg(long)]
    pub volumes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// B-scan size as ROWSxCOLS (default 128x128).
    #[arg(long)]
    pub geometry: Option<String>,
    /// B-scans per volume (default 49).
    #[arg(long)]
    pub bscans: Option<usize>,
    #[arg(long)]
    pub disruption_rate: Option<f64>,
    #[arg(long)]
    pub shadow_rate: Option<f64>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// Band thickness range as MIN,MAX pixels.
    #[arg(long)]
    pub band_thickness: Option<String>,
    /// Label vessel-shadow columns as disruptions (true/false, default false).
    #[arg(long)]
    pub shadows_are_disruptions: Option<bool>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and history.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// unet, u2net or bunet.
    #[arg(long)]
    pub arch: Option<Variant>,
    /// Channels of the first encoder block.
    #[arg(long)]
    pub base_width: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub plateau_window: Option<usize>,
    #[arg(long)]
    pub plateau_min_improvement: Option<f64>,
    #[arg(long)]
    pub lr_factor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise draws per pixel for the BU-Net loss.
    #[arg(long)]
    pub noise_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the maps.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Split to predict (default testA) unless `--volume` is given.
    #[arg(long)]
    pub split: Option<String>,
    /// Predict a single volume id instead of a split.
    #[arg(long)]
    pub volume: Option<String>,
    /// Number of MC samples (default 10).
    #[arg(long = "T")]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for MC sampling (default 1, or $UNCERTSEG_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Split to evaluate (default testA).
    #[arg(long)]
    pub split: Option<String>,
    /// Also write AUC against MC sample count, e.g. 1,2,5,10,20,50.
    /// Needs `--checkpoint`.
    #[arg(long = "sweep-T")]
    pub sweep: Option<String>,
    /// Checkpoint for the sweep.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses arguments, runs the command and returns the process exit code.
/// Messages go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

fn threads_default() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::invalid(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(1),
    }
}

fn write_log(dir: &Path, name: &str, command: &str, settings: &Settings) -> Result<()> {
    let text = format!("command={command}\n{}", settings.log_text());
    eprint!("{text}");
    write_text(&dir.join(name), &text)
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| Error::invalid(format!("expected MIN,MAX, got {s:?}")))?;
    let p = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("expected MIN,MAX, got {s:?}")))
    };
    Ok((p(a)?, p(b)?))
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let volumes = s.get("volumes", a.volumes, 60usize)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let geometry = s.get("geometry", a.geometry.clone(), "128x128".to_string())?;
    let bscans = s.get("bscans", a.bscans, 49usize)?;
    let geometry = Geometry::parse_image(&geometry, bscans)?;
    geometry.validate()?;
    let mut params = CorpusParams::new(volumes, geometry);
    params.disruption_rate = s.get("disruption-rate", a.disruption_rate, params.disruption_rate)?;
    params.shadow_rate = s.get("shadow-rate", a.shadow_rate, params.shadow_rate)?;
    params.noise_level = s.get("noise-level", a.noise_level, params.noise_level)?;
    let default_t = params.volume_params(crate::data::Disease::Dme).band_thickness;
    let t = s.get(
        "band-thickness",
        a.band_thickness.clone(),
        format!("{},{}", default_t.0, default_t.1),
    )?;
    params.band_thickness = Some(parse_pair(&t)?);
    params.shadows_are_disruptions =
        s.get("shadows-are-disruptions", a.shadows_are_disruptions, false)?;
    s.finish()?;

    create_dir(&a.out)?;
    write_log(&a.out, "generate.log", "generate", &s)?;
    let corpus = crate::experiment::build_corpus(&params, seed)?;
    let generator = crate::data::generator_text(&params, seed);
    write_dataset(&a.out, &corpus.volumes, &corpus.manifest, &generator)?;
    let counts = corpus_split_counts(&params);
    eprintln!(
        "wrote {} volumes: train {} val {} testA {} testB {}",
        corpus.volumes.len(),
        counts.train,
        counts.val,
        counts.test_a,
        counts.test_b
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        variant: s.get("arch", a.arch, d.variant)?,
        base_width: s.get("base-width", a.base_width, d.base_width)?,
        lr0: s.get("lr0", a.lr0, d.lr0)?,
        batch_size: s.get("batch-size", a.batch_size, d.batch_size)?,
        weight_decay: s.get("weight-decay", a.weight_decay, d.weight_decay)?,
        max_epochs: s.get("epochs", a.epochs, d.max_epochs)?,
        plateau_window: s.get("plateau-window", a.plateau_window, d.plateau_window)?,
        plateau_min_improvement: s.get(
            "plateau-min-improvement",
            a.plateau_min_improvement,
            d.plateau_min_improvement,
        )?,
        lr_factor: s.get("lr-factor", a.lr_factor, d.lr_factor)?,
        seed: s.get("seed", a.seed, d.seed)?,
        noise_samples: s.get("noise-samples", a.noise_samples, d.noise_samples)?,
    };
    s.finish()?;
    config.validate()?;
    let ds = Dataset::open(&a.data)?;
    let train_set = ds.load_split(Split::Train)?;
    let val_set = ds.load_split(Split::Val)?;
    create_dir(&a.out)?;
    write_log(&a.out, "train.log", "train", &s)?;
    let outcome = train_with(&config, &train_set, &val_set, |e| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  val_dice {:.6}  lr {:e}{}",
            e.epoch,
            e.loss,
            e.val_dice,
            e.lr,
            if e.best { "  *" } else { "" }
        )
    })?;
    save_checkpoint(&outcome.best, a.out.join("best"))?;
    save_checkpoint(&outcome.last, a.out.join("last"))?;
    write_text(&a.out.join("history.csv"), &outcome.history.to_csv())?;
    if let Some(b) = outcome.history.best_epoch() {
        eprintln!(
            "best epoch {} val_dice {:.6}",
            b + 1,
            outcome.history.val_dice[b]
        );
    }
    Ok(())
}

fn select_volumes(ds: &Dataset, split: &str, volume: Option<&str>) -> Result<Vec<Volume>> {
    match volume {
        Some(id) => Ok(vec![ds.load_volume(id)?]),
        None => {
            let split: Split = split.parse()?;
            let vols = ds.load_split(split)?;
            if vols.is_empty() {
                return Err(Error::invalid(format!("split {} is empty", split.name())));
            }
            Ok(vols)
        }
    }
}

pub const PREDICT_LOG: &str = "predict.log";

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let split = s.get("split", a.split.clone(), "testA".to_string())?;
    let volume = s.get_opt("volume", a.volume.clone())?;
    let samples = s.get("T", a.samples, 10usize)?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let threads = s.get("threads", a.threads, threads_default()?)?;
    s.finish()?;
    if samples < 1 {
        return Err(Error::invalid("--T must be at least 1"));
    }
    if threads < 1 {
        return Err(Error::invalid("--threads must be at least 1"));
    }
    let mut net = load_checkpoint(&a.checkpoint)?;
    net.set_mode(Mode::McSample);
    let ds = Dataset::open(&a.data)?;
    let volumes = select_volumes(&ds, &split, volume.as_deref())?;
    create_dir(&a.out)?;
    write_log(&a.out, PREDICT_LOG, "predict", &s)?;
    let rng = RngState::new(seed);
    for v in &volumes {
        // Seeded by volume id so a volume's maps do not depend on which
        // other volumes were predicted alongside it.
        let vr = rng.derive(id_tag(&v.id));
        let (mean, std) = mc_predict_stack(&net, &v.image, samples, &vr, threads)?;
        save_tensor(a.out.join(format!("{}.mean_prob.tnsr", v.id)), &mean)?;
        save_tensor(a.out.join(format!("{}.epistemic_std.tnsr", v.id)), &std)?;
        for b in 0..v.bscans() {
            let prob = mean.index_axis0(b)?;
            let unc = normalize_uncertainty(&std.index_axis0(b)?);
            export_pgm(&unc, a.out.join(format!("{}_b{b:02}_uncertainty.pgm", v.id)))?;
            export_pgm(
                &otsu_threshold(&prob)?.to_tensor(),
                a.out.join(format!("{}_b{b:02}_mask.pgm", v.id)),
            )?;
        }
        eprintln!("predicted {} ({} B-scans, T={samples})", v.id, v.bscans());
    }
    Ok(())
}

/// Stable 64-bit tag of a volume id (FNV-1a).
pub fn id_tag(id: &str) -> u64 {
    id.bytes().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

fn parse_sweep(s: &str) -> Result<Vec<usize>> {
    let ts = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::invalid(format!("bad sample count {t:?} in --sweep-T")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ts.is_empty() {
        return Err(Error::invalid("--sweep-T needs at least one value"));
    }
    Ok(ts)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let split = s.get("split", a.split.clone(), "testA".to_string())?;
    let sweep = s.get_opt("sweep-T", a.sweep.clone())?;
    let checkpoint = s.get_opt("checkpoint", a.checkpoint.as_ref().map(|p| p.display().to_string()))?;
    let seed = s.get("seed", a.seed, 0u64)?;
    s.finish()?;
    let sweep = sweep.as_deref().map(parse_sweep).transpose()?;
    if sweep.is_some() && checkpoint.is_none() {
        return Err(Error::invalid("--sweep-T needs --checkpoint"));
    }
    let ds = Dataset::open(&a.data)?;
    let split: Split = split.parse()?;
    let ids = ds.ids(split).to_vec();
    if ids.is_empty() {
        return Err(Error::invalid(format!("split {} is empty", split.name())));
    }
    let missing: Vec<&String> = ids
        .iter()
        .filter(|id| {
            !a.predictions.join(format!("{id}.mean_prob.tnsr")).is_file()
                || !a.predictions.join(format!("{id}.epistemic_std.tnsr")).is_file()
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "predictions incomplete: {} of {} volumes of {} missing (first: {})",
            missing.len(),
            ids.len(),
            split.name(),
            missing[0]
        )));
    }
    let mut outcomes = Vec::with_capacity(ids.len());
    for id in &ids {
        let v = ds.load_volume(id)?;
        outcomes.push(VolumeOutcome {
            id: id.clone(),
            mean_prob: load_tensor(a.predictions.join(format!("{id}.mean_prob.tnsr")))?,
            epistemic_std: load_tensor(a.predictions.join(format!("{id}.epistemic_std.tnsr")))?,
            truth: v.mask,
        });
    }
    let report = evaluate(&outcomes)?;
    create_dir(&a.out)?;
    write_log(&a.out, "evaluate.log", "evaluate", &s)?;
    let predict_log = a.predictions.join(PREDICT_LOG);
    let mut text = String::new();
    text.push_str(&format!("split={}\n", split.name()));
    if predict_log.is_file() {
        for line in read_text(&predict_log)?.lines() {
            if let Some(t) = line.strip_prefix("T=") {
                text.push_str(&format!("T={}\n", t.split_whitespace().next().unwrap_or(t)));
            }
        }
    }
    text.push_str(&report.to_text());
    write_text(&a.out.join("report.txt"), &text)?;
    write_text(&a.out.join("per_volume.csv"), &report.to_csv())?;
    write_text(&a.out.join("scatter.svg"), &report.to_svg())?;
    eprint!("{text}");

    if let (Some(ts), Some(ck)) = (sweep, checkpoint) {
        let mut net = load_checkpoint(Path::new(&ck))?;
        net.set_mode(Mode::McSample);
        let vols = ds.load_split(split)?;
        let rows = sweep_auc(&net, &vols, &ts, &RngState::new(seed))?;
        write_text(&a.out.join("sweep.csv"), &sweep_csv(&rows))?;
        eprint!("{}", sweep_csv(&rows));
    }
    Ok(())
}
