use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use meltpool_core::dataset::{load_manifest, load_split, Manifest, Split};
use meltpool_core::metrics::{mean_scores, score_pair};
use meltpool_core::raster::{load_raster, save_mask};
use meltpool_unet::{
    grid_search, load_checkpoint, predict_mask, save_checkpoint, CheckpointMeta, Dataset, EpochStats, GridSpec,
    TrainConfig, UNet, UNetConfig,
};
use rayon::prelude::*;

use crate::output::{ensure_dir, num, png_for, write_csv};
use crate::{usage, ConfigArg, FileConfig};

/// Network shape flags shared by `train` and `grid`.
#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Network input side; images are resized to it.
    #[arg(long)]
    pub input_side: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
}

impl NetArgs {
    fn apply(&self, unet: &mut UNetConfig) -> anyhow::Result<()> {
        if let Some(v) = self.input_side {
            unet.input_side = v;
        }
        if let Some(v) = self.base_channels {
            unet.base_channels = v;
        }
        unet.validate().map_err(usage)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Best-validation checkpoint. Final weights go to `<out>.final`, the
    /// per-epoch history to `<out>.history.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn final_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".final");
    PathBuf::from(s)
}

pub fn history_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

pub const HISTORY_HEADER: [&str; 7] = [
    "epoch",
    "train_loss",
    "train_accuracy",
    "val_loss",
    "val_accuracy",
    "val_f1",
    "val_iou",
];

fn train_config(cfg: &FileConfig, a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut t = cfg.train.clone();
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    t.validate().map_err(usage)?;
    Ok(t)
}

fn datasets(manifest: &Manifest, side: usize) -> anyhow::Result<(Dataset, Dataset)> {
    let pairs = |split| -> anyhow::Result<Vec<_>> {
        Ok(load_split(manifest, split)?
            .into_iter()
            .map(|l| (l.image, l.mask))
            .collect())
    };
    let train = Dataset::from_pairs(&pairs(Split::Train)?, side)?;
    let val = Dataset::from_pairs(&pairs(Split::Val)?, side)?;
    if train.is_empty() {
        bail!("manifest has no annotated train entries");
    }
    Ok((train, val))
}

fn epoch_meta(unet: &UNetConfig, t: &TrainConfig, e: Option<&EpochStats>) -> CheckpointMeta {
    CheckpointMeta {
        unet: unet.clone(),
        train: Some(t.clone()),
        epoch: e.map(|e| e.epoch),
        val_accuracy: e.map(|e| e.val_accuracy),
        val_f1: e.map(|e| e.val_f1),
        val_iou: e.map(|e| e.val_iou),
    }
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.config.load()?;
    let mut unet = cfg.unet.clone();
    a.net.apply(&mut unet)?;
    let tc = train_config(&cfg, &a)?;
    let manifest = load_manifest(&a.manifest)?;
    let (train_set, val) = datasets(&manifest, unet.input_side)?;
    log::info!(
        "training on {} pairs, validating on {}, side {}",
        train_set.len(),
        val.len(),
        unet.input_side
    );

    let model = UNet::new(unet.clone(), tc.seed)?;
    let out = meltpool_unet::train(model, &train_set, &val, &tc, |e| {
        println!(
            "epoch {:>3}  loss {:.4}  acc {:.4}  val loss {:.4}  val acc {:.4}  val f1 {:.4}  val iou {:.4}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.val_f1, e.val_iou
        );
    })?;

    let best = out.best_epoch.and_then(|i| out.history.epochs.get(i));
    save_checkpoint(&a.out, &out.best, &epoch_meta(&unet, &tc, best))?;
    save_checkpoint(final_path(&a.out), &out.model, &epoch_meta(&unet, &tc, out.history.epochs.last()))?;
    let rows: Vec<Vec<String>> = out
        .history
        .epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                num(e.train_loss),
                num(e.train_accuracy),
                num(e.val_loss),
                num(e.val_accuracy),
                num(e.val_f1),
                num(e.val_iou),
            ]
        })
        .collect();
    write_csv(&history_path(&a.out), &HISTORY_HEADER, &rows)?;
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Output CSV, one row per cell sorted by val F1.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub const GRID_HEADER: [&str; 8] = [
    "batch_size",
    "learning_rate",
    "train_accuracy",
    "val_accuracy",
    "val_f1",
    "val_iou",
    "diverged",
    "error",
];

pub fn grid(a: GridArgs) -> anyhow::Result<()> {
    let cfg = a.config.load()?;
    let mut unet = cfg.unet.clone();
    a.net.apply(&mut unet)?;
    let mut spec = GridSpec::new(unet.clone(), a.epochs, a.seed);
    spec.init_gains = cfg.grid.init_gains.clone();
    let manifest = load_manifest(&a.manifest)?;
    let (train_set, val) = datasets(&manifest, unet.input_side)?;

    let rows = grid_search(&train_set, &val, &spec, |r| {
        log::info!(
            "cell batch {} lr {:e}: val f1 {:.4}{}",
            r.batch_size,
            r.learning_rate,
            r.val_f1,
            if r.diverged { " (diverged)" } else { "" }
        );
    });
    println!("batch  lr      train_acc  val_acc  val_f1  val_iou");
    for r in &rows {
        println!(
            "{:>5}  {:<6e}  {:.4}     {:.4}   {:.4}  {:.4}{}",
            r.batch_size,
            r.learning_rate,
            r.train_accuracy,
            r.val_accuracy,
            r.val_f1,
            r.val_iou,
            if r.diverged { "  diverged" } else { "" }
        );
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.batch_size.to_string(),
                format!("{:e}", r.learning_rate),
                num(r.train_accuracy),
                num(r.val_accuracy),
                num(r.val_f1),
                num(r.val_iou),
                r.diverged.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&a.out, &GRID_HEADER, &table)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Per-image scores followed by a `mean` row.
    #[arg(long)]
    pub out: PathBuf,
}

pub const EVAL_HEADER: [&str; 4] = ["image", "accuracy", "f1", "iou"];

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let items = load_split(&manifest, a.split)?;
    if items.is_empty() {
        bail!("split {} has no annotated entries", a.split);
    }
    let scores = items
        .par_iter()
        .map(|l| -> anyhow::Result<_> {
            let pred = predict_mask(&model, &l.image)?;
            Ok(score_pair(&pred, &l.mask)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut rows: Vec<Vec<String>> = items
        .iter()
        .zip(&scores)
        .map(|(l, s)| vec![l.entry.image.display().to_string(), num(s.accuracy), num(s.f1), num(s.iou)])
        .collect();
    let mean = mean_scores(&scores).expect("non-empty");
    rows.push(vec!["mean".into(), num(mean.accuracy), num(mean.f1), num(mean.iou)]);
    write_csv(&a.out, &EVAL_HEADER, &rows)?;
    println!(
        "{} {} images: accuracy {:.4} f1 {:.4} iou {:.4}",
        a.split,
        scores.len(),
        mean.accuracy,
        mean.f1,
        mean.iou
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory for `<image stem>.png` masks.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

pub fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    ensure_dir(&a.out)?;
    a.images.par_iter().try_for_each(|p| -> anyhow::Result<()> {
        let image = load_raster(p)?;
        let mask = predict_mask(&model, &image).with_context(|| format!("predicting {}", p.display()))?;
        save_mask(&mask, png_for(&a.out, p))?;
        Ok(())
    })?;
    println!("wrote {} masks to {}", a.images.len(), a.out.display());
    Ok(())
}
