use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use meltpool_core::dataset::{load_manifest, Split};
use meltpool_core::metrology::{measure as measure_pool, measure_image, render_overlay, MeltTrackMetrics};
use meltpool_core::raster::{load_mask, load_raster};
use meltpool_core::{BinaryMask, Raster};
use meltpool_unet::{load_checkpoint, predict_mask, UNet};
use rayon::prelude::*;

use crate::output::{ensure_dir, num, opt, png_for, write_csv};
use crate::usage;

pub const MEASURE_HEADER: [&str; 13] = [
    "image",
    "width_px",
    "height_px",
    "depth_px",
    "alpha_left_deg",
    "alpha_right_deg",
    "alpha_mean_deg",
    "beta_left_deg",
    "beta_right_deg",
    "beta_mean_deg",
    "baseline_slope",
    "baseline_intercept_px",
    "flags",
];

pub const PHYSICAL_HEADER: [&str; 4] = ["width_um", "height_um", "depth_um", "area_um2"];

#[derive(Debug, Args)]
pub struct MeasureArgs {
    /// Mask PNGs, or micrographs when `--checkpoint` is given.
    pub inputs: Vec<PathBuf>,
    /// Measure manifest entries instead of positional inputs. Entries use
    /// their own masks unless `--checkpoint` is given.
    #[arg(long, conflicts_with = "inputs")]
    pub manifest: Option<PathBuf>,
    /// Restrict `--manifest` to one split.
    #[arg(long, requires = "manifest")]
    pub split: Option<Split>,
    /// Segment images with this checkpoint before measuring.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Adds micrometre columns. Overrides per-entry manifest scales.
    #[arg(long)]
    pub scale_um_per_px: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for annotated overlays (baseline red, outline cyan).
    #[arg(long)]
    pub overlay_dir: Option<PathBuf>,
}

struct Job {
    label: String,
    image: Option<PathBuf>,
    mask: Option<PathBuf>,
    scale: Option<f64>,
}

enum Outcome {
    Measured(Box<MeltTrackMetrics>),
    Failed(String),
}

fn run_job(job: &Job, model: Option<&UNet<f32>>, overlay_dir: Option<&PathBuf>) -> anyhow::Result<MeltTrackMetrics> {
    let image = job.image.as_ref().map(load_raster).transpose()?;
    let pool = match (model, &image, &job.mask) {
        (Some(m), Some(img), _) => predict_mask(m, img).context("predict")?,
        (None, _, Some(p)) => load_mask(p)?,
        _ => bail!("nothing to measure"),
    };
    let metrics = match &image {
        Some(img) => measure_image(img, &pool, job.scale),
        None => measure_pool(&pool, None, job.scale),
    }
    .context("measure")?;
    if let Some(dir) = overlay_dir {
        let base = image.unwrap_or_else(|| mask_as_raster(&pool));
        let overlay = render_overlay(&base, &pool, &metrics)?;
        overlay.save_png(png_for(dir, job.image.as_ref().or(job.mask.as_ref()).expect("one path")))?;
    }
    Ok(metrics)
}

fn mask_as_raster(m: &BinaryMask) -> Raster {
    Raster::from_fn_gray(m.width(), m.height(), |x, y| if m.get(x, y) { 0.6 } else { 0.1 }).expect("mask dimensions")
}

fn row(label: &str, m: &MeltTrackMetrics, physical: bool) -> Vec<String> {
    let mut r = vec![
        label.to_string(),
        num(m.width_px),
        num(m.height_px),
        num(m.depth_px),
        opt(m.alpha_left),
        opt(m.alpha_right),
        opt(m.alpha_mean),
        opt(m.beta_left),
        opt(m.beta_right),
        opt(m.beta_mean),
        num(m.baseline.slope),
        num(m.baseline.intercept),
        m.flags_label(),
    ];
    if physical {
        match &m.physical {
            Some(p) => r.extend([num(p.width_um), num(p.height_um), num(p.depth_um), num(p.area_um2)]),
            None => r.extend(std::iter::repeat_n(String::new(), 4)),
        }
    }
    r
}

/// Items that fail get a row with empty numbers and `error: ...` in the
/// flags column; the command only fails when nothing could be measured.
pub fn measure(a: MeasureArgs) -> anyhow::Result<()> {
    if let Some(s) = a.scale_um_per_px {
        if !(s > 0.0 && s.is_finite()) {
            return Err(usage(anyhow::anyhow!("--scale-um-per-px must be positive, got {s}")));
        }
    }
    let jobs: Vec<Job> = match &a.manifest {
        Some(path) => {
            let manifest = load_manifest(path)?;
            manifest
                .entries
                .iter()
                .filter(|e| a.split.is_none_or(|s| e.split == s))
                .filter(|e| a.checkpoint.is_some() || e.mask.is_some())
                .map(|e| Job {
                    label: e.image.display().to_string(),
                    image: Some(manifest.resolve(&e.image)),
                    mask: e.mask.as_ref().map(|m| manifest.resolve(m)),
                    scale: a.scale_um_per_px.or(e.scale),
                })
                .collect()
        }
        None => a
            .inputs
            .iter()
            .map(|p| Job {
                label: p.display().to_string(),
                image: a.checkpoint.is_some().then(|| p.clone()),
                mask: a.checkpoint.is_none().then(|| p.clone()),
                scale: a.scale_um_per_px,
            })
            .collect(),
    };
    if jobs.is_empty() {
        return Err(usage(anyhow::anyhow!("no inputs to measure")));
    }
    let model = a.checkpoint.as_ref().map(load_checkpoint).transpose()?.map(|(m, _)| m);
    if let Some(dir) = &a.overlay_dir {
        ensure_dir(dir)?;
    }

    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|job| match run_job(job, model.as_ref(), a.overlay_dir.as_ref()) {
            Ok(m) => Outcome::Measured(Box::new(m)),
            Err(e) => {
                log::warn!("{}: {e:#}", job.label);
                Outcome::Failed(format!("{e:#}"))
            }
        })
        .collect();

    let physical = jobs.iter().any(|j| j.scale.is_some());
    let mut header: Vec<&str> = MEASURE_HEADER.to_vec();
    if physical {
        header.extend(PHYSICAL_HEADER);
    }
    let mut failed = 0;
    let rows: Vec<Vec<String>> = jobs
        .iter()
        .zip(&outcomes)
        .map(|(job, o)| match o {
            Outcome::Measured(m) => row(&job.label, m, physical),
            Outcome::Failed(msg) => {
                failed += 1;
                let mut r = vec![String::new(); header.len()];
                r[0] = job.label.clone();
                r[12] = format!("error: {msg}");
                r
            }
        })
        .collect();
    write_csv(&a.out, &header, &rows)?;
    if failed == jobs.len() {
        bail!("no item could be measured");
    }
    println!("measured {} of {} items -> {}", jobs.len() - failed, jobs.len(), a.out.display());
    Ok(())
}
