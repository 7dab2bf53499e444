use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use meltpool_core::augment::expand_dataset;
use meltpool_core::dataset::{load_manifest, load_split, save_manifest, synth_generate, ManifestEntry, Split};
use meltpool_core::raster::save_mask;
use rayon::prelude::*;

use crate::output::{ensure_dir, num, opt, write_csv};
use crate::{usage, ConfigArg};

/// Column order of the ground-truth CSV written by `synth`.
pub const TRUTH_HEADER: [&str; 12] = [
    "image",
    "width_px",
    "contact_width_px",
    "height_px",
    "depth_px",
    "alpha_deg",
    "beta_deg",
    "radius_px",
    "offset_px",
    "bowl_depth_px",
    "center_x_px",
    "baseline_px",
];

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives images/, masks/, truth.csv and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    /// Image side in pixels.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub texture: Option<f64>,
    /// Items placed in the val split, after the train items.
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    /// Items placed in the test split, after the val items.
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut spec = a.config.load()?.synth;
    if let Some(v) = a.count {
        spec.count = v;
    }
    if let Some(v) = a.side {
        spec.side = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if let Some(v) = a.texture {
        spec.texture = v;
    }
    spec.validate().map_err(usage)?;
    if a.val + a.test > spec.count {
        return Err(usage(anyhow::anyhow!(
            "--val {} plus --test {} exceeds --count {}",
            a.val,
            a.test,
            spec.count
        )));
    }

    let items = synth_generate(&spec)?;
    ensure_dir(&a.out.join("images"))?;
    ensure_dir(&a.out.join("masks"))?;
    let train = spec.count - a.val - a.test;
    let entries: Vec<ManifestEntry> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| -> anyhow::Result<ManifestEntry> {
            let image = PathBuf::from(format!("images/synth_{i:04}.png"));
            let mask = PathBuf::from(format!("masks/synth_{i:04}.png"));
            item.image.save_png(a.out.join(&image))?;
            save_mask(&item.mask, a.out.join(&mask))?;
            let split = if i < train {
                Split::Train
            } else if i < train + a.val {
                Split::Val
            } else {
                Split::Test
            };
            Ok(ManifestEntry {
                image,
                mask: Some(mask),
                split,
                scale: None,
                source: format!("synth seed {} item {i}", spec.seed),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    save_manifest(&entries, a.out.join("manifest.jsonl"))?;

    let rows: Vec<Vec<String>> = items
        .iter()
        .zip(&entries)
        .map(|(item, e)| {
            let (g, t) = (&item.geometry, &item.truth);
            vec![
                e.image.display().to_string(),
                num(t.width),
                num(t.contact_width),
                num(t.height),
                num(t.depth),
                num(t.alpha),
                opt(t.beta),
                num(g.radius),
                num(g.offset),
                num(g.bowl_depth),
                num(g.cx),
                num(g.baseline),
            ]
        })
        .collect();
    write_csv(&a.out.join("truth.csv"), &TRUTH_HEADER, &rows)?;
    println!(
        "wrote {} synthetic items ({train} train, {} val, {} test) to {}",
        spec.count,
        a.val,
        a.test,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; receives images/, masks/ and manifest.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Augmented copies per training pair.
    #[arg(long, default_value_t = 15)]
    pub per_image: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

fn absolute(manifest_dir: &Path, p: &Path) -> anyhow::Result<PathBuf> {
    let p = if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    };
    std::fs::canonicalize(&p).with_context(|| format!("resolving {}", p.display()))
}

/// Replaces the train split with originals plus augmented copies; other
/// splits are carried over unchanged, pointing at their original files.
pub fn augment(a: AugmentArgs) -> anyhow::Result<()> {
    let cfg = a.config.load()?;
    let manifest = load_manifest(&a.manifest)?;
    let train = load_split(&manifest, Split::Train)?;
    if train.is_empty() {
        bail!("{} has no annotated train entries", a.manifest.display());
    }
    let pairs: Vec<_> = train.iter().map(|t| (t.image.clone(), t.mask.clone())).collect();
    let expanded = expand_dataset(&pairs, a.per_image, &cfg.augment, a.seed)?;

    ensure_dir(&a.out.join("images"))?;
    ensure_dir(&a.out.join("masks"))?;
    let n = pairs.len();
    let mut entries: Vec<ManifestEntry> = expanded
        .par_iter()
        .enumerate()
        .map(|(k, (image, mask))| -> anyhow::Result<ManifestEntry> {
            // Originals come first, then `per_image` copies of each pair.
            let (i, name) = if k < n {
                (k, format!("aug_{k:04}_orig.png"))
            } else {
                let (i, j) = ((k - n) / a.per_image, (k - n) % a.per_image);
                (i, format!("aug_{i:04}_{j:02}.png"))
            };
            let image_path = PathBuf::from("images").join(&name);
            let mask_path = PathBuf::from("masks").join(&name);
            image.save_png(a.out.join(&image_path))?;
            save_mask(mask, a.out.join(&mask_path))?;
            let src = &train[i].entry;
            Ok(ManifestEntry {
                image: image_path,
                mask: Some(mask_path),
                split: Split::Train,
                scale: src.scale,
                source: format!("augmented from {}", src.image.display()),
            })
        })
        .collect::<anyhow::Result<_>>()?;

    for e in manifest.entries.iter().filter(|e| e.split != Split::Train) {
        entries.push(ManifestEntry {
            image: absolute(&manifest.dir, &e.image)?,
            mask: e.mask.as_ref().map(|m| absolute(&manifest.dir, m)).transpose()?,
            ..e.clone()
        });
    }
    save_manifest(&entries, a.out.join("manifest.jsonl"))?;
    println!("{} train pairs -> {} after augmentation", n, expanded.len());
    Ok(())
}
