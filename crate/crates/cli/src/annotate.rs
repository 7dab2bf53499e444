use std::path::PathBuf;
use std::str::FromStr;

use anyhow::Context;
use clap::Args;
use meltpool_core::annotate::{generate_candidates_with, wand_select, BrushStroke, SeedEllipse};
use meltpool_core::raster::{load_mask, load_raster, save_mask};
use serde::Serialize;

use crate::output::ensure_dir;
use crate::{usage, ConfigArg};

/// `cx,cy,a,b,rot` with the rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseArg(pub SeedEllipse);

impl FromStr for EllipseArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        let [cx, cy, a, b, rot] = v[..] else {
            return Err(format!("expected cx,cy,a,b,rot, got {} values", v.len()));
        };
        if v.iter().any(|x| !x.is_finite()) || a <= 0.0 || b <= 0.0 {
            return Err("ellipse values must be finite with positive semi-axes".into());
        }
        Ok(EllipseArg(SeedEllipse {
            cx,
            cy,
            a,
            b,
            rotation: rot.to_radians(),
        }))
    }
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    /// Micrograph to annotate.
    pub image: PathBuf,
    /// Seed ellipse `cx,cy,a,b,rot` in pixels, rotation in degrees.
    #[arg(long)]
    pub ellipse: EllipseArg,
    /// Output directory for candidate_0.png .. candidate_6.png.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Serialize)]
struct CandidateRecord {
    index: usize,
    file: String,
    area: usize,
    preset: meltpool_core::annotate::MgacParams,
}

pub fn candidates(a: CandidatesArgs) -> anyhow::Result<()> {
    let cfg = a.config.load()?;
    let image = load_raster(&a.image)?;
    let seed = a.ellipse.0;
    seed.validate(image.width(), image.height()).map_err(usage)?;
    let set = generate_candidates_with(&image, &seed, &cfg.presets())?;
    ensure_dir(&a.out)?;
    let mut records = Vec::new();
    for (i, (m, p)) in set.candidates.iter().zip(&set.params).enumerate() {
        let file = format!("candidate_{i}.png");
        save_mask(m, a.out.join(&file))?;
        records.push(CandidateRecord {
            index: i,
            file,
            area: m.count(),
            preset: *p,
        });
    }
    save_mask(&set.preview, a.out.join("preview.png"))?;
    let json = serde_json::to_string_pretty(&records)?;
    let path = a.out.join("candidates.json");
    std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} candidates to {}", records.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct WandArgs {
    pub image: PathBuf,
    /// JSON list of strokes: `[{"points": [[x, y], ...], "radius": r}]`.
    #[arg(long)]
    pub strokes: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f32,
    /// Existing mask to add the selection to.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output mask PNG.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn wand(a: WandArgs) -> anyhow::Result<()> {
    if !(a.tolerance >= 0.0) {
        return Err(usage(anyhow::anyhow!("--tolerance must be non-negative")));
    }
    let text = std::fs::read_to_string(&a.strokes).with_context(|| format!("reading {}", a.strokes.display()))?;
    let strokes: Vec<BrushStroke> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.strokes.display()))?;
    for s in &strokes {
        s.validate().map_err(usage)?;
    }
    let image = load_raster(&a.image)?;
    let existing = a.mask.as_ref().map(load_mask).transpose()?;
    let mask = wand_select(&image, &strokes, a.tolerance, existing.as_ref())?;
    save_mask(&mask, &a.out)?;
    println!("selected {} px -> {}", mask.count(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long, default_value_t = meltpool_service::DEFAULT_PORT)]
    pub port: u16,
}

pub fn annotate(a: AnnotateArgs) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    println!("annotation UI: http://127.0.0.1:{}/", a.port);
    rt.block_on(meltpool_service::serve(a.port))
        .with_context(|| format!("serving on port {}", a.port))
}
