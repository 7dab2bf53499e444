use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::flood_fill_threshold;
use crate::raster::{BinaryMask, Raster};

/// A painted path. Points are `[x, y]` pixel coordinates; every pixel whose
/// center lies within `radius` of a point is painted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrushStroke {
    pub points: Vec<[f64; 2]>,
    pub radius: f64,
}

impl BrushStroke {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidParameter("brush stroke has no points".into()));
        }
        if !(self.radius >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "brush radius must be at least 1, got {}",
                self.radius
            )));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("brush point is not finite".into()));
        }
        Ok(())
    }
}

/// Pixels covered by the strokes. Stroke points are clamped into the image
/// before their disks are rasterized. Row-major, without duplicates.
pub fn stroke_seeds(strokes: &[BrushStroke], width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
    let mut painted = BinaryMask::empty(width, height);
    for stroke in strokes {
        stroke.validate()?;
        let r = stroke.radius;
        for &[px, py] in &stroke.points {
            let cx = px.clamp(0.0, (width - 1) as f64);
            let cy = py.clamp(0.0, (height - 1) as f64);
            let x0 = (cx - r).floor().max(0.0) as usize;
            let x1 = ((cx + r).ceil() as usize).min(width - 1);
            let y0 = (cy - r).floor().max(0.0) as usize;
            let y1 = ((cy + r).ceil() as usize).min(height - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    if dx * dx + dy * dy <= r * r {
                        painted.set(x, y, true);
                    }
                }
            }
        }
    }
    Ok(painted.iter_foreground().collect())
}

/// Brush-and-tolerance selection, unioned onto `existing` when given.
///
/// Because each painted pixel grows its own region, selecting two stroke
/// batches one after the other gives the same mask as selecting them together.
pub fn wand_select(
    image: &Raster,
    strokes: &[BrushStroke],
    tolerance: f32,
    existing: Option<&BinaryMask>,
) -> Result<BinaryMask> {
    let (w, h) = (image.width(), image.height());
    if let Some(m) = existing {
        if m.width() != w || m.height() != h {
            return Err(Error::DimensionMismatch(format!(
                "image {w}x{h} vs existing mask {}x{}",
                m.width(),
                m.height()
            )));
        }
    }
    let base = existing.cloned().unwrap_or_else(|| BinaryMask::empty(w, h));
    if strokes.is_empty() {
        return Ok(base);
    }
    let seeds = stroke_seeds(strokes, w, h)?;
    let selected = flood_fill_threshold(image, &seeds, tolerance)?;
    base.union(&selected)
}
