use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{
    connected_components, fill_holes, gaussian_blur, largest_component, otsu_threshold, sobel_xy, ScalarField,
};
use crate::raster::{to_grayscale, BinaryMask, Raster};

/// Blur applied to the metal mask before locating the top edge.
pub const SURFACE_SIGMA: f64 = 2.0;

/// Foreground fraction of the top half above which stray components there
/// are treated as mounting artifacts.
pub const TOP_ARTIFACT_FRACTION: f64 = 0.25;

/// Top edge of the metal per column, in continuous row coordinates (pixel
/// centers at integers, so a slab starting at row 100 has its edge at 99.5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceProfile {
    pub rows: Vec<Option<f64>>,
}

impl SurfaceProfile {
    pub fn width(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, x: usize) -> Option<f64> {
        self.rows.get(x).copied().flatten()
    }

    pub fn valid_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn center_x(&self) -> f64 {
        (self.x0 + self.x1) as f64 / 2.0
    }
}

/// Removes components other than the largest that sit in the top half, but
/// only when the top half is more than a quarter foreground.
pub fn suppress_top_artifact(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let half = h / 2;
    if half == 0 {
        return mask.clone();
    }
    let top = mask.data()[..half * w].iter().filter(|&&b| b).count();
    if (top as f64) <= TOP_ARTIFACT_FRACTION * (half * w) as f64 {
        return mask.clone();
    }
    let comps = connected_components(mask);
    let Some(keep) = comps.largest_label() else {
        return mask.clone();
    };
    let mut offending = vec![false; comps.count() + 1];
    for &l in &comps.labels[..half * w] {
        if l != 0 && l != keep {
            offending[l as usize] = true;
        }
    }
    BinaryMask::from_fn(w, h, |x, y| {
        let l = comps.labels[y * w + x];
        l != 0 && !offending[l as usize]
    })
}

/// Top metal edge per column, refined to subpixel precision on the vertical
/// Sobel response of the blurred mask.
pub fn extract_surface(metal: &BinaryMask) -> Result<SurfaceProfile> {
    if metal.is_empty() {
        return Err(Error::NoMeltPool);
    }
    let (w, h) = (metal.width(), metal.height());
    let blurred = gaussian_blur(&ScalarField::from_mask(metal), SURFACE_SIGMA)?;
    let gy = if w >= 3 && h >= 3 {
        Some(sobel_xy(&blurred)?.1)
    } else {
        None
    };
    let rows = (0..w)
        .map(|x| {
            let top = (0..h).find(|&y| metal.get(x, y))?;
            let raw = top as f64 - 0.5;
            let Some(gy) = &gy else { return Some(raw) };
            let lo = top.saturating_sub(4);
            let hi = (top + 3).min(h - 1);
            let peak = (lo..=hi).max_by(|&a, &b| gy.get(x, a).total_cmp(&gy.get(x, b)))?;
            if gy.get(x, peak) <= 0.0 {
                return Some(raw);
            }
            if peak == 0 || peak == h - 1 {
                return Some(peak as f64);
            }
            let (a, b, c) = (gy.get(x, peak - 1) as f64, gy.get(x, peak) as f64, gy.get(x, peak + 1) as f64);
            let curv = a - 2.0 * b + c;
            let offset = if curv < 0.0 { (0.5 * (a - c) / curv).clamp(-0.5, 0.5) } else { 0.0 };
            Some(peak as f64 + offset)
        })
        .collect();
    Ok(SurfaceProfile { rows })
}

/// Tight bounds of the largest connected component.
pub fn melt_bbox(mask: &BinaryMask) -> Result<BBox> {
    let main = largest_component(mask);
    let mut it = main.iter_foreground();
    let (x, y) = it.next().ok_or(Error::NoMeltPool)?;
    let mut b = BBox { x0: x, y0: y, x1: x, y1: y };
    for (x, y) in it {
        b.x0 = b.x0.min(x);
        b.x1 = b.x1.max(x);
        b.y0 = b.y0.min(y);
        b.y1 = b.y1.max(y);
    }
    Ok(b)
}

/// Metal (substrate plus melt pool) segmented from the micrograph.
///
/// Otsu threshold on the blurred grayscale, with the polarity chosen so that
/// the bottom rows count as metal. The pool is added, then the largest
/// component is kept and its holes filled.
pub fn metal_mask_from_image(image: &Raster, pool: &BinaryMask) -> Result<BinaryMask> {
    let (w, h) = (image.width(), image.height());
    if pool.width() != w || pool.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "image {w}x{h} vs pool mask {}x{}",
            pool.width(),
            pool.height()
        )));
    }
    let gray = ScalarField::from_raster(&to_grayscale(image));
    let blurred = gaussian_blur(&gray, SURFACE_SIGMA)?;
    let t = otsu_threshold(&blurred);
    let bright = blurred.threshold_above(t);
    let band = (h / 10).max(1);
    let bottom_bright = bright.data()[(h - band) * w..].iter().filter(|&&b| b).count();
    let metal = if 2 * bottom_bright >= band * w { bright } else { bright.not() };
    Ok(fill_holes(&largest_component(&metal.union(pool)?)))
}
