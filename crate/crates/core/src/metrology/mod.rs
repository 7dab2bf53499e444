//! Melt-track geometry from a binary segmentation.
//!
//! The pipeline runs artifact suppression, pore filling, surface extraction,
//! bounding box, baseline fit, dimensions, contact points and angles. The
//! substrate surface comes from a metal mask (substrate plus pool), which is
//! either supplied, derived from the micrograph with
//! [`metal_mask_from_image`], or, when only the pool is known, replaced by a
//! horizontal line through the pool's edge columns.

mod baseline;
mod geometry;
mod surface;

use serde::{Deserialize, Serialize};

use crate::annotate::finalize_mask;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster};

pub use baseline::{fit_baseline, Baseline, MAX_SLOPE, MIN_FLANK, MIN_FLANK_COLUMNS};
pub use geometry::{
    boundary_midpoints, boundary_tangent, dims, side_angles, tangent_points, Branch, Dims, Side, SideAngles,
    TangentFit, ARC_WINDOW,
};
pub use surface::{
    extract_surface, melt_bbox, metal_mask_from_image, suppress_top_artifact, BBox, SurfaceProfile,
    SURFACE_SIGMA, TOP_ARTIFACT_FRACTION,
};

/// Conditions worth reporting alongside the numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// No metal mask; the baseline was taken from the pool outline alone.
    PoolOnly,
    /// Flanks too short or too steep for a line fit.
    BaselineFallback,
    /// Stray foreground in the top half was removed.
    TopArtifactRemoved,
    /// A tangent could not be fitted at all.
    AngleUnavailable,
}

impl Flag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flag::PoolOnly => "pool_only",
            Flag::BaselineFallback => "baseline_fallback",
            Flag::TopArtifactRemoved => "top_artifact_removed",
            Flag::AngleUnavailable => "angle_unavailable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalDims {
    pub width_um: f64,
    pub height_um: f64,
    pub depth_um: f64,
    pub area_um2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeltTrackMetrics {
    pub width_px: f64,
    pub height_px: f64,
    pub depth_px: f64,
    /// Informational pool area in pixels.
    pub area_px: f64,
    pub alpha_left: Option<f64>,
    pub alpha_right: Option<f64>,
    pub alpha_mean: Option<f64>,
    pub beta_left: Option<f64>,
    pub beta_right: Option<f64>,
    pub beta_mean: Option<f64>,
    pub tangent_left: (f64, f64),
    pub tangent_right: (f64, f64),
    pub baseline: Baseline,
    pub bbox: BBox,
    pub scale_um_per_px: Option<f64>,
    pub physical: Option<PhysicalDims>,
    pub flags: Vec<Flag>,
}

impl MeltTrackMetrics {
    pub fn flags_label(&self) -> String {
        self.flags.iter().map(Flag::as_str).collect::<Vec<_>>().join(";")
    }
}

fn mean_of(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        (a, b) => a.or(b),
    }
}

fn push_flag(flags: &mut Vec<Flag>, f: Flag) {
    if !flags.contains(&f) {
        flags.push(f);
    }
}

/// Surface row guessed from the pool alone: the pool is widest where it
/// meets the surface, at the end of the widest run of rows past which the
/// outline narrows faster.
fn widest_row_edge(pool: &BinaryMask, bbox: &BBox) -> f64 {
    let extent = |y: isize| -> usize {
        if y < bbox.y0 as isize || y > bbox.y1 as isize {
            return 0;
        }
        let y = y as usize;
        let mut xs = (bbox.x0..=bbox.x1).filter(|&x| pool.get(x, y));
        match (xs.next(), xs.next_back()) {
            (Some(a), Some(b)) => b - a + 1,
            (Some(_), None) => 1,
            _ => 0,
        }
    };
    let widest = (bbox.y0..=bbox.y1).map(|y| extent(y as isize)).max().unwrap_or(0);
    let mut rows = (bbox.y0..=bbox.y1).filter(|&y| extent(y as isize) == widest);
    let first = rows.next().expect("non-empty bbox");
    let last = rows.last().unwrap_or(first);
    let (first, last) = (first as isize, last as isize);
    let span = (last - first + 1).max(3);
    let below: usize = (1..=span).map(|n| extent(last + n)).sum();
    let above: usize = (1..=span).map(|n| extent(first - n)).sum();
    match below.cmp(&above) {
        std::cmp::Ordering::Less => last as f64 + 0.5,
        std::cmp::Ordering::Greater => first as f64 - 0.5,
        std::cmp::Ordering::Equal => ((first + last) / 2) as f64 + 0.5,
    }
}

/// Full measurement of one pool mask.
///
/// `metal` is the substrate plus pool; without it the baseline falls back to
/// the pool outline and the result carries [`Flag::PoolOnly`].
pub fn measure(pool: &BinaryMask, metal: Option<&BinaryMask>, scale_um_per_px: Option<f64>) -> Result<MeltTrackMetrics> {
    if let Some(s) = scale_um_per_px {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {s}")));
        }
    }
    if let Some(m) = metal {
        if !m.same_dims(pool) {
            return Err(Error::DimensionMismatch(format!(
                "pool {}x{} vs metal {}x{}",
                pool.width(),
                pool.height(),
                m.width(),
                m.height()
            )));
        }
    }
    if pool.is_empty() {
        return Err(Error::NoMeltPool);
    }
    let mut flags = Vec::new();

    let (pool, metal) = match metal {
        Some(m) => {
            let cleaned = suppress_top_artifact(m);
            if &cleaned != m {
                push_flag(&mut flags, Flag::TopArtifactRemoved);
            }
            let pool = finalize_mask(pool).map_err(|e| e.in_stage("finalize"))?;
            let metal = cleaned.union(&pool)?;
            (pool, Some(metal))
        }
        None => {
            let cleaned = suppress_top_artifact(pool);
            if &cleaned != pool {
                push_flag(&mut flags, Flag::TopArtifactRemoved);
            }
            (finalize_mask(&cleaned).map_err(|e| e.in_stage("finalize"))?, None)
        }
    };

    let bbox = melt_bbox(&pool).map_err(|e| e.in_stage("melt_bbox"))?;
    let (baseline, metal) = match metal {
        Some(metal) => {
            let profile = extract_surface(&metal).map_err(|e| e.in_stage("extract_surface"))?;
            let baseline = fit_baseline(&profile, &bbox).map_err(|e| e.in_stage("fit_baseline"))?;
            (baseline, metal)
        }
        None => {
            push_flag(&mut flags, Flag::PoolOnly);
            let row = widest_row_edge(&pool, &bbox);
            let baseline = Baseline::horizontal(row, (bbox.x0, bbox.x1), true);
            let metal = BinaryMask::from_fn(pool.width(), pool.height(), |x, y| {
                pool.get(x, y) || y as f64 > baseline.row_at(x as f64)
            });
            (baseline, metal)
        }
    };
    if baseline.low_confidence {
        push_flag(&mut flags, Flag::BaselineFallback);
        log::warn!("low-confidence baseline");
    }

    let d = dims(&pool, &baseline, &bbox);
    let (pl, pr) = tangent_points(&pool, &metal, &bbox, &baseline).map_err(|e| e.in_stage("tangent_points"))?;

    let boundary = boundary_midpoints(&pool);
    let scale = ARC_WINDOW.max(0.5 * (pr.0 - pl.0));
    let has_cap = d.height > 0.5;
    let has_wall = d.depth > 0.5;
    let left = side_angles(&boundary, pl, Side::Left, &baseline, scale, has_cap, has_wall);
    let right = side_angles(&boundary, pr, Side::Right, &baseline, scale, has_cap, has_wall);
    for s in [&left, &right] {
        if s.failed {
            push_flag(&mut flags, Flag::AngleUnavailable);
        }
    }

    let area = pool.count() as f64;
    let physical = scale_um_per_px.map(|s| PhysicalDims {
        width_um: d.width * s,
        height_um: d.height * s,
        depth_um: d.depth * s,
        area_um2: area * s * s,
    });
    Ok(MeltTrackMetrics {
        width_px: d.width,
        height_px: d.height,
        depth_px: d.depth,
        area_px: area,
        alpha_left: left.alpha,
        alpha_right: right.alpha,
        alpha_mean: mean_of(left.alpha, right.alpha),
        beta_left: left.beta,
        beta_right: right.beta,
        beta_mean: mean_of(left.beta, right.beta),
        tangent_left: pl,
        tangent_right: pr,
        baseline,
        bbox,
        scale_um_per_px,
        physical,
        flags,
    })
}

/// Measures a pool mask against the substrate visible in its micrograph.
pub fn measure_image(image: &Raster, pool: &BinaryMask, scale_um_per_px: Option<f64>) -> Result<MeltTrackMetrics> {
    if pool.is_empty() {
        return Err(Error::NoMeltPool);
    }
    let metal = metal_mask_from_image(image, pool).map_err(|e| e.in_stage("metal_mask"))?;
    measure(pool, Some(&metal), scale_um_per_px)
}

/// RGB copy of `image` with the pool outline in cyan and the baseline in red.
pub fn render_overlay(image: &Raster, pool: &BinaryMask, metrics: &MeltTrackMetrics) -> Result<Raster> {
    let (w, h) = (image.width(), image.height());
    if pool.width() != w || pool.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "image {w}x{h} vs mask {}x{}",
            pool.width(),
            pool.height()
        )));
    }
    let gray = crate::raster::to_grayscale(image);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let v = gray.get(x, y, 0);
            data.extend_from_slice(&[v, v, v]);
        }
    }
    let mut paint = |x: usize, y: usize, c: [f32; 3]| data[(y * w + x) * 3..(y * w + x + 1) * 3].copy_from_slice(&c);
    for (x, y) in pool.iter_foreground() {
        let (xi, yi) = (x as isize, y as isize);
        let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)]
            .iter()
            .any(|&(dx, dy)| !pool.get_signed(xi + dx, yi + dy));
        if edge {
            paint(x, y, [0.0, 1.0, 1.0]);
        }
    }
    for x in 0..w {
        let r = metrics.baseline.row_at(x as f64).round();
        if r >= 0.0 && (r as usize) < h {
            paint(x, r as usize, [1.0, 0.0, 0.0]);
        }
    }
    Raster::new(w, h, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cap circle of radius `r` centred `d` below the baseline (row 149.5),
    /// continued below the baseline as the same circle.
    fn full_disk(r: f64, d: f64) -> (BinaryMask, BinaryMask) {
        let (w, h) = (400, 300);
        let (cx, yb) = (199.5, 149.5);
        let pool = BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).hypot(y as f64 - (yb + d)) <= r);
        let metal = BinaryMask::from_fn(w, h, |x, y| y as f64 > yb || pool.get(x, y));
        (pool, metal)
    }

    #[test]
    fn semicircle_with_scale() {
        let (w, h) = (300, 200);
        let pool = BinaryMask::from_fn(w, h, |x, y| y as f64 > 79.5 && (x as f64 - 149.5).hypot(y as f64 - 79.5) <= 50.0);
        let metal = BinaryMask::from_fn(w, h, |_, y| y >= 80);
        let m = measure(&pool, Some(&metal), Some(2.0)).unwrap();
        assert!((m.width_px - 100.0).abs() <= 1.0, "{m:?}");
        assert!((m.depth_px - 50.0).abs() <= 1.0);
        assert!(m.height_px.abs() < 1e-6);
        let p = m.physical.unwrap();
        assert!((p.width_um - 200.0).abs() <= 2.0);
        assert!((p.depth_um - 100.0).abs() <= 2.0);
        assert!(m.alpha_mean.is_none());
        let beta = m.beta_mean.unwrap();
        assert!((beta - 90.0).abs() < 3.0, "beta {beta}");
        assert!(m.flags.is_empty(), "{:?}", m.flags);
    }

    #[test]
    fn pool_only_semicircle() {
        let pool = BinaryMask::from_fn(300, 200, |x, y| {
            y as f64 > 79.5 && (x as f64 - 149.5).hypot(y as f64 - 79.5) <= 50.0
        });
        let m = measure(&pool, None, Some(2.0)).unwrap();
        assert!(m.flags.contains(&Flag::PoolOnly));
        assert!((m.width_px - 100.0).abs() <= 1.0);
        assert!((m.depth_px - 50.0).abs() <= 1.0);
        assert!(m.height_px.abs() <= 1.0);
    }

    #[test]
    fn full_disk_angles_agree() {
        for (r, ratio) in [(50.0, 0.0), (40.0, 0.5)] {
            let (pool, metal) = full_disk(r, r * ratio);
            let m = measure(&pool, Some(&metal), None).unwrap();
            let alpha = (r * r - (r * ratio).powi(2)).sqrt().atan2(r * ratio).to_degrees();
            let (a, b) = (m.alpha_mean.unwrap(), m.beta_mean.unwrap());
            assert!((a - alpha).abs() < 3.0, "r={r} ratio={ratio}: alpha {a} vs {alpha}");
            assert!((b - a).abs() < 3.0, "beta {b} vs alpha {a}");
        }
    }

    #[test]
    fn empty_mask_reports_no_pool() {
        let e = BinaryMask::empty(30, 30);
        let err = measure(&e, None, None).unwrap_err();
        assert_eq!(err.to_string(), "no melt pool found");
    }

    #[test]
    fn interior_pore_changes_nothing() {
        let (pool, metal) = full_disk(40.0, 10.0);
        let holed = BinaryMask::from_fn(pool.width(), pool.height(), |x, y| {
            pool.get(x, y) && (x as f64 - 195.0).hypot(y as f64 - 170.0) > 6.0
        });
        let a = measure(&pool, Some(&metal), None).unwrap();
        let b = measure(&holed, Some(&metal), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlay_marks_baseline_and_outline() {
        let (pool, metal) = full_disk(30.0, 0.0);
        let m = measure(&pool, Some(&metal), None).unwrap();
        let img = Raster::filled(pool.width(), pool.height(), 1, 0.5).unwrap();
        let o = render_overlay(&img, &pool, &m).unwrap();
        assert_eq!(o.channels(), 3);
        assert!((148..=151).any(|y| o.pixel(5, y) == [1.0, 0.0, 0.0]));
        assert_eq!(o.pixel(200, 120), &[0.0, 1.0, 1.0]);
    }
}
