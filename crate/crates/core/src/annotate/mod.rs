//! Semi-automated mask generation.
//!
//! Two workflows produce training masks: a seed ellipse grown by
//! morphological active contours under seven hyperparameter presets, and a
//! brush-driven connected colour threshold ("wand") for cases where none of
//! the contour candidates is acceptable.

mod mgac;
mod wand;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{fill_holes, flood_region, inverse_gradient_energy, largest_component, ScalarField};
use crate::raster::{to_grayscale, BinaryMask, Raster};

pub use mgac::{evolve_mgac, evolve_mgac_recorded, inf_sup, sup_inf, Evolution, MgacParams, STALL_LIMIT};
pub use wand::{stroke_seeds, wand_select, BrushStroke};

/// Number of contour candidates offered to the annotator.
pub const CANDIDATE_COUNT: usize = 7;

/// Default interval for ballooning progress snapshots.
pub const DEFAULT_SNAPSHOT_EVERY: usize = 25;

/// Nucleus ellipse placed inside the melt track. Coordinates are pixel
/// centers, `x` to the right and `y` down; rotation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedEllipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub rotation: f64,
}

impl SeedEllipse {
    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            cx,
            cy,
            a: r,
            b: r,
            rotation: 0.0,
        }
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        (
            (self.a * self.a * c * c + self.b * self.b * s * s).sqrt(),
            (self.a * self.a * s * s + self.b * self.b * c * c).sqrt(),
        )
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0) || !self.rotation.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "seed ellipse semi-axes must be positive, got a={} b={}",
                self.a, self.b
            )));
        }
        let (ex, ey) = self.half_extents();
        let inside = self.cx - ex >= 0.0
            && self.cy - ey >= 0.0
            && self.cx + ex <= (width - 1) as f64
            && self.cy + ey <= (height - 1) as f64;
        if !inside {
            return Err(Error::SeedOutOfBounds {
                x: self.cx,
                y: self.cy,
                width,
                height,
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Pixels whose centers satisfy the ellipse inequality.
pub fn rasterize_ellipse(seed: &SeedEllipse, width: usize, height: usize) -> Result<BinaryMask> {
    seed.validate(width, height)?;
    Ok(BinaryMask::from_fn(width, height, |x, y| {
        seed.contains(x as f64, y as f64)
    }))
}

/// The seven contour presets: alpha in {100, 500, 1000} x sigma in {2, 4},
/// then one heavily smoothed preset.
pub fn default_presets() -> Vec<MgacParams> {
    let base = MgacParams {
        sigma: 2.0,
        alpha: 100.0,
        balloon: 1.0,
        smoothing: 1,
        threshold: 0.3,
        iterations: 300,
    };
    let mut presets = Vec::with_capacity(CANDIDATE_COUNT);
    for alpha in [100.0, 500.0, 1000.0] {
        for sigma in [2.0, 4.0] {
            presets.push(MgacParams { alpha, sigma, ..base });
        }
    }
    presets.push(MgacParams {
        alpha: 500.0,
        sigma: 3.0,
        smoothing: 3,
        ..base
    });
    presets
}

/// Seven candidate masks plus the edge-detection flood-fill preview.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<BinaryMask>,
    pub params: Vec<MgacParams>,
    /// Flood fill of the seed through non-edge pixels of the first preset's
    /// energy field. Diagnostic only.
    pub preview: BinaryMask,
}

pub fn generate_candidates(image: &Raster, seed: &SeedEllipse) -> Result<CandidateSet> {
    generate_candidates_with(image, seed, &default_presets())
}

/// Runs [`evolve_mgac`] once per preset. Energy fields are shared between
/// presets with the same `(sigma, alpha)`; presets run in parallel and come
/// back in preset order.
pub fn generate_candidates_with(
    image: &Raster,
    seed: &SeedEllipse,
    presets: &[MgacParams],
) -> Result<CandidateSet> {
    if presets.len() != CANDIDATE_COUNT {
        return Err(Error::InvalidParameter(format!(
            "expected {CANDIDATE_COUNT} presets, got {}",
            presets.len()
        )));
    }
    for p in presets {
        p.validate()?;
    }
    let gray = to_grayscale(image);
    let init = rasterize_ellipse(seed, gray.width(), gray.height())?;

    let mut keys: Vec<(u64, u64)> = Vec::new();
    for p in presets {
        let key = (p.sigma.to_bits(), p.alpha.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let fields: Vec<ScalarField> = keys
        .par_iter()
        .map(|&(s, a)| inverse_gradient_energy(&gray, f64::from_bits(a), f64::from_bits(s)))
        .collect::<Result<_>>()?;
    let energy: HashMap<(u64, u64), &ScalarField> = keys.iter().copied().zip(fields.iter()).collect();

    let candidates = presets
        .par_iter()
        .map(|p| evolve_mgac(energy[&(p.sigma.to_bits(), p.alpha.to_bits())], &init, p))
        .collect::<Result<Vec<_>>>()?;

    let first = &presets[0];
    let field = energy[&(first.sigma.to_bits(), first.alpha.to_bits())];
    let seeds: Vec<(usize, usize)> = init.iter_foreground().collect();
    let preview = flood_region(&field.threshold_above(first.threshold), &seeds);

    Ok(CandidateSet {
        candidates,
        params: presets.to_vec(),
        preview,
    })
}

/// Keeps the largest connected component and fills its interior holes.
pub fn finalize_mask(mask: &BinaryMask) -> Result<BinaryMask> {
    if mask.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(fill_holes(&largest_component(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::connected_components;
    use crate::metrics::{confusion, iou};

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        })
    }

    fn disk_image(side: usize, r: f64) -> (Raster, BinaryMask) {
        let c = (side / 2) as f64;
        let truth = disk(side, side, c, c, r);
        let img = Raster::from_fn_gray(side, side, |x, y| if truth.get(x, y) { 1.0 } else { 0.0 }).unwrap();
        (img, truth)
    }

    #[test]
    fn unit_circle_is_a_plus() {
        let m = rasterize_ellipse(&SeedEllipse::circle(10.0, 10.0, 1.0), 21, 21).unwrap();
        let expected = BinaryMask::from_fn(21, 21, |x, y| {
            matches!((x, y), (10, 10) | (9, 10) | (11, 10) | (10, 9) | (10, 11))
        });
        assert_eq!(m, expected);
    }

    #[test]
    fn tiny_ellipse_is_center_pixel() {
        let m = rasterize_ellipse(&SeedEllipse::circle(4.0, 6.0, 0.4), 9, 9).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.get(4, 6));
    }

    #[test]
    fn rotation_irrelevant_for_circles() {
        let base = rasterize_ellipse(&SeedEllipse::circle(15.0, 12.0, 5.5), 32, 32).unwrap();
        for rot in [0.3, 1.1, 2.7, -0.9] {
            let seed = SeedEllipse {
                rotation: rot,
                ..SeedEllipse::circle(15.0, 12.0, 5.5)
            };
            assert_eq!(rasterize_ellipse(&seed, 32, 32).unwrap(), base);
        }
    }

    #[test]
    fn rotated_ellipse_swaps_axes() {
        let wide = SeedEllipse { cx: 15.0, cy: 15.0, a: 8.0, b: 3.0, rotation: 0.0 };
        let tall = SeedEllipse { rotation: std::f64::consts::FRAC_PI_2, ..wide };
        let w = rasterize_ellipse(&wide, 31, 31).unwrap();
        let t = rasterize_ellipse(&tall, 31, 31).unwrap();
        let transposed = BinaryMask::from_fn(31, 31, |x, y| w.get(y, x));
        assert_eq!(t, transposed);
    }

    #[test]
    fn ellipse_outside_bounds_rejected() {
        assert!(rasterize_ellipse(&SeedEllipse::circle(-5.0, -5.0, 2.0), 20, 20).is_err());
        assert!(rasterize_ellipse(&SeedEllipse::circle(18.5, 10.0, 2.0), 20, 20).is_err());
        assert!(rasterize_ellipse(&SeedEllipse::circle(10.0, 10.0, 0.0), 20, 20).is_err());
    }

    #[test]
    fn presets_follow_the_documented_grid() {
        let p = default_presets();
        assert_eq!(p.len(), CANDIDATE_COUNT);
        assert_eq!(
            p.iter().map(|q| (q.alpha, q.sigma)).collect::<Vec<_>>(),
            vec![(100.0, 2.0), (100.0, 4.0), (500.0, 2.0), (500.0, 4.0), (1000.0, 2.0), (1000.0, 4.0), (500.0, 3.0)]
        );
        assert_eq!(p[6].smoothing, 3);
        assert!(p.iter().all(|q| q.balloon == 1.0 && q.threshold == 0.3 && q.iterations == 300));
    }

    #[test]
    fn evolution_converges_on_synthetic_disk() {
        let (img, truth) = disk_image(128, 40.0);
        let energy = inverse_gradient_energy(&img, 100.0, 2.0).unwrap();
        let init = rasterize_ellipse(&SeedEllipse::circle(64.0, 64.0, 10.0), 128, 128).unwrap();
        let params = MgacParams {
            sigma: 2.0,
            alpha: 100.0,
            balloon: 1.0,
            smoothing: 1,
            threshold: 0.3,
            iterations: 200,
        };
        let out = evolve_mgac(&energy, &init, &params).unwrap();
        let score = iou(&confusion(&out, &truth).unwrap());
        assert!(score >= 0.95, "IoU {score}");
    }

    #[test]
    fn candidates_are_seven_deterministic_masks() {
        let (img, truth) = disk_image(96, 28.0);
        let seed = SeedEllipse::circle(48.0, 48.0, 6.0);
        let a = generate_candidates(&img, &seed).unwrap();
        let b = generate_candidates(&img, &seed).unwrap();
        assert_eq!(a.candidates.len(), CANDIDATE_COUNT);
        assert!(a.candidates.iter().all(|m| m.width() == 96 && m.height() == 96));
        assert_eq!(a, b);
        let best = a
            .candidates
            .iter()
            .map(|m| iou(&confusion(m, &truth).unwrap()))
            .fold(0.0, f64::max);
        assert!(best >= 0.95, "best IoU {best}");
        assert!(a.preview.get(48, 48));
    }

    #[test]
    fn candidates_need_seven_presets() {
        let (img, _) = disk_image(32, 8.0);
        let seed = SeedEllipse::circle(16.0, 16.0, 2.0);
        assert!(generate_candidates_with(&img, &seed, &default_presets()[..6]).is_err());
    }

    #[test]
    fn finalize_cases() {
        let solid = disk(64, 64, 30.0, 30.0, 15.0);
        assert_eq!(finalize_mask(&solid).unwrap(), solid);

        let mut speck = solid.clone();
        speck.set(60, 2, true);
        speck.set(61, 2, true);
        assert_eq!(finalize_mask(&speck).unwrap(), solid);

        let holed = solid.intersection(&disk(64, 64, 30.0, 30.0, 5.0).not()).unwrap();
        assert_eq!(finalize_mask(&holed).unwrap(), solid);

        assert!(matches!(finalize_mask(&BinaryMask::empty(4, 4)), Err(Error::EmptySelection)));
    }

    #[test]
    fn finalize_output_is_one_hole_free_component() {
        let messy = BinaryMask::from_fn(40, 40, |x, y| {
            let ring = {
                let d = ((x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2)).sqrt();
                (6.0..12.0).contains(&d)
            };
            ring || (x == 2 && y < 5) || (x + y) % 17 == 0 && x > 34
        });
        let out = finalize_mask(&messy).unwrap();
        assert_eq!(connected_components(&out).count(), 1);
        assert_eq!(fill_holes(&out), out);
    }
}
