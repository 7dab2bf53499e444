use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::item_rng;
use crate::error::{Error, Result};
use crate::imageops::erode_square;
use crate::raster::{BinaryMask, Raster};

pub const RESIN: f32 = 0.12;
pub const SUBSTRATE: f32 = 0.72;
pub const POOL: f32 = 0.48;
pub const POOL_RIM: f32 = 0.3;
/// Thickness of the darker rim drawn inside the pool outline.
pub const RIM_WIDTH: usize = 2;
/// Columns kept clear on either side of the pool for the baseline fit.
const FLANK_MARGIN: f64 = 12.0;
const MAX_ATTEMPTS: usize = 200;

/// Melt pool made of a cap above the substrate surface and a bowl below it.
///
/// The surface is the horizontal line `y = baseline`. The cap is the part
/// above it of a circle of radius `radius` centred `offset` below the
/// surface; the bowl is a circular segment of depth `bowl_depth` through the
/// same two contact points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub cx: f64,
    pub baseline: f64,
    pub radius: f64,
    pub offset: f64,
    pub bowl_depth: f64,
}

/// Closed-form geometry in pixels and degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMetrics {
    /// Horizontal extent of the whole pool, which exceeds the contact chord
    /// when the bowl bulges past the contact points.
    pub width: f64,
    /// Distance between the two contact points on the surface.
    pub contact_width: f64,
    pub height: f64,
    pub depth: f64,
    pub alpha: f64,
    /// `None` without a bowl.
    pub beta: Option<f64>,
}

impl PoolGeometry {
    /// One circle cut by the surface: the bowl continues the cap's circle.
    pub fn full_disk(cx: f64, baseline: f64, radius: f64, offset: f64) -> Self {
        Self {
            cx,
            baseline,
            radius,
            offset,
            bowl_depth: radius + offset,
        }
    }

    /// Half the chord the surface cuts from the cap circle.
    pub fn half_width(&self) -> f64 {
        (self.radius * self.radius - self.offset * self.offset).max(0.0).sqrt()
    }

    fn bowl_circle(&self) -> Option<(f64, f64)> {
        if self.bowl_depth <= 0.0 {
            return None;
        }
        let w = self.half_width();
        let r = (w * w + self.bowl_depth * self.bowl_depth) / (2.0 * self.bowl_depth);
        Some((self.baseline + self.bowl_depth - r, r))
    }

    /// Horizontal half extent of the whole pool.
    pub fn half_extent(&self) -> f64 {
        let w = self.half_width();
        match self.bowl_circle() {
            Some((cy, r)) if cy > self.baseline => r,
            _ => w,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        if y < self.baseline {
            dx.hypot(y - (self.baseline + self.offset)) <= self.radius
        } else if y > self.baseline {
            self.bowl_circle().is_some_and(|(cy, r)| dx.hypot(y - cy) <= r)
        } else {
            false
        }
    }

    pub fn pool_mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.contains(x as f64, y as f64))
    }

    /// Substrate below the surface plus the pool.
    pub fn metal_mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| {
            y as f64 > self.baseline || self.contains(x as f64, y as f64)
        })
    }

    pub fn analytic(&self) -> AnalyticMetrics {
        let w = self.half_width();
        AnalyticMetrics {
            width: 2.0 * self.half_extent(),
            contact_width: 2.0 * w,
            height: self.radius - self.offset,
            depth: self.bowl_depth.max(0.0),
            alpha: w.atan2(self.offset).to_degrees(),
            beta: (self.bowl_depth > 0.0).then(|| 180.0 - 2.0 * (self.bowl_depth / w).atan().to_degrees()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub side: usize,
    pub radius_range: [f64; 2],
    /// Cap circle centre depth below the surface, as a fraction of the radius.
    pub offset_ratio_range: [f64; 2],
    /// Bowl depth as a fraction of the cap half-width.
    pub bowl_ratio_range: [f64; 2],
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    /// Amplitude of the striped pool texture.
    pub texture: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 16,
            side: 256,
            radius_range: [30.0, 60.0],
            offset_ratio_range: [0.0, 0.6],
            bowl_ratio_range: [0.4, 1.0],
            noise: 0.03,
            texture: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("synthetic spec: {m}")));
        let half = self.side as f64 / 2.0;
        let [r0, r1] = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1 && r1 < half) {
            return bad(format!("radius range [{r0}, {r1}] must lie in (0, {half})"));
        }
        let [d0, d1] = self.offset_ratio_range;
        if !(0.0 <= d0 && d0 <= d1 && d1 < 1.0) {
            return bad(format!("offset ratio range [{d0}, {d1}] must lie in [0, 1)"));
        }
        let [b0, b1] = self.bowl_ratio_range;
        if !(0.0 <= b0 && b0 <= b1 && b1.is_finite()) {
            return bad(format!("bowl ratio range [{b0}, {b1}] must be non-negative"));
        }
        if !(self.noise >= 0.0 && self.texture >= 0.0) {
            return bad("noise and texture must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticItem {
    pub image: Raster,
    pub mask: BinaryMask,
    pub metal: BinaryMask,
    pub geometry: PoolGeometry,
    pub truth: AnalyticMetrics,
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn sample_geometry<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Result<PoolGeometry> {
    let side = spec.side as f64;
    for _ in 0..MAX_ATTEMPTS {
        let radius = uniform(rng, spec.radius_range);
        let offset = radius * uniform(rng, spec.offset_ratio_range);
        let mut g = PoolGeometry {
            cx: 0.0,
            baseline: 0.0,
            radius,
            offset,
            bowl_depth: uniform(rng, spec.bowl_ratio_range) * (radius * radius - offset * offset).sqrt(),
        };
        let (up, down) = (radius - offset, g.bowl_depth);
        let margin = 4.0;
        let lo_row = (up + margin).ceil();
        let hi_row = (side - down - margin).floor() - 1.0;
        let half = g.half_extent();
        let (lo_x, hi_x) = (half + FLANK_MARGIN, side - half - FLANK_MARGIN);
        if lo_row > hi_row || lo_x > hi_x {
            continue;
        }
        g.baseline = rng.random_range(lo_row as i64..=hi_row as i64) as f64 - 0.5;
        g.cx = uniform(rng, [lo_x, hi_x]);
        return Ok(g);
    }
    Err(Error::InvalidParameter(format!(
        "synthetic spec: pools from radius range {:?} do not fit a {}px image",
        spec.radius_range, spec.side
    )))
}

/// Grayscale stand-in micrograph: dark resin, bright substrate, a textured
/// pool with a darker rim, plus Gaussian noise.
pub fn render<R: Rng>(g: &PoolGeometry, side: usize, texture: f64, noise: f64, rng: &mut R) -> (Raster, BinaryMask) {
    let pool = g.pool_mask(side, side);
    let mut core = pool.clone();
    for _ in 0..RIM_WIDTH {
        core = erode_square(&core);
    }
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt: f64 = rng.random_range(-0.6..0.6);
    let normal = Normal::new(0.0, noise.max(1e-12)).expect("valid deviation");
    let data = (0..side * side)
        .map(|i| {
            let (x, y) = (i % side, i / side);
            let base = if core.get(x, y) {
                let (xf, yf) = (x as f64, y as f64);
                let stripes = (0.45 * (xf + tilt * yf) + phase).sin() * (0.21 * yf - phase).cos();
                POOL as f64 + texture * stripes
            } else if pool.get(x, y) {
                POOL_RIM as f64
            } else if y as f64 > g.baseline {
                SUBSTRATE as f64 + 0.03 * (y as f64 / side as f64)
            } else {
                RESIN as f64
            };
            let n = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
            (base + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    (Raster::new(side, side, 1, data).expect("valid dimensions"), pool)
}

/// Deterministic per seed; items are generated in parallel and returned in
/// index order.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticItem>> {
    spec.validate()?;
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = item_rng(spec.seed, i, usize::MAX >> 32);
            let g = sample_geometry(spec, &mut rng)?;
            let (image, mask) = render(&g, spec.side, spec.texture, spec.noise, &mut rng);
            Ok(SyntheticItem {
                image,
                metal: g.metal_mask(spec.side, spec.side),
                mask,
                truth: g.analytic(),
                geometry: g,
            })
        })
        .collect()
}
