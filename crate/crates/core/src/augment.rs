//! Paired image/mask augmentation.
//!
//! Rotation, shear, zoom and shift are folded into one affine map about the
//! image center and applied in a single resampling pass; flips follow the
//! affine map and gamma acts on intensities only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::reflect;
use crate::raster::{BinaryMask, Raster};

/// How samples that fall outside the source image are filled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    #[default]
    Reflect,
    /// Zero intensity and background.
    Constant,
    /// Clamp to the closest edge pixel.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Rotation is drawn from `[-rotation_max, rotation_max]` degrees.
    pub rotation_max: f64,
    /// Horizontal shift as a fraction of the width.
    pub width_shift: f64,
    /// Vertical shift as a fraction of the height.
    pub height_shift: f64,
    /// Shear angle bound in radians.
    pub shear_max: f64,
    pub zoom_range: [f64; 2],
    pub gamma_range: [f64; 2],
    pub p_vflip: f64,
    pub p_hflip: f64,
    pub fill: FillMode,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            rotation_max: 20.0,
            width_shift: 0.05,
            height_shift: 0.05,
            shear_max: 0.05,
            zoom_range: [0.95, 1.05],
            gamma_range: [0.2, 1.8],
            p_vflip: 0.5,
            p_hflip: 0.5,
            fill: FillMode::Reflect,
        }
    }
}

impl AugmentationConfig {
    /// A config whose every sample is the identity.
    pub fn identity() -> Self {
        Self {
            rotation_max: 0.0,
            width_shift: 0.0,
            height_shift: 0.0,
            shear_max: 0.0,
            zoom_range: [1.0, 1.0],
            gamma_range: [1.0, 1.0],
            p_vflip: 0.0,
            p_hflip: 0.0,
            fill: FillMode::Reflect,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("augmentation: {m}")));
        for (name, v) in [
            ("rotation_max", self.rotation_max),
            ("width_shift", self.width_shift),
            ("height_shift", self.height_shift),
            ("shear_max", self.shear_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, [lo, hi]) in [("zoom_range", self.zoom_range), ("gamma_range", self.gamma_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} must be a positive interval, got [{lo}, {hi}]"));
            }
        }
        for (name, p) in [("p_vflip", self.p_vflip), ("p_hflip", self.p_hflip)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledAugmentation {
    /// Degrees, positive is clockwise on screen (y points down).
    pub rotation: f64,
    pub dx: f64,
    pub dy: f64,
    /// Radians.
    pub shear: f64,
    pub zoom: f64,
    pub gamma: f64,
    pub vflip: bool,
    pub hflip: bool,
}

impl SampledAugmentation {
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            dx: 0.0,
            dy: 0.0,
            shear: 0.0,
            zoom: 1.0,
            gamma: 1.0,
            vflip: false,
            hflip: false,
        }
    }

    fn is_geometric_identity(&self) -> bool {
        self.rotation == 0.0 && self.dx == 0.0 && self.dy == 0.0 && self.shear == 0.0 && self.zoom == 1.0
    }

    /// Linear part `R * Shear * Zoom` as row-major 2x2.
    fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let (ss, sc) = self.shear.sin_cos();
        let z = self.zoom;
        // Shear = [[1, -sin(shear)], [0, cos(shear)]]
        [[c * z, (-c * ss - s * sc) * z], [s * z, (-s * ss + c * sc) * z]]
    }

    /// Where the source point `(x, y)` lands in the output image.
    pub fn transform_point(&self, width: usize, height: usize, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let m = self.linear();
        let (px, py) = (x - cx, y - cy);
        let mut ox = m[0][0] * px + m[0][1] * py + cx + self.dx * width as f64;
        let mut oy = m[1][0] * px + m[1][1] * py + cy + self.dy * height as f64;
        if self.hflip {
            ox = width as f64 - 1.0 - ox;
        }
        if self.vflip {
            oy = height as f64 - 1.0 - oy;
        }
        (ox, oy)
    }

    /// Source coordinate sampled for output pixel `(x, y)`.
    fn source_point(&self, inv: &[[f64; 2]; 2], width: usize, height: usize, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let x = if self.hflip { width as f64 - 1.0 - x } else { x };
        let y = if self.vflip { height as f64 - 1.0 - y } else { y };
        let qx = x - cx - self.dx * width as f64;
        let qy = y - cy - self.dy * height as f64;
        (inv[0][0] * qx + inv[0][1] * qy + cx, inv[1][0] * qx + inv[1][1] * qy + cy)
    }
}

pub fn sample(config: &AugmentationConfig, seed: u64) -> Result<SampledAugmentation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(config, &mut rng)
}

pub fn sample_with<R: Rng>(config: &AugmentationConfig, rng: &mut R) -> Result<SampledAugmentation> {
    config.validate()?;
    let mut sym = |b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
    let rotation = sym(config.rotation_max);
    let dx = sym(config.width_shift);
    let dy = sym(config.height_shift);
    let shear = sym(config.shear_max);
    let mut span = |[lo, hi]: [f64; 2]| if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let zoom = span(config.zoom_range);
    let gamma = span(config.gamma_range);
    let vflip = rng.random_bool(config.p_vflip);
    let hflip = rng.random_bool(config.p_hflip);
    Ok(SampledAugmentation {
        rotation,
        dx,
        dy,
        shear,
        zoom,
        gamma,
        vflip,
        hflip,
    })
}

fn invert(m: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::InvalidParameter("augmentation transform is singular".into()));
    }
    Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Resolves a possibly out-of-range integer index; `None` means constant fill.
fn resolve(i: isize, n: usize, fill: FillMode) -> Option<usize> {
    match fill {
        FillMode::Reflect => Some(reflect(i, n)),
        FillMode::Nearest => Some(i.clamp(0, n as isize - 1) as usize),
        FillMode::Constant => (0..n as isize).contains(&i).then_some(i as usize),
    }
}

pub fn apply(image: &Raster, mask: &BinaryMask, aug: &SampledAugmentation) -> Result<(Raster, BinaryMask)> {
    apply_with_fill(image, mask, aug, FillMode::Reflect)
}

pub fn apply_with_fill(
    image: &Raster,
    mask: &BinaryMask,
    aug: &SampledAugmentation,
    fill: FillMode,
) -> Result<(Raster, BinaryMask)> {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    if mask.width() != w || mask.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "image {w}x{h} vs mask {}x{}",
            mask.width(),
            mask.height()
        )));
    }
    if !(aug.gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", aug.gamma)));
    }
    let inv = invert(aug.linear())?;
    let exact = aug.is_geometric_identity();

    let mut data = vec![0f32; w * h * ch];
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = aug.source_point(&inv, w, h, x as f64, y as f64);
            let out = &mut data[(y * w + x) * ch..(y * w + x + 1) * ch];
            if exact {
                let (ix, iy) = (sx.round() as usize, sy.round() as usize);
                out.copy_from_slice(image.pixel(ix, iy));
                bits[y * w + x] = mask.get(ix, iy);
                continue;
            }

            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1, y0, fx * (1.0 - fy)),
                (x0, y0 + 1, (1.0 - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            for (tx, ty, wt) in taps {
                if wt == 0.0 {
                    continue;
                }
                if let (Some(ix), Some(iy)) = (resolve(tx, w, fill), resolve(ty, h, fill)) {
                    for (o, v) in out.iter_mut().zip(image.pixel(ix, iy)) {
                        *o += wt * v;
                    }
                }
            }

            let (nx, ny) = (sx.round() as isize, sy.round() as isize);
            bits[y * w + x] = match (resolve(nx, w, fill), resolve(ny, h, fill)) {
                (Some(ix), Some(iy)) => mask.get(ix, iy),
                _ => false,
            };
        }
    }
    if aug.gamma != 1.0 {
        let g = aug.gamma as f32;
        for v in &mut data {
            *v = v.clamp(0.0, 1.0).powf(g);
        }
    } else {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok((Raster::new(w, h, ch, data)?, BinaryMask::new(w, h, bits)?))
}

/// Per-item generator for augmented copy `j` of pair `i`.
pub fn item_rng(seed: u64, i: usize, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((i as u64) << 32) | j as u64);
    rng
}

/// Originals followed by `per_image` augmented copies of each pair, in
/// pair-major order. Output is independent of thread scheduling.
pub fn expand_dataset(
    pairs: &[(Raster, BinaryMask)],
    per_image: usize,
    config: &AugmentationConfig,
    seed: u64,
) -> Result<Vec<(Raster, BinaryMask)>> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..pairs.len())
        .flat_map(|i| (0..per_image).map(move |j| (i, j)))
        .collect();
    let augmented = jobs
        .par_iter()
        .map(|&(i, j)| {
            let aug = sample_with(config, &mut item_rng(seed, i, j))?;
            apply_with_fill(&pairs[i].0, &pairs[i].1, &aug, config.fill)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(pairs.len() * (1 + per_image));
    out.extend(pairs.iter().cloned());
    out.extend(augmented);
    Ok(out)
}
