//! Classical image-processing primitives shared by annotation and metrology.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster};

/// Real-valued field on the pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimensions {
                width,
                height,
                channels: 1,
            });
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "field {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("field values must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Channel 0 of a raster. Callers convert color images to grayscale first.
    pub fn from_raster(image: &Raster) -> Self {
        let ch = image.channels();
        Self {
            width: image.width(),
            height: image.height(),
            data: image.data().iter().step_by(ch).copied().collect(),
        }
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            data: mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    fn at_reflect(&self, x: isize, y: isize) -> f32 {
        self.data[reflect(y, self.height) * self.width + reflect(x, self.width)]
    }

    /// Pixels strictly above `threshold`.
    pub fn threshold_above(&self, threshold: f32) -> BinaryMask {
        BinaryMask::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| v > threshold).collect(),
        )
        .expect("same dimensions")
    }
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total) as f32).collect()
}

/// Separable Gaussian blur, kernel truncated at `ceil(3 sigma)`, reflected borders.
pub fn gaussian_blur(field: &ScalarField, sigma: f64) -> Result<ScalarField> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (field.width, field.height);

    let mut horizontal = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (k, &kw) in kernel.iter().enumerate() {
                acc += kw * field.at_reflect(x as isize + k as isize - radius, y as isize);
            }
            horizontal[y * w + x] = acc;
        }
    }
    let tmp = ScalarField {
        width: w,
        height: h,
        data: horizontal,
    };
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (k, &kw) in kernel.iter().enumerate() {
                acc += kw * tmp.at_reflect(x as isize, y as isize + k as isize - radius);
            }
            out[y * w + x] = acc;
        }
    }
    Ok(ScalarField {
        width: w,
        height: h,
        data: out,
    })
}

/// Horizontal and vertical 3x3 Sobel responses with reflected borders.
///
/// `gx` is positive where values increase to the right, `gy` where they
/// increase downwards.
pub fn sobel_xy(field: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    if field.width < 3 || field.height < 3 {
        return Err(Error::InvalidParameter(format!(
            "sobel needs at least 3x3, got {}x{}",
            field.width, field.height
        )));
    }
    let (w, h) = (field.width, field.height);
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| field.at_reflect(x + dx, y + dy);
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            gx[i] = sx;
            gy[i] = sy;
        }
    }
    Ok((
        ScalarField {
            width: w,
            height: h,
            data: gx,
        },
        ScalarField {
            width: w,
            height: h,
            data: gy,
        },
    ))
}

/// Per-pixel `sqrt(gx^2 + gy^2)` of the Sobel responses.
pub fn sobel_magnitude(field: &ScalarField) -> Result<ScalarField> {
    let (gx, gy) = sobel_xy(field)?;
    Ok(ScalarField {
        width: gx.width,
        height: gx.height,
        data: gx
            .data
            .iter()
            .zip(&gy.data)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect(),
    })
}

/// Sobel gain for a unit-slope ramp; dividing by it turns the response into a
/// derivative estimate.
pub const SOBEL_GAIN: f32 = 8.0;

/// Edge-stopping energy `1 / sqrt(1 + alpha * |grad(G_sigma * I)|)`.
///
/// Values are 1 in flat regions and fall towards 0 on strong edges. The
/// gradient is the Sobel response scaled to a derivative estimate.
pub fn inverse_gradient_energy(image: &Raster, alpha: f64, sigma: f64) -> Result<ScalarField> {
    if image.channels() != 1 {
        return Err(Error::InvalidParameter(
            "energy field needs a grayscale image".into(),
        ));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let blurred = gaussian_blur(&ScalarField::from_raster(image), sigma)?;
    let magnitude = sobel_magnitude(&blurred)?;
    let alpha = alpha as f32;
    Ok(ScalarField {
        width: magnitude.width,
        height: magnitude.height,
        data: magnitude
            .data
            .iter()
            .map(|m| 1.0 / (1.0 + alpha * m / SOBEL_GAIN).sqrt())
            .collect(),
    })
}

const NEIGHBORS_4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

fn color_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f32>()
        .sqrt()
}

/// Connected colour thresholding.
///
/// Each seed grows its own 4-connected region of pixels whose colour lies
/// within `tolerance` (Euclidean distance in channel space) of that seed's
/// colour; the result is the union over seeds. Seeds sharing a colour are
/// grown together.
pub fn flood_fill_threshold(
    image: &Raster,
    seeds: &[(usize, usize)],
    tolerance: f32,
) -> Result<BinaryMask> {
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be non-negative, got {tolerance}"
        )));
    }
    let (w, h) = (image.width(), image.height());
    for &(x, y) in seeds {
        if x >= w || y >= h {
            return Err(Error::SeedOutOfBounds {
                x: x as f64,
                y: y as f64,
                width: w,
                height: h,
            });
        }
    }

    let mut groups: Vec<(Vec<u32>, Vec<usize>)> = Vec::new();
    let mut index_of: HashMap<Vec<u32>, usize> = HashMap::new();
    for &(x, y) in seeds {
        let key: Vec<u32> = image.pixel(x, y).iter().map(|v| v.to_bits()).collect();
        let gi = *index_of.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        groups[gi].1.push(y * w + x);
    }

    let mut out = vec![false; w * h];
    let mut visited = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (key, starts) in &groups {
        let reference: Vec<f32> = key.iter().map(|&b| f32::from_bits(b)).collect();
        visited.iter_mut().for_each(|v| *v = false);
        for &s in starts {
            if !visited[s] {
                visited[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(i) = queue.pop_front() {
            out[i] = true;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBORS_4 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if visited[j] {
                    continue;
                }
                visited[j] = true;
                if color_distance(image.pixel(nx as usize, ny as usize), &reference) <= tolerance {
                    queue.push_back(j);
                }
            }
        }
    }
    BinaryMask::new(w, h, out)
}

/// 4-connected region reachable from `seeds` through pixels set in `allowed`.
/// Seeds themselves are always included.
pub fn flood_region(allowed: &BinaryMask, seeds: &[(usize, usize)]) -> BinaryMask {
    let (w, h) = (allowed.width(), allowed.height());
    let mut out = BinaryMask::empty(w, h);
    let mut queue = VecDeque::new();
    for &(x, y) in seeds {
        if x < w && y < h && !out.get(x, y) {
            out.set(x, y, true);
            queue.push_back((x, y));
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in NEIGHBORS_4 {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if allowed.get_signed(nx, ny) && !out.get(nx as usize, ny as usize) {
                out.set(nx as usize, ny as usize, true);
                queue.push_back((nx as usize, ny as usize));
            }
        }
    }
    out
}

/// Labelled 8-connected components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub width: usize,
    pub height: usize,
    /// 0 for background, `k + 1` for the `k`-th component in row-major
    /// discovery order.
    pub labels: Vec<u32>,
    /// Pixel count of each component, indexed by `label - 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Label of the largest component; ties go to the earliest discovered.
    pub fn largest_label(&self) -> Option<u32> {
        let mut best: Option<(usize, usize)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i as u32 + 1)
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask::new(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l == label).collect(),
        )
        .expect("same dimensions")
    }
}

pub fn connected_components(mask: &BinaryMask) -> Components {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let mut size = 0usize;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBORS_8 {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    Components {
        width: w,
        height: h,
        labels,
        sizes,
    }
}

/// Largest 8-connected component, or an empty mask when there is none.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let comps = connected_components(mask);
    match comps.largest_label() {
        Some(l) => comps.mask_of(l),
        None => BinaryMask::empty(mask.width(), mask.height()),
    }
}

/// Flips enclosed background to foreground.
///
/// Background pixels that cannot reach the image border through
/// 4-connected background are holes. Border-connected background, including
/// pores that break through the boundary, stays untouched.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let background = mask.not();
    let mut border = Vec::new();
    for x in 0..w {
        border.push((x, 0));
        border.push((x, h - 1));
    }
    for y in 0..h {
        border.push((0, y));
        border.push((w - 1, y));
    }
    border.retain(|&(x, y)| background.get(x, y));
    let outside = flood_region(&background, &border);
    outside.not()
}

/// Binary dilation by the 3x3 square; out-of-bounds pixels are ignored.
pub fn dilate_square(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            || NEIGHBORS_8
                .iter()
                .any(|&(dx, dy)| mask.get_signed(x as isize + dx, y as isize + dy))
    })
}

/// Binary erosion by the 3x3 square; out-of-bounds pixels are ignored.
pub fn erode_square(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && NEIGHBORS_8.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || mask.get(nx as usize, ny as usize)
            })
    })
}

/// Otsu threshold over a field with values in `[0, 1]` (256 bins).
pub fn otsu_threshold(field: &ScalarField) -> f32 {
    let mut hist = [0u64; 256];
    for &v in &field.data {
        hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
    }
    let total = field.data.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w_b, mut sum_b) = (0f64, 0f64);
    let (mut best, mut best_t) = (-1f64, 0usize);
    for (t, &c) in hist.iter().enumerate() {
        w_b += c as f64;
        if w_b == 0.0 {
            continue;
        }
        let w_f = total - w_b;
        if w_f == 0.0 {
            break;
        }
        sum_b += t as f64 * c as f64;
        let m_b = sum_b / w_b;
        let m_f = (sum_all - sum_b) / w_f;
        let between = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    (best_t as f32 + 0.5) / 255.0
}
