use serde::{Deserialize, Serialize};

use super::baseline::Baseline;
use super::surface::BBox;
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Smallest distance scale of the tangent-fit weights, in pixels.
pub const ARC_WINDOW: f64 = 9.0;
const MIN_POINTS: usize = 5;
/// Edge midpoints closer than this to the baseline belong to neither branch.
const BASELINE_BAND: f64 = 0.25;

/// Width, height above the baseline and depth below it, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub width: f64,
    pub height: f64,
    pub depth: f64,
}

/// Width is the bounding-box column count. Height and depth are the largest
/// pixel extents above and below the baseline, compared column by column.
pub fn dims(pool: &BinaryMask, baseline: &Baseline, bbox: &BBox) -> Dims {
    let (mut height, mut depth) = (0f64, 0f64);
    for (x, y) in pool.iter_foreground() {
        let b = baseline.row_at(x as f64);
        height = height.max(b - (y as f64 - 0.5));
        depth = depth.max((y as f64 + 0.5) - b);
    }
    Dims {
        width: bbox.width() as f64,
        height,
        depth,
    }
}

/// Surface contact points of the pool, `(x, y)` in continuous coordinates.
///
/// The left (right) point lies on the outer edge of the first (last) bbox
/// column whose topmost metal pixel belongs to the pool, at the baseline row.
pub fn tangent_points(
    pool: &BinaryMask,
    metal: &BinaryMask,
    bbox: &BBox,
    baseline: &Baseline,
) -> Result<((f64, f64), (f64, f64))> {
    if bbox.width() < 3 {
        return Err(Error::InvalidParameter(format!(
            "melt pool is only {} px wide",
            bbox.width()
        )));
    }
    let h = metal.height();
    let meets = |x: usize| (0..h).find(|&y| metal.get(x, y)).is_some_and(|y| pool.get(x, y));
    let cols: Vec<usize> = (bbox.x0..=bbox.x1).filter(|&x| meets(x)).collect();
    let (Some(&l), Some(&r)) = (cols.first(), cols.last()) else {
        return Err(Error::InvalidParameter("surface never meets the melt pool".into()));
    };
    let xl = l as f64 - 0.5;
    let xr = r as f64 + 0.5;
    Ok(((xl, baseline.row_at(xl)), (xr, baseline.row_at(xr))))
}

/// Midpoints of pixel edges separating pool from non-pool.
pub fn boundary_midpoints(pool: &BinaryMask) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (x, y) in pool.iter_foreground() {
        let (xi, yi) = (x as isize, y as isize);
        let (xf, yf) = (x as f64, y as f64);
        if !pool.get_signed(xi - 1, yi) {
            out.push((xf - 0.5, yf));
        }
        if !pool.get_signed(xi + 1, yi) {
            out.push((xf + 0.5, yf));
        }
        if !pool.get_signed(xi, yi - 1) {
            out.push((xf, yf - 0.5));
        }
        if !pool.get_signed(xi, yi + 1) {
            out.push((xf, yf + 0.5));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The cap above the baseline.
    Above,
    /// The wall below the baseline.
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFit {
    /// Unit tangent at the contact, pointing into the branch.
    pub direction: (f64, f64),
    /// Where the fitted curve meets the baseline.
    pub contact: (f64, f64),
    /// Radius of the fitted circle; infinite for a straight fit.
    pub radius: f64,
    pub points: usize,
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-12 * (1.0 + a[0][0] * a[1][1] * a[2][2]).abs() {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        *o = det(m) / d;
    }
    Some(out)
}

/// Weighted least-squares normal equations `J^T W J x = J^T W r`.
fn normal_solve(rows: impl Iterator<Item = ([f64; 3], f64, f64)>) -> Option<[f64; 3]> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (j, r, w) in rows {
        for i in 0..3 {
            for k in 0..3 {
                ata[i][k] += w * j[i] * j[k];
            }
            atb[i] += w * j[i] * r;
        }
    }
    solve3(ata, atb)
}

/// Weighted geometric circle fit: algebraic start, then Gauss-Newton on
/// the radial residuals. Returns `(cx, cy, r)`.
fn fit_circle(pts: &[(f64, f64)], weights: &[f64]) -> Option<(f64, f64, f64)> {
    let rows = pts
        .iter()
        .zip(weights)
        .map(|(&(x, y), &w)| ([x, y, 1.0], x * x + y * y, w));
    let c = normal_solve(rows)?;
    let (mut a, mut b) = (c[0] / 2.0, c[1] / 2.0);
    let mut r = (c[2] + a * a + b * b).sqrt();
    if !r.is_finite() {
        return None;
    }
    for _ in 0..50 {
        let rows = pts.iter().zip(weights).map(|(&(x, y), &w)| {
            let (dx, dy) = (x - a, y - b);
            let d = dx.hypot(dy).max(1e-12);
            ([dx / d, dy / d, 1.0], d - r, w)
        });
        let step = normal_solve(rows)?;
        a += step[0];
        b += step[1];
        r += step[2];
        if step.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-10 {
            break;
        }
    }
    (a.is_finite() && b.is_finite() && r.is_finite() && r > 0.0).then_some((a, b, r))
}

/// Weighted principal direction.
fn fit_line(pts: &[(f64, f64)], weights: &[f64]) -> (f64, f64) {
    let sw: f64 = weights.iter().sum();
    let (mx, my) = pts
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |acc, (q, w)| (acc.0 + w * q.0 / sw, acc.1 + w * q.1 / sw));
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for (q, w) in pts.iter().zip(weights) {
        let (dx, dy) = (q.0 - mx, q.1 - my);
        cxx += w * dx * dx;
        cxy += w * dx * dy;
        cyy += w * dy * dy;
    }
    let theta = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    (theta.cos(), theta.sin())
}

/// Tangent of one boundary branch where it meets the baseline near `p`.
///
/// Every boundary midpoint of the branch takes part, weighted by
/// `exp(-(dist / scale)^2)` with `dist` measured from `p`. A circle is fitted
/// by weighted geometric least squares and intersected with the baseline;
/// nearly straight branches fall back to a weighted line through `p`.
pub fn boundary_tangent(
    boundary: &[(f64, f64)],
    p: (f64, f64),
    branch: Branch,
    baseline: &Baseline,
    scale: f64,
) -> Option<TangentFit> {
    let pts: Vec<(f64, f64)> = boundary
        .iter()
        .copied()
        .filter(|&(x, y)| {
            let off = y - baseline.row_at(x);
            match branch {
                Branch::Above => off < -BASELINE_BAND,
                Branch::Below => off > BASELINE_BAND,
            }
        })
        .collect();
    if pts.len() < MIN_POINTS {
        return None;
    }
    let weights: Vec<f64> = pts
        .iter()
        .map(|&(x, y)| (-((x - p.0).hypot(y - p.1) / scale).powi(2)).exp())
        .collect();
    let support: f64 = weights.iter().sum();
    if support < MIN_POINTS as f64 * 0.25 {
        return None;
    }

    // Upward normal of the baseline (rows grow downward).
    let up = {
        let l = baseline.slope.hypot(1.0);
        (baseline.slope / l, -1.0 / l)
    };
    let orient = |t: (f64, f64)| {
        let s = t.0 * up.0 + t.1 * up.1;
        let flip = match branch {
            Branch::Above => s < 0.0,
            Branch::Below => s > 0.0,
        };
        if flip {
            (-t.0, -t.1)
        } else {
            t
        }
    };

    let circle = fit_circle(&pts, &weights).filter(|&(_, _, r)| r < 1e4);
    let Some((a, b, r)) = circle else {
        return Some(TangentFit {
            direction: orient(fit_line(&pts, &weights)),
            contact: p,
            radius: f64::INFINITY,
            points: pts.len(),
        });
    };

    // Intersect (x - a)^2 + (m x + c - b)^2 = r^2 with the baseline.
    let (m, c) = (baseline.slope, baseline.intercept);
    let qa = 1.0 + m * m;
    let qb = 2.0 * (m * (c - b) - a);
    let qc = a * a + (c - b) * (c - b) - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    let contact = if disc >= 0.0 {
        let s = disc.sqrt();
        let x = [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)]
            .into_iter()
            .min_by(|u, v| (u - p.0).abs().total_cmp(&(v - p.0).abs()))
            .expect("two roots");
        (x, baseline.row_at(x))
    } else {
        let (dx, dy) = (p.0 - a, p.1 - b);
        let d = dx.hypot(dy).max(1e-12);
        (a + r * dx / d, b + r * dy / d)
    };
    let radial = (contact.0 - a, contact.1 - b);
    let len = radial.0.hypot(radial.1).max(1e-12);
    Some(TangentFit {
        direction: orient((-radial.1 / len, radial.0 / len)),
        contact,
        radius: r,
        points: pts.len(),
    })
}

fn angle_between(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dot = (a.0 * b.0 + a.1 * b.1) / (a.0.hypot(a.1) * b.0.hypot(b.1));
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Wetting and wall angles at one contact point, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SideAngles {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub failed: bool,
}

/// Wetting angle: between the baseline direction pointing into the pool and
/// the cap tangent. Wall angle: between the baseline direction pointing away
/// from the pool and the wall tangent. `has_cap` / `has_wall` say whether the
/// pool extends above / below the baseline at all.
pub fn side_angles(
    boundary: &[(f64, f64)],
    p: (f64, f64),
    side: Side,
    baseline: &Baseline,
    scale: f64,
    has_cap: bool,
    has_wall: bool,
) -> SideAngles {
    let along = {
        let l = baseline.slope.hypot(1.0);
        (1.0 / l, baseline.slope / l)
    };
    let inward = match side {
        Side::Left => along,
        Side::Right => (-along.0, -along.1),
    };
    let outward = (-inward.0, -inward.1);
    let mut out = SideAngles::default();
    for (branch, wanted) in [(Branch::Above, has_cap), (Branch::Below, has_wall)] {
        if !wanted {
            continue;
        }
        match boundary_tangent(boundary, p, branch, baseline, scale) {
            Some(fit) => match branch {
                Branch::Above => out.alpha = Some(angle_between(inward, fit.direction)),
                Branch::Below => out.beta = Some(angle_between(outward, fit.direction)),
            },
            None => out.failed = true,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(row: f64) -> Baseline {
        Baseline::horizontal(row, (0, 0), false)
    }

    #[test]
    fn dims_of_disk_on_baseline() {
        // Disk of radius 50 centred on the baseline row 99.5, columns centred on 99.5.
        let pool = BinaryMask::from_fn(220, 220, |x, y| (x as f64 - 99.5).hypot(y as f64 - 99.5) <= 50.0);
        let bbox = super::super::surface::melt_bbox(&pool).unwrap();
        let d = dims(&pool, &flat(99.5), &bbox);
        assert!((d.width - 100.0).abs() <= 1.0, "{d:?}");
        assert!((d.height - 50.0).abs() <= 1.0, "{d:?}");
        assert!((d.depth - 50.0).abs() <= 1.0, "{d:?}");
    }

    #[test]
    fn dims_one_sided() {
        let below = BinaryMask::from_fn(40, 40, |x, y| (10..30).contains(&x) && (20..30).contains(&y));
        let bbox = BBox { x0: 10, y0: 20, x1: 29, y1: 29 };
        let d = dims(&below, &flat(19.5), &bbox);
        assert_eq!((d.width, d.height, d.depth), (20.0, 0.0, 10.0));
        let d = dims(&below, &flat(29.5), &bbox);
        assert_eq!((d.height, d.depth), (10.0, 0.0));
    }

    #[test]
    fn tangent_points_by_scan() {
        // 20x20 frame; substrate rows >= 12; cap of rows 8..12 over columns 6..=13.
        let pool = BinaryMask::from_fn(20, 20, |x, y| {
            ((6..=13).contains(&x) && (8..12).contains(&y)) || ((5..=14).contains(&x) && (12..16).contains(&y))
        });
        let metal = BinaryMask::from_fn(20, 20, |x, y| y >= 12 || pool.get(x, y));
        let bbox = super::super::surface::melt_bbox(&pool).unwrap();
        assert_eq!((bbox.x0, bbox.x1), (5, 14));
        let (l, r) = tangent_points(&pool, &metal, &bbox, &flat(11.5)).unwrap();
        // Brute force: columns whose topmost metal pixel is pool.
        let cols: Vec<usize> = (0..20)
            .filter(|&x| {
                let top = (0..20).find(|&y| metal.get(x, y)).unwrap();
                pool.get(x, top)
            })
            .collect();
        assert_eq!(l, (*cols.first().unwrap() as f64 - 0.5, 11.5));
        assert_eq!(r, (*cols.last().unwrap() as f64 + 0.5, 11.5));
    }

    #[test]
    fn narrow_pool_rejected() {
        let pool = BinaryMask::from_fn(10, 10, |x, y| x == 4 && y > 3);
        let bbox = super::super::surface::melt_bbox(&pool).unwrap();
        assert!(tangent_points(&pool, &pool, &bbox, &flat(3.5)).is_err());
    }

    #[test]
    fn boundary_of_single_pixel() {
        let mut m = BinaryMask::empty(3, 3);
        m.set(1, 1, true);
        let mut b = boundary_midpoints(&m);
        b.sort_by(|a, c| a.partial_cmp(c).unwrap());
        assert_eq!(b, vec![(0.5, 1.0), (1.0, 0.5), (1.0, 1.5), (1.5, 1.0)]);
    }

    #[test]
    fn straight_wedge_angles() {
        // Cap bounded by a line at 45 degrees rising from (20, 49.5).
        let base = flat(49.5);
        let pool = BinaryMask::from_fn(100, 100, |x, y| {
            let (xf, yf) = (x as f64, y as f64);
            yf < 49.5 && yf > 20.0 && (49.5 - yf) <= (xf - 19.5) && xf < 70.0
        });
        let pts = boundary_midpoints(&pool);
        let a = side_angles(&pts, (19.5, 49.5), Side::Left, &base, ARC_WINDOW, true, false);
        let alpha = a.alpha.unwrap();
        assert!((alpha - 45.0).abs() < 3.0, "alpha {alpha}");
        assert!(a.beta.is_none() && !a.failed);
    }
}
