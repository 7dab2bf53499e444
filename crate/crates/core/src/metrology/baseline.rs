use serde::{Deserialize, Serialize};

use super::surface::{BBox, SurfaceProfile};
use crate::error::{Error, Result};

/// Minimum flank window width in pixels.
pub const MIN_FLANK: usize = 20;
/// Valid profile columns required on each flank for a sloped fit.
pub const MIN_FLANK_COLUMNS: usize = 5;
/// Fits steeper than this are rejected.
pub const MAX_SLOPE: f64 = 0.5;

/// Substrate surface line `row = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub slope: f64,
    /// Row at column 0.
    pub intercept: f64,
    /// Column interval the fit drew from, inclusive.
    pub window: (usize, usize),
    /// Set when the flanks could not support a line fit and a horizontal
    /// fallback was used.
    pub low_confidence: bool,
}

impl Baseline {
    pub fn horizontal(row: f64, window: (usize, usize), low_confidence: bool) -> Self {
        Self {
            slope: 0.0,
            intercept: row,
            window,
            low_confidence,
        }
    }

    pub fn row_at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Least-squares line through the surface profile on two windows flanking
/// the bounding box.
///
/// Each window is `max(20, bbox width / 2)` columns wide. When either flank
/// has fewer than five valid columns, or the fitted line is steeper than
/// 0.5, the horizontal line through a flank median with the lowest RMS over
/// the flank points is used instead and the result is marked low-confidence.
pub fn fit_baseline(profile: &SurfaceProfile, bbox: &BBox) -> Result<Baseline> {
    let w = profile.width();
    if bbox.x1 >= w {
        return Err(Error::DimensionMismatch(format!(
            "bounding box reaches column {} but the profile has {w}",
            bbox.x1
        )));
    }
    let fw = MIN_FLANK.max(bbox.width() / 2);
    let left_lo = bbox.x0.saturating_sub(fw);
    let right_hi = (bbox.x1 + fw).min(w - 1);
    let left: Vec<(f64, f64)> = (left_lo..bbox.x0)
        .filter_map(|x| profile.get(x).map(|r| (x as f64, r)))
        .collect();
    let right: Vec<(f64, f64)> = (bbox.x1 + 1..=right_hi)
        .filter_map(|x| profile.get(x).map(|r| (x as f64, r)))
        .collect();
    let window = (left_lo, right_hi);

    if left.len() >= MIN_FLANK_COLUMNS && right.len() >= MIN_FLANK_COLUMNS {
        let pts: Vec<(f64, f64)> = left.iter().chain(&right).copied().collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        if slope.abs() < MAX_SLOPE {
            return Ok(Baseline {
                slope,
                intercept: my - slope * mx,
                window,
                low_confidence: false,
            });
        }
        log::warn!("baseline slope {slope:.3} too steep; using horizontal fallback");
    }

    let flank: Vec<f64> = left.iter().chain(&right).map(|p| p.1).collect();
    let mut candidates = Vec::new();
    for side in [&left, &right] {
        let mut rows: Vec<f64> = side.iter().map(|p| p.1).collect();
        candidates.extend(median(&mut rows));
    }
    let row = if candidates.is_empty() {
        let mut edges: Vec<f64> = [bbox.x0, bbox.x1].iter().filter_map(|&x| profile.get(x)).collect();
        median(&mut edges).ok_or_else(|| Error::InvalidParameter("no surface near the melt pool".into()))?
    } else {
        let rms = |c: f64| flank.iter().map(|r| (r - c).powi(2)).sum::<f64>();
        candidates
            .into_iter()
            .min_by(|a, b| rms(*a).total_cmp(&rms(*b)))
            .expect("non-empty")
    };
    Ok(Baseline::horizontal(row, window, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(w: usize, f: impl Fn(usize) -> Option<f64>) -> SurfaceProfile {
        SurfaceProfile {
            rows: (0..w).map(f).collect(),
        }
    }

    fn bbox(x0: usize, x1: usize) -> BBox {
        BBox { x0, y0: 50, x1, y1: 120 }
    }

    #[test]
    fn flat_substrate() {
        let p = profile(300, |x| Some(if (120..180).contains(&x) { 60.0 } else { 100.0 }));
        let b = fit_baseline(&p, &bbox(120, 179)).unwrap();
        assert!(b.slope.abs() < 1e-12);
        assert!((b.intercept - 100.0).abs() < 1e-9);
        assert!(!b.low_confidence);
        assert_eq!(b.window, (90, 209));
    }

    #[test]
    fn sloped_substrate() {
        let p = profile(400, |x| {
            Some(if (150..230).contains(&x) { 40.0 } else { 0.03 * x as f64 + 80.0 })
        });
        let b = fit_baseline(&p, &bbox(150, 229)).unwrap();
        assert!((b.slope - 0.03).abs() < 0.005);
        assert!((b.intercept - 80.0).abs() < 1.0);
    }

    #[test]
    fn cap_columns_excluded() {
        let p = profile(200, |x| Some(if (80..120).contains(&x) { 10.0 } else { 100.0 }));
        let b = fit_baseline(&p, &bbox(80, 119)).unwrap();
        assert_eq!(b.row_at(100.0), 100.0);
    }

    #[test]
    fn pool_at_left_border_falls_back() {
        let p = profile(200, |x| Some(if x < 60 { 30.0 } else { 100.0 + (x % 3) as f64 }));
        let b = fit_baseline(&p, &bbox(0, 59)).unwrap();
        assert!(b.low_confidence);
        assert_eq!(b.slope, 0.0);
        assert!((b.intercept - 101.0).abs() < 1e-9);
    }

    #[test]
    fn fallback_prefers_lower_rms_median() {
        // Left flank has 3 columns at 90, right flank has 30 columns at 100.
        let p = profile(100, |x| match x {
            0..=2 => Some(90.0),
            3..=49 => Some(20.0),
            _ => Some(100.0),
        });
        let b = fit_baseline(&p, &bbox(3, 49)).unwrap();
        assert!(b.low_confidence);
        assert_eq!(b.intercept, 100.0);
    }
}
