//! Morphological geodesic active contours.
//!
//! Curve evolution is carried out entirely with binary morphology on the
//! level-set indicator: a gated balloon step, an attraction step that pushes
//! the front down the energy gradient, and alternating sup-inf / inf-sup
//! curvature smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{dilate_square, erode_square, ScalarField};
use crate::raster::BinaryMask;

/// Consecutive unchanged iterations after which evolution stops early.
pub const STALL_LIMIT: usize = 3;

/// Hyperparameters of one contour evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgacParams {
    /// Blur applied before edge detection when building the energy field.
    pub sigma: f64,
    /// Edge sharpness of the energy field.
    pub alpha: f64,
    /// Signed balloon force: positive grows, negative shrinks, zero disables.
    pub balloon: f32,
    /// Curvature smoothing passes per iteration, 0..=4.
    pub smoothing: u32,
    /// The balloon only acts where `energy > threshold / |balloon|`.
    pub threshold: f32,
    pub iterations: usize,
}

impl MgacParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("mgac: {m}")));
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if self.smoothing > 4 {
            return bad("smoothing must be in 0..=4");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must be in [0, 1]");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !self.balloon.is_finite() {
            return bad("balloon must be finite");
        }
        Ok(())
    }
}

/// Centered differences in the interior, one-sided at the borders.
fn gradient(values: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if w == 1 {
                0.0
            } else if x == 0 {
                values[i + 1] - values[i]
            } else if x == w - 1 {
                values[i] - values[i - 1]
            } else {
                (values[i + 1] - values[i - 1]) * 0.5
            };
            gy[i] = if h == 1 {
                0.0
            } else if y == 0 {
                values[i + w] - values[i]
            } else if y == h - 1 {
                values[i] - values[i - w]
            } else {
                (values[i + w] - values[i - w]) * 0.5
            };
        }
    }
    (gx, gy)
}

// Three-pixel line segments through the center: horizontal, vertical and the
// two diagonals.
const SEGMENTS: [[(isize, isize); 2]; 4] = [
    [(-1, 0), (1, 0)],
    [(0, -1), (0, 1)],
    [(-1, -1), (1, 1)],
    [(-1, 1), (1, -1)],
];

/// Value at `(x, y)` combined with the in-bounds segment ends.
fn segment_all(m: &BinaryMask, x: usize, y: usize, seg: &[(isize, isize); 2]) -> bool {
    m.get(x, y)
        && seg.iter().all(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            nx < 0 || ny < 0 || nx >= m.width() as isize || ny >= m.height() as isize || m.get(nx as usize, ny as usize)
        })
}

fn segment_any(m: &BinaryMask, x: usize, y: usize, seg: &[(isize, isize); 2]) -> bool {
    m.get(x, y)
        || seg
            .iter()
            .any(|&(dx, dy)| m.get_signed(x as isize + dx, y as isize + dy))
}

/// Supremum of erosions by the four line segments.
pub fn sup_inf(m: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        SEGMENTS.iter().any(|s| segment_all(m, x, y, s))
    })
}

/// Infimum of dilations by the four line segments.
pub fn inf_sup(m: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        SEGMENTS.iter().all(|s| segment_any(m, x, y, s))
    })
}

/// Result of an evolution together with optional progress snapshots.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub mask: BinaryMask,
    pub iterations_run: usize,
    /// `(iteration, mask)` pairs, recorded every `snapshot_every` iterations.
    pub snapshots: Vec<(usize, BinaryMask)>,
}

pub fn evolve_mgac(energy: &ScalarField, init: &BinaryMask, params: &MgacParams) -> Result<BinaryMask> {
    Ok(evolve_mgac_recorded(energy, init, params, None)?.mask)
}

/// Runs the evolution, optionally recording the mask every `snapshot_every`
/// iterations (the initial mask is recorded as iteration 0).
pub fn evolve_mgac_recorded(
    energy: &ScalarField,
    init: &BinaryMask,
    params: &MgacParams,
    snapshot_every: Option<usize>,
) -> Result<Evolution> {
    params.validate()?;
    let (w, h) = (energy.width(), energy.height());
    if init.width() != w || init.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "energy {w}x{h} vs initial mask {}x{}",
            init.width(),
            init.height()
        )));
    }
    if init.is_empty() {
        return Err(Error::InvalidParameter("initial contour is empty".into()));
    }

    let (egx, egy) = gradient(energy.data(), w, h);
    let balloon_gate: Vec<bool> = if params.balloon != 0.0 {
        let t = params.threshold / params.balloon.abs();
        energy.data().iter().map(|&e| e > t).collect()
    } else {
        Vec::new()
    };

    let mut u = init.clone();
    let mut snapshots = Vec::new();
    let every = snapshot_every.filter(|&k| k > 0);
    if every.is_some() {
        snapshots.push((0, u.clone()));
    }
    let mut stalled = 0usize;
    let mut curvature_phase = false;
    let mut iterations_run = 0;

    for iter in 1..=params.iterations {
        let before = u.clone();

        if params.balloon != 0.0 {
            let grown = if params.balloon > 0.0 {
                dilate_square(&u)
            } else {
                erode_square(&u)
            };
            let mut data = u.data().to_vec();
            for (i, v) in data.iter_mut().enumerate() {
                if balloon_gate[i] {
                    *v = grown.data()[i];
                }
            }
            u = BinaryMask::new(w, h, data)?;
        }

        let level: Vec<f32> = u.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let (ugx, ugy) = gradient(&level, w, h);
        let mut data = u.data().to_vec();
        for i in 0..w * h {
            let aux = egx[i] * ugx[i] + egy[i] * ugy[i];
            if aux > 0.0 {
                data[i] = true;
            } else if aux < 0.0 {
                data[i] = false;
            }
        }
        u = BinaryMask::new(w, h, data)?;

        for _ in 0..params.smoothing {
            u = if curvature_phase {
                inf_sup(&sup_inf(&u))
            } else {
                sup_inf(&inf_sup(&u))
            };
            curvature_phase = !curvature_phase;
        }

        iterations_run = iter;
        if let Some(k) = every {
            if iter % k == 0 {
                snapshots.push((iter, u.clone()));
            }
        }
        if u == before {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(Evolution {
        mask: u,
        iterations_run,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(balloon: f32, smoothing: u32, threshold: f32, iterations: usize) -> MgacParams {
        MgacParams {
            sigma: 2.0,
            alpha: 100.0,
            balloon,
            smoothing,
            threshold,
            iterations,
        }
    }

    fn square_seed(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
        })
    }

    #[test]
    fn no_force_no_motion() {
        let energy = ScalarField::constant(20, 20, 1.0);
        let init = square_seed(20, 20, 5, 5, 4);
        let out = evolve_mgac(&energy, &init, &params(0.0, 0, 0.3, 1)).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn flat_energy_grows_to_full_frame() {
        let (w, h) = (40, 30);
        let energy = ScalarField::constant(w, h, 1.0);
        let init = square_seed(w, h, 3, 4, 2);
        let evo = evolve_mgac_recorded(&energy, &init, &params(1.0, 0, 0.9, w + h), None).unwrap();
        assert_eq!(evo.mask, BinaryMask::full(w, h));
        assert!(evo.iterations_run <= w + h);
    }

    #[test]
    fn balloon_only_growth_is_monotone() {
        // Energy falls off radially, so attraction never opposes the balloon.
        let energy = ScalarField::from_fn(48, 48, |x, y| {
            let d = ((x as f32 - 24.0).powi(2) + (y as f32 - 24.0).powi(2)).sqrt();
            1.0 / (1.0 + d / 10.0)
        });
        let init = square_seed(48, 48, 22, 22, 4);
        let evo = evolve_mgac_recorded(&energy, &init, &params(1.0, 0, 0.0, 40), Some(1)).unwrap();
        for pair in evo.snapshots.windows(2) {
            let (a, b) = (&pair[0].1, &pair[1].1);
            assert!(a.is_subset_of(b), "iteration {} shrank", pair[1].0);
        }
    }

    #[test]
    fn snapshots_follow_interval() {
        let energy = ScalarField::constant(30, 30, 1.0);
        let init = square_seed(30, 30, 14, 14, 2);
        let evo = evolve_mgac_recorded(&energy, &init, &params(1.0, 1, 0.3, 60), Some(5)).unwrap();
        let iters: Vec<usize> = evo.snapshots.iter().map(|s| s.0).collect();
        assert_eq!(iters[0], 0);
        assert!(iters.windows(2).all(|p| p[1] - p[0] == 5));
    }

    #[test]
    fn rejects_bad_inputs() {
        let energy = ScalarField::constant(10, 10, 1.0);
        let empty = BinaryMask::empty(10, 10);
        assert!(evolve_mgac(&energy, &empty, &params(1.0, 0, 0.3, 5)).is_err());
        let wrong = square_seed(11, 10, 2, 2, 2);
        assert!(evolve_mgac(&energy, &wrong, &params(1.0, 0, 0.3, 5)).is_err());
        let init = square_seed(10, 10, 2, 2, 2);
        assert!(evolve_mgac(&energy, &init, &params(1.0, 5, 0.3, 5)).is_err());
        assert!(evolve_mgac(&energy, &init, &params(1.0, 0, 0.3, 0)).is_err());
    }

    #[test]
    fn curvature_operators_remove_spurs_and_pits() {
        let mut m = square_seed(15, 15, 4, 4, 7);
        m.set(7, 3, true); // one-pixel spur above the square
        assert!(!sup_inf(&m).get(7, 3));
        let mut pit = square_seed(15, 15, 4, 4, 7);
        pit.set(7, 4, false); // one-pixel notch in the top edge
        assert!(inf_sup(&pit).get(7, 4));
        let full = BinaryMask::full(9, 9);
        assert_eq!(sup_inf(&inf_sup(&full)), full);
    }
}
