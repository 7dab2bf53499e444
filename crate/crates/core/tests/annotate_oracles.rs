use meltpool_core::annotate::{generate_candidates, wand_select, BrushStroke, SeedEllipse, CANDIDATE_COUNT};
use meltpool_core::metrics::{confusion, score_pair};
use meltpool_core::raster::{BinaryMask, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Grid of a few flat regions with noise, in one or three channels.
fn region_grid(rng: &mut ChaCha8Rng, side: usize) -> Raster {
    let channels = if rng.random_bool(0.5) { 1 } else { 3 };
    let cuts: Vec<usize> = (0..3).map(|_| rng.random_range(0..side)).collect();
    let levels: Vec<f32> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut data = Vec::with_capacity(side * side * channels);
    for y in 0..side {
        for x in 0..side {
            let region = (x > cuts[0]) as usize + 2 * (y > cuts[1]) as usize + 4 * (x + y > cuts[2] + side / 2) as usize;
            for _ in 0..channels {
                let jitter: f32 = if rng.random_bool(0.2) { rng.random_range(-0.1..0.1) } else { 0.0 };
                data.push((levels[region] + jitter).clamp(0.0, 1.0));
            }
        }
    }
    Raster::new(side, side, channels, data).unwrap()
}

/// Repeated relaxation until nothing changes: one region per painted pixel.
fn oracle(image: &Raster, seeds: &[(usize, usize)], tol: f32) -> BinaryMask {
    let (w, h) = (image.width(), image.height());
    let mut out = BinaryMask::empty(w, h);
    for &(sx, sy) in seeds {
        let reference = image.pixel(sx, sy).to_vec();
        let near = |x: usize, y: usize| {
            let d: f32 = image.pixel(x, y).iter().zip(&reference).map(|(a, b)| (a - b) * (a - b)).sum();
            d.sqrt() <= tol
        };
        let mut reached = BinaryMask::empty(w, h);
        reached.set(sx, sy, true);
        loop {
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    if reached.get(x, y) || !near(x, y) {
                        continue;
                    }
                    let touches = (x > 0 && reached.get(x - 1, y))
                        || (x + 1 < w && reached.get(x + 1, y))
                        || (y > 0 && reached.get(x, y - 1))
                        || (y + 1 < h && reached.get(x, y + 1));
                    if touches {
                        reached.set(x, y, true);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        out = out.union(&reached).unwrap();
    }
    out
}

fn random_strokes(rng: &mut ChaCha8Rng, side: usize) -> Vec<BrushStroke> {
    (0..rng.random_range(1..3))
        .map(|_| BrushStroke {
            points: (0..rng.random_range(1..4))
                .map(|_| [rng.random_range(0.0..side as f64), rng.random_range(0.0..side as f64)])
                .collect(),
            radius: rng.random_range(1.0..2.5),
        })
        .collect()
}

#[test]
fn wand_matches_relaxation_oracle_and_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let image = region_grid(&mut rng, 16);
        let strokes = random_strokes(&mut rng, 16);
        let seeds = meltpool_core::annotate::stroke_seeds(&strokes, 16, 16).unwrap();
        let mut previous: Option<BinaryMask> = None;
        for tol in [0.0, 0.05, 0.15, 0.4] {
            let got = wand_select(&image, &strokes, tol, None).unwrap();
            assert_eq!(got, oracle(&image, &seeds, tol), "case {case} tolerance {tol}");
            for &(x, y) in &seeds {
                assert!(got.get(x, y));
            }
            if let Some(p) = &previous {
                assert!(p.is_subset_of(&got), "case {case} tolerance {tol}");
            }
            previous = Some(got);
        }
    }
}

#[test]
fn wand_accumulates_onto_existing_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let image = region_grid(&mut rng, 16);
    let (a, b) = (random_strokes(&mut rng, 16), random_strokes(&mut rng, 16));
    let first = wand_select(&image, &a, 0.1, None).unwrap();
    let both = wand_select(&image, &b, 0.1, Some(&first)).unwrap();
    let together: Vec<_> = a.iter().chain(&b).cloned().collect();
    assert_eq!(both, wand_select(&image, &together, 0.1, None).unwrap());
}

#[test]
fn metrics_match_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..300 {
        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let p = rng.random_range(0.0..1.0);
        let pred = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p));
        let truth = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(p));
        let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..h {
            for x in 0..w {
                match (pred.get(x, y), truth.get(x, y)) {
                    (true, true) => tp += 1,
                    (false, false) => tn += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                }
            }
        }
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (tp, tn, fp, fn_));
        let s = score_pair(&pred, &truth).unwrap();
        if tp + fp + fn_ > 0 {
            assert!((s.iou - tp as f64 / (tp + fp + fn_) as f64).abs() < 1e-12);
            assert!((s.f1 - 2.0 * s.iou / (1.0 + s.iou)).abs() < 1e-12);
        }
        assert!((s.accuracy - (tp + tn) as f64 / (w * h) as f64).abs() < 1e-12);
    }
}

#[test]
fn candidates_on_a_noisy_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = BinaryMask::from_fn(128, 128, |x, y| (x as f64 - 64.0).hypot(y as f64 - 64.0) <= 40.0);
    let data = (0..128 * 128)
        .map(|i| {
            let base = if truth.data()[i] { 0.8 } else { 0.2 };
            (base + rng.random_range(-0.05f32..0.05)).clamp(0.0, 1.0)
        })
        .collect();
    let image = Raster::new(128, 128, 1, data).unwrap();
    let set = generate_candidates(&image, &SeedEllipse::circle(64.0, 64.0, 10.0)).unwrap();
    assert_eq!(set.candidates.len(), CANDIDATE_COUNT);
    let best = set
        .candidates
        .iter()
        .map(|c| score_pair(c, &truth).unwrap().iou)
        .fold(0.0, f64::max);
    assert!(best >= 0.95, "best IoU {best}");
}
