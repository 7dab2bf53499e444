//! Pixel-classification scores for binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Confusion tallies with the melt pool as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    if !pred.same_dims(truth) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what} undefined for two empty masks; reporting 1.0");
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn accuracy(c: &ConfusionCounts) -> f64 {
    ratio(c.tp + c.tn, c.total(), "accuracy")
}

pub fn f1(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, "F1")
}

pub fn iou(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_, "IoU")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
    pub iou: f64,
}

impl Scores {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        Self {
            accuracy: accuracy(c),
            f1: f1(c),
            iou: iou(c),
        }
    }

    pub fn zero() -> Self {
        Self {
            accuracy: 0.0,
            f1: 0.0,
            iou: 0.0,
        }
    }
}

pub fn score_pair(pred: &BinaryMask, truth: &BinaryMask) -> Result<Scores> {
    Ok(Scores::from_counts(&confusion(pred, truth)?))
}

/// Arithmetic mean of per-image scores. `None` for an empty slice.
pub fn mean_scores(per_image: &[Scores]) -> Option<Scores> {
    if per_image.is_empty() {
        return None;
    }
    let n = per_image.len() as f64;
    let sum = |f: fn(&Scores) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    Some(Scores {
        accuracy: sum(|s| s.accuracy),
        f1: sum(|s| s.f1),
        iou: sum(|s| s.iou),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    #[test]
    fn worked_example() {
        let c = counts(9, 89, 1, 1);
        assert!((accuracy(&c) - 0.98).abs() < 1e-12);
        assert!((f1(&c) - 0.90).abs() < 1e-12);
        assert!((iou(&c) - 9.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_inverted_masks() {
        let truth = BinaryMask::from_fn(6, 5, |x, y| x > y);
        let n = truth.count() as u64;
        assert_eq!(confusion(&truth, &truth).unwrap(), counts(n, 30 - n, 0, 0));
        let inv = confusion(&truth.not(), &truth).unwrap();
        assert_eq!((inv.tp, inv.tn), (0, 0));
        let s = score_pair(&truth, &truth).unwrap();
        assert_eq!((s.accuracy, s.f1, s.iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_built_four_by_four() {
        #[rustfmt::skip]
        let p = [1,1,0,0, 1,0,0,0, 0,0,1,1, 0,0,0,1];
        #[rustfmt::skip]
        let t = [1,0,0,0, 1,1,0,0, 0,0,1,0, 0,0,1,1];
        let pred = BinaryMask::new(4, 4, p.iter().map(|&v| v == 1).collect()).unwrap();
        let truth = BinaryMask::new(4, 4, t.iter().map(|&v| v == 1).collect()).unwrap();
        // TP at (0,0),(0,1),(2,2),(3,3); FP at (1,0),(3,2); FN at (1,1),(2,3).
        assert_eq!(confusion(&pred, &truth).unwrap(), counts(4, 8, 2, 2));
    }

    #[test]
    fn vacuous_case_is_perfect() {
        let e = BinaryMask::empty(3, 3);
        let s = score_pair(&e, &e).unwrap();
        assert_eq!((s.f1, s.iou), (1.0, 1.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(confusion(&BinaryMask::empty(3, 3), &BinaryMask::empty(3, 4)).is_err());
    }

    #[test]
    fn mean_of_scores() {
        let a = Scores { accuracy: 1.0, f1: 0.5, iou: 0.25 };
        let b = Scores { accuracy: 0.5, f1: 0.5, iou: 0.75 };
        let m = mean_scores(&[a, b]).unwrap();
        assert_eq!((m.accuracy, m.f1, m.iou), (0.75, 0.5, 0.5));
        assert!(mean_scores(&[]).is_none());
    }

    proptest! {
        #[test]
        fn f1_iou_identity(tp in 0u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, tn in 0u64..1000) {
            prop_assume!(tp + fp + fn_ > 0);
            let c = counts(tp, tn, fp, fn_);
            let j = iou(&c);
            prop_assert!((f1(&c) - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        }

        #[test]
        fn accuracy_invariant_under_label_swap(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..200)) {
            let n = bits.len();
            let p = BinaryMask::new(n, 1, bits.iter().map(|b| b.0).collect()).unwrap();
            let t = BinaryMask::new(n, 1, bits.iter().map(|b| b.1).collect()).unwrap();
            let a = accuracy(&confusion(&p, &t).unwrap());
            let b = accuracy(&confusion(&p.not(), &t.not()).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
