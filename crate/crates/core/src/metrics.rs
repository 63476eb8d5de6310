//! Segmentation quality metrics over integer class masks: per-class
//! confusion counts, IoU (Jaccard), mean IoU and F1.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::Tensor;
use crate::{contract_err, dim_err};

/// Integer class-id mask of extent H×W; ids are u8, so up to 256 classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    ids: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, ids: Vec<u8>) -> Result<Self> {
        if ids.len() != height * width {
            return Err(dim_err!(
                "mask {}×{} needs {} ids, got {}",
                height,
                width,
                height * width,
                ids.len()
            ));
        }
        Ok(Self { height, width, ids })
    }

    pub fn filled(height: usize, width: usize, id: u8) -> Self {
        Self { height, width, ids: vec![id; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    /// Highest class id present plus one.
    pub fn max_class(&self) -> usize {
        self.ids.iter().copied().max().map_or(0, |m| m as usize + 1)
    }
}

/// One-hot encoding of a mask as a 0/1 tensor of shape C×H×W — the
/// target format the cross-entropy and Dice losses expect.
pub fn one_hot(mask: &Mask, num_classes: usize) -> Result<Tensor> {
    let (h, w) = (mask.height(), mask.width());
    let mut data = vec![0.0; num_classes * h * w];
    for (i, &id) in mask.ids().iter().enumerate() {
        let id = id as usize;
        if id >= num_classes {
            return Err(contract_err!("class id {id} out of range 0..{num_classes}"));
        }
        data[id * h * w + i] = 1.0;
    }
    Tensor::from_vec(vec![num_classes, h, w], data)
}

/// Per-class true positive / false positive / false negative pixel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    true_pos: Vec<u64>,
    false_pos: Vec<u64>,
    false_neg: Vec<u64>,
}

impl ConfusionCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            true_pos: vec![0; num_classes],
            false_pos: vec![0; num_classes],
            false_neg: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.true_pos.len()
    }

    /// (TP, FP, FN) of class `c`.
    pub fn class(&self, c: usize) -> (u64, u64, u64) {
        (self.true_pos[c], self.false_pos[c], self.false_neg[c])
    }

    pub fn record(&mut self, c: usize, tp: u64, fp: u64, fneg: u64) {
        self.true_pos[c] += tp;
        self.false_pos[c] += fp;
        self.false_neg[c] += fneg;
    }

    /// Accumulate another set of counts, e.g. across dataset samples.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        debug_assert_eq!(self.num_classes(), other.num_classes());
        for c in 0..self.num_classes() {
            self.true_pos[c] += other.true_pos[c];
            self.false_pos[c] += other.false_pos[c];
            self.false_neg[c] += other.false_neg[c];
        }
    }

    /// A class is empty when it never occurs in either mask.
    pub fn is_empty_class(&self, c: usize) -> bool {
        self.true_pos[c] + self.false_pos[c] + self.false_neg[c] == 0
    }

    /// Intersection over union TP/(TP+FP+FN); empty classes score 1.
    pub fn iou(&self, c: usize) -> f64 {
        if self.is_empty_class(c) {
            return 1.0;
        }
        let (tp, fp, fneg) = self.class(c);
        tp as f64 / (tp + fp + fneg) as f64
    }

    /// F1 = 2TP/(2TP+FP+FN); empty classes score 1.
    pub fn f1(&self, c: usize) -> f64 {
        if self.is_empty_class(c) {
            return 1.0;
        }
        let (tp, fp, fneg) = self.class(c);
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }

    /// Mean IoU over non-empty classes (absent classes are excluded
    /// rather than averaged in as 1.0).
    pub fn miou(&self) -> f64 {
        self.mean_over_present(|c| self.iou(c))
    }

    pub fn macro_f1(&self) -> f64 {
        self.mean_over_present(|c| self.f1(c))
    }

    fn mean_over_present(&self, score: impl Fn(usize) -> f64) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for c in 0..self.num_classes() {
            if !self.is_empty_class(c) {
                acc += score(c);
                n += 1;
            }
        }
        if n == 0 {
            1.0
        } else {
            acc / n as f64
        }
    }
}

/// Count per-class TP/FP/FN between a predicted and a reference mask.
pub fn confusion(pred: &Mask, truth: &Mask, num_classes: usize) -> Result<ConfusionCounts> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(dim_err!(
            "mask extents differ: {}×{} vs {}×{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        ));
    }
    let mut counts = ConfusionCounts::zeros(num_classes);
    for (&p, &t) in pred.ids().iter().zip(truth.ids()) {
        let (p, t) = (p as usize, t as usize);
        if p >= num_classes || t >= num_classes {
            return Err(contract_err!(
                "class id {} out of range 0..{num_classes}",
                p.max(t)
            ));
        }
        if p == t {
            counts.true_pos[p] += 1;
        } else {
            counts.false_pos[p] += 1;
            counts.false_neg[t] += 1;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    /// Independent per-class pixel counter: loops over classes, then
    /// pixels, never sharing the single-pass accumulation above.
    pub fn confusion_oracle(pred: &Mask, truth: &Mask, num_classes: usize) -> ConfusionCounts {
        let mut counts = ConfusionCounts::zeros(num_classes);
        for c in 0..num_classes {
            let c8 = c as u8;
            let mut tp = 0;
            let mut fp = 0;
            let mut fneg = 0;
            for y in 0..pred.height() {
                for x in 0..pred.width() {
                    let p = pred.get(y, x) == c8;
                    let t = truth.get(y, x) == c8;
                    match (p, t) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fneg += 1,
                        (false, false) => {}
                    }
                }
            }
            counts.record(c, tp, fp, fneg);
        }
        counts
    }

    fn random_mask(h: usize, w: usize, num_classes: u8, rng: &mut impl Rng) -> Mask {
        let ids = (0..h * w).map(|_| rng.gen_range(0..num_classes)).collect();
        Mask::new(h, w, ids).unwrap()
    }

    #[test]
    fn perfect_prediction_has_no_errors() {
        let mut rng = stream(0, "conf", 0);
        let m = random_mask(8, 8, 3, &mut rng);
        let counts = confusion(&m, &m, 3).unwrap();
        for c in 0..3 {
            let (_, fp, fneg) = counts.class(c);
            assert_eq!((fp, fneg), (0, 0));
            assert_eq!(counts.iou(c), 1.0);
            assert_eq!(counts.f1(c), 1.0);
        }
        assert_eq!(counts.miou(), 1.0);
        assert_eq!(counts.macro_f1(), 1.0);
    }

    #[test]
    fn binary_flip_has_zero_true_positives() {
        let mut rng = stream(1, "conf", 0);
        let truth = random_mask(6, 6, 2, &mut rng);
        let pred = Mask::new(6, 6, truth.ids().iter().map(|&v| 1 - v).collect()).unwrap();
        let counts = confusion(&pred, &truth, 2).unwrap();
        for c in 0..2 {
            assert_eq!(counts.class(c).0, 0);
            assert_eq!(counts.iou(c), 0.0);
        }
    }

    #[test]
    fn counts_match_per_pixel_oracle() {
        for seed in 0..20 {
            let mut rng = stream(seed, "conf", 1);
            let pred = random_mask(8, 8, 3, &mut rng);
            let truth = random_mask(8, 8, 3, &mut rng);
            let got = confusion(&pred, &truth, 3).unwrap();
            let expect = confusion_oracle(&pred, &truth, 3);
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn hand_counted_scores() {
        let mut counts = ConfusionCounts::zeros(1);
        counts.record(0, 3, 1, 2);
        assert!((counts.iou(0) - 0.5).abs() < 1e-12);
        assert!((counts.f1(0) - 2.0 * 3.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn empty_class_is_excluded_from_means() {
        // Class 2 never occurs; miou must average only classes 0 and 1.
        let truth = Mask::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        let pred = Mask::new(1, 4, vec![0, 1, 1, 1]).unwrap();
        let counts = confusion(&pred, &truth, 3).unwrap();
        assert!(counts.is_empty_class(2));
        assert_eq!(counts.iou(2), 1.0);
        let expect = (counts.iou(0) + counts.iou(1)) / 2.0;
        assert!((counts.miou() - expect).abs() < 1e-12);
    }

    #[test]
    fn iou_never_exceeds_f1() {
        for seed in 0..50 {
            let mut rng = stream(seed, "conf", 2);
            let pred = random_mask(5, 5, 4, &mut rng);
            let truth = random_mask(5, 5, 4, &mut rng);
            let counts = confusion(&pred, &truth, 4).unwrap();
            for c in 0..4 {
                if !counts.is_empty_class(c) {
                    let (iou, f1) = (counts.iou(c), counts.f1(c));
                    assert!((0.0..=1.0).contains(&iou));
                    assert!(iou <= f1 + 1e-15, "iou {iou} > f1 {f1}");
                    assert!(f1 <= 1.0);
                }
            }
        }
    }

    #[test]
    fn out_of_range_ids_are_contract_errors() {
        let a = Mask::new(1, 2, vec![0, 5]).unwrap();
        let b = Mask::new(1, 2, vec![0, 1]).unwrap();
        assert!(confusion(&a, &b, 3).is_err());
        assert!(one_hot(&a, 3).is_err());
    }

    #[test]
    fn one_hot_round_trip_via_argmax() {
        let mut rng = stream(2, "onehot", 0);
        let mask = random_mask(4, 4, 5, &mut rng);
        let encoded = one_hot(&mask, 5).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let mut best = 0;
                for c in 0..5 {
                    if encoded.at(&[c, y, x]) > encoded.at(&[best, y, x]) {
                        best = c;
                    }
                }
                assert_eq!(best as u8, mask.get(y, x));
            }
        }
    }
}
