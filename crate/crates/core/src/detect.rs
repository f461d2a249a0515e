//! Threshold detection and ROC evaluation.
//!
//! A slot is declared occupied when its predicted power meets or exceeds a
//! threshold. Sweeping the threshold over the range of predicted values and
//! scoring each decision rule against the ground truth traces out the
//! receiver operating characteristic.

use crate::error::{Error, Result};
use crate::tensor::{BoolTensor3, Tensor3};

/// One operating point: the threshold and the two rates it induces.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RocPoint {
    pub gamma: f64,
    pub p_f: f64,
    pub p_d: f64,
}

/// Operating points sorted by decreasing threshold, plus the area under the
/// resulting curve in (P_F, P_D) space.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RocCurve {
    points: Vec<RocPoint>,
    auc: f64,
}

impl RocCurve {
    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    pub fn auc(&self) -> f64 {
        self.auc
    }
}

/// Marks every entry with predicted power at or above `gamma` as occupied.
/// The comparison is inclusive, so a threshold equal to some entry counts
/// that entry as occupied.
pub fn detect(xhat: &Tensor3, gamma: f64) -> BoolTensor3 {
    let bits = xhat.data().iter().map(|&v| v >= gamma).collect();
    BoolTensor3::new(xhat.dims(), bits).expect("dims come from a valid tensor")
}

/// Sweeps the detection threshold over the predicted values and scores each
/// decision against the ground truth.
///
/// The threshold grid is the sorted unique predicted values, subsampled
/// evenly to at most `num_thresholds`, bracketed by +inf and -inf sentinels
/// so the curve always reaches (0,0) and (1,1). Rates are exact counts:
/// P_D = true positives / positives, P_F = false positives / negatives.
/// The area is computed by trapezoidal integration over P_F.
///
/// Fails when dims disagree or the truth has only one class.
pub fn roc(xhat: &Tensor3, truth: &BoolTensor3, num_thresholds: usize) -> Result<RocCurve> {
    if xhat.dims() != truth.dims() {
        return Err(Error::DimMismatch {
            expected: xhat.dims(),
            got: truth.dims(),
        });
    }
    if num_thresholds == 0 {
        return Err(Error::InvalidOption(
            "num_thresholds must be at least 1".into(),
        ));
    }
    let positives = truth.count_true();
    let negatives = truth.count_false();
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTruth);
    }
    if !xhat.all_finite() {
        return Err(Error::NonFinite("predicted tensor"));
    }

    let thresholds = threshold_grid(xhat.data(), num_thresholds);

    // Entries sorted by decreasing predicted value. Walking the thresholds in
    // the same direction lets one pointer accumulate exact TP/FP counts, which
    // makes both rates nonincreasing in gamma by construction.
    let mut order: Vec<(f64, bool)> = xhat
        .data()
        .iter()
        .copied()
        .zip(truth.bits().iter().copied())
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::with_capacity(thresholds.len());
    let mut idx = 0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &gamma in &thresholds {
        while idx < order.len() && order[idx].0 >= gamma {
            if order[idx].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        points.push(RocPoint {
            gamma,
            p_f: fp as f64 / negatives as f64,
            p_d: tp as f64 / positives as f64,
        });
    }

    let auc = trapezoid_area(&points);
    Ok(RocCurve { points, auc })
}

/// Unique values descending, evenly subsampled, with infinite sentinels on
/// both ends. The subsample always keeps the extreme values.
fn threshold_grid(values: &[f64], num_thresholds: usize) -> Vec<f64> {
    let mut unique: Vec<f64> = values.to_vec();
    unique.sort_by(|a, b| b.total_cmp(a));
    unique.dedup();

    let mut grid = Vec::with_capacity(num_thresholds + 2);
    grid.push(f64::INFINITY);
    if unique.len() <= num_thresholds {
        grid.extend_from_slice(&unique);
    } else {
        let m = num_thresholds;
        let last = unique.len() - 1;
        let mut prev = usize::MAX;
        for k in 0..m {
            // Even spacing over the index range, endpoints included.
            let pos = if m == 1 { 0 } else { k * last / (m - 1) };
            if pos != prev {
                grid.push(unique[pos]);
                prev = pos;
            }
        }
    }
    grid.push(f64::NEG_INFINITY);
    grid
}

fn trapezoid_area(points: &[RocPoint]) -> f64 {
    let mut area = 0.0;
    for pair in points.windows(2) {
        area += (pair[1].p_f - pair[0].p_f) * (pair[0].p_d + pair[1].p_d) / 2.0;
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor_from(dims: (usize, usize, usize), vals: Vec<f64>) -> Tensor3 {
        Tensor3::new(dims, vals).unwrap()
    }

    #[test]
    fn detect_is_inclusive_at_the_boundary() {
        let x = tensor_from((2, 1, 1), vec![0.2, 0.7]);
        let at_half = detect(&x, 0.5);
        assert_eq!(at_half.bits(), &[false, true]);
        let at_boundary = detect(&x, 0.7);
        assert_eq!(at_boundary.bits(), &[false, true]);
        let above = detect(&x, 0.7 + 1e-12);
        assert_eq!(above.bits(), &[false, false]);
    }

    #[test]
    fn detect_extreme_thresholds() {
        let x = tensor_from((2, 2, 1), vec![0.0, 1.0, -3.5, 2.0]);
        assert!(detect(&x, f64::NEG_INFINITY).bits().iter().all(|&b| b));
        assert!(detect(&x, 2.5).bits().iter().all(|&b| !b));
    }

    #[test]
    fn perfect_detector_has_unit_auc() {
        let truth = BoolTensor3::new((2, 3, 2), vec![
            true, false, true, true, false, false, true, false, true, false, true, false,
        ])
        .unwrap();
        let vals = truth
            .bits()
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        let x = tensor_from((2, 3, 2), vals);
        let curve = roc(&x, &truth, 200).unwrap();
        assert_eq!(curve.auc(), 1.0);
        assert!(curve
            .points()
            .iter()
            .any(|p| p.p_f == 0.0 && p.p_d == 1.0));
    }

    #[test]
    fn curve_endpoints_are_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = (4, 5, 3);
        let x = Tensor3::from_fn(dims, |_, _, _| rng.random::<f64>()).unwrap();
        let truth =
            BoolTensor3::new(dims, (0..60).map(|i| i % 3 == 0).collect()).unwrap();
        let curve = roc(&x, &truth, 50).unwrap();
        let first = curve.points().first().unwrap();
        let last = curve.points().last().unwrap();
        assert_eq!((first.p_f, first.p_d), (0.0, 0.0));
        assert_eq!(first.gamma, f64::INFINITY);
        assert_eq!((last.p_f, last.p_d), (1.0, 1.0));
        assert_eq!(last.gamma, f64::NEG_INFINITY);
    }

    #[test]
    fn rates_are_nonincreasing_in_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = (6, 7, 4);
        let x = Tensor3::from_fn(dims, |_, _, _| rng.random::<f64>() * 3.0).unwrap();
        let truth = BoolTensor3::new(
            dims,
            (0..dims.0 * dims.1 * dims.2)
                .map(|_| rng.random::<f64>() < 0.4)
                .collect(),
        )
        .unwrap();
        let curve = roc(&x, &truth, 30).unwrap();
        // Points are sorted by decreasing gamma, so both rates must grow
        // along the list.
        for pair in curve.points().windows(2) {
            assert!(pair[0].gamma > pair[1].gamma);
            assert!(pair[1].p_f >= pair[0].p_f);
            assert!(pair[1].p_d >= pair[0].p_d);
        }
    }

    #[test]
    fn chance_level_auc_on_independent_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dims = (20, 60, 40);
        let n = dims.0 * dims.1 * dims.2;
        let x = Tensor3::from_fn(dims, |_, _, _| rng.random::<f64>()).unwrap();
        let truth =
            BoolTensor3::new(dims, (0..n).map(|_| rng.random::<f64>() < 0.5).collect())
                .unwrap();
        let curve = roc(&x, &truth, 200).unwrap();
        assert!(
            (curve.auc() - 0.5).abs() <= 0.02,
            "auc {} not near chance",
            curve.auc()
        );
    }

    #[test]
    fn complement_truth_flips_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = (8, 9, 5);
        let n = dims.0 * dims.1 * dims.2;
        let x = Tensor3::from_fn(dims, |_, _, _| rng.random::<f64>()).unwrap();
        let bits: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        let flipped: Vec<bool> = bits.iter().map(|&b| !b).collect();
        let truth = BoolTensor3::new(dims, bits).unwrap();
        let anti = BoolTensor3::new(dims, flipped).unwrap();
        let a = roc(&x, &truth, 100).unwrap().auc();
        let b = roc(&x, &anti, 100).unwrap().auc();
        // Swapping the classes mirrors the curve across the diagonal; the two
        // areas telescope to exactly 1 up to summation roundoff.
        assert!((a + b - 1.0).abs() < 1e-12, "a={a}, b={b}");
    }

    #[test]
    fn degenerate_truth_is_rejected() {
        let x = tensor_from((2, 2, 1), vec![0.1, 0.2, 0.3, 0.4]);
        let all_true = BoolTensor3::filled((2, 2, 1), true).unwrap();
        let all_false = BoolTensor3::filled((2, 2, 1), false).unwrap();
        assert!(matches!(
            roc(&x, &all_true, 10),
            Err(Error::DegenerateTruth)
        ));
        assert!(matches!(
            roc(&x, &all_false, 10),
            Err(Error::DegenerateTruth)
        ));
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let x = tensor_from((2, 2, 1), vec![0.1, 0.2, 0.3, 0.4]);
        let truth = BoolTensor3::new((2, 1, 1), vec![true, false]).unwrap();
        assert!(matches!(roc(&x, &truth, 10), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn subsampling_caps_the_grid_and_keeps_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = (10, 10, 10);
        let x = Tensor3::from_fn(dims, |_, _, _| rng.random::<f64>()).unwrap();
        let truth = BoolTensor3::new(
            dims,
            (0..1000).map(|_| rng.random::<f64>() < 0.5).collect(),
        )
        .unwrap();
        let curve = roc(&x, &truth, 20).unwrap();
        // 20 finite thresholds plus the two sentinels.
        assert_eq!(curve.points().len(), 22);
        let max = x.data().iter().cloned().fold(f64::MIN, f64::max);
        let min = x.data().iter().cloned().fold(f64::MAX, f64::min);
        let finite: Vec<f64> = curve
            .points()
            .iter()
            .map(|p| p.gamma)
            .filter(|g| g.is_finite())
            .collect();
        assert_eq!(finite[0], max);
        assert_eq!(*finite.last().unwrap(), min);
    }

    #[test]
    fn auc_against_pairwise_counting_oracle() {
        // With every predicted value distinct and all of them kept in the
        // grid, trapezoidal AUC equals the Mann-Whitney statistic: the
        // fraction of (positive, negative) pairs ranked correctly.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let dims = (5, 5, 2);
        let n = dims.0 * dims.1 * dims.2;
        let x = Tensor3::from_fn(dims, |_, _, _| rng.random::<f64>()).unwrap();
        let bits: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
        let truth = BoolTensor3::new(dims, bits.clone()).unwrap();

        let mut correct = 0usize;
        let mut total = 0usize;
        for (i, &bi) in bits.iter().enumerate() {
            if !bi {
                continue;
            }
            for (j, &bj) in bits.iter().enumerate() {
                if bj {
                    continue;
                }
                total += 1;
                if x.data()[i] > x.data()[j] {
                    correct += 1;
                }
            }
        }
        let expected = correct as f64 / total as f64;
        let curve = roc(&x, &truth, n).unwrap();
        assert!(
            (curve.auc() - expected).abs() < 1e-12,
            "auc {} vs pairwise {}",
            curve.auc(),
            expected
        );
    }

    proptest! {
        #[test]
        fn auc_stays_in_unit_interval(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = (3, 4, 3);
            let n = dims.0 * dims.1 * dims.2;
            let x = Tensor3::from_fn(dims, |_, _, _| rng.random::<f64>()).unwrap();
            let mut bits: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
            // Force both classes to be present.
            bits[0] = true;
            bits[1] = false;
            let truth = BoolTensor3::new(dims, bits).unwrap();
            let curve = roc(&x, &truth, 16).unwrap();
            prop_assert!(curve.auc() >= 0.0 && curve.auc() <= 1.0);
            for p in curve.points() {
                prop_assert!((0.0..=1.0).contains(&p.p_f));
                prop_assert!((0.0..=1.0).contains(&p.p_d));
            }
        }
    }
}
