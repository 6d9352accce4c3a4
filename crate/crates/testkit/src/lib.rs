//! Independent brute-force oracles used by the test suites.
//!
//! Everything here works on plain pixel sets and scalar slices, recomputing
//! results from first principles (explicit set unions, pairwise comparisons,
//! exhaustive split enumeration) so the checks stay independent of the
//! implementation paths they verify. Keep this crate free of dependencies on
//! the main library.

use std::collections::BTreeSet;

pub type PixelSet = BTreeSet<(u32, u32)>;

pub fn pixel_set(pixels: &[(u32, u32)]) -> PixelSet {
    pixels.iter().copied().collect()
}

/// IoU of two explicit pixel sets.
pub fn iou_of_sets(a: &PixelSet, b: &PixelSet) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Adjusted IoU: the predicted set against the union of all ground-truth
/// sets it intersects.
pub fn adjusted_iou_brute(q: &PixelSet, gts: &[PixelSet]) -> f64 {
    let mut matched: PixelSet = PixelSet::new();
    for gt in gts {
        if q.intersection(gt).next().is_some() {
            matched.extend(gt.iter().copied());
        }
    }
    if matched.is_empty() {
        0.0
    } else {
        iou_of_sets(q, &matched)
    }
}

/// Ground-truth-side IoU at a threshold: the ground-truth set against the
/// union of intersecting predictions whose score survives (`m <= h`).
pub fn gt_iou_brute(gt: &PixelSet, preds: &[(PixelSet, f64)], h: f64) -> f64 {
    let mut kept: PixelSet = PixelSet::new();
    for (pred, m) in preds {
        if *m <= h && gt.intersection(pred).next().is_some() {
            kept.extend(pred.iter().copied());
        }
    }
    if kept.is_empty() {
        0.0
    } else {
        iou_of_sets(gt, &kept)
    }
}

/// (tp, fp, fn) for one image at one threshold, straight from the counting
/// definitions: a false positive is a surviving prediction with adjusted IoU
/// zero, a true positive a ground-truth set with positive threshold-side IoU.
pub fn counts_brute(preds: &[(PixelSet, f64)], gts: &[PixelSet], h: f64) -> (u64, u64, u64) {
    let gt_only: Vec<PixelSet> = gts.to_vec();
    let mut fp = 0u64;
    for (pred, m) in preds {
        if *m <= h && adjusted_iou_brute(pred, &gt_only) == 0.0 {
            fp += 1;
        }
    }
    let mut tp = 0u64;
    let mut false_neg = 0u64;
    for gt in gts {
        if gt_iou_brute(gt, preds, h) > 0.0 {
            tp += 1;
        } else {
            false_neg += 1;
        }
    }
    (tp, fp, false_neg)
}

/// Mean IoU from an explicit confusion matrix over label grids; `ignore`
/// pixels in the ground truth are skipped, classes absent from both sides are
/// skipped.
pub fn miou_brute(pred: &[u16], gt: &[u16], num_classes: u16, ignore: Option<u16>) -> f64 {
    let mut inter = vec![0u64; num_classes as usize];
    let mut pred_count = vec![0u64; num_classes as usize];
    let mut gt_count = vec![0u64; num_classes as usize];
    for (&p, &g) in pred.iter().zip(gt) {
        if Some(g) == ignore {
            continue;
        }
        pred_count[p as usize] += 1;
        gt_count[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    let mut total = 0.0;
    let mut classes = 0;
    for k in 0..num_classes as usize {
        let union = pred_count[k] + gt_count[k] - inter[k];
        if union > 0 {
            total += inter[k] as f64 / union as f64;
            classes += 1;
        }
    }
    if classes == 0 {
        0.0
    } else {
        total / classes as f64
    }
}

/// Pairwise Mann-Whitney statistic, O(n*m): wins count 1, ties 0.5.
pub fn auroc_brute(pos: &[f64], neg: &[f64]) -> f64 {
    let mut score = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    score / (pos.len() as f64 * neg.len() as f64)
}

/// Best least-squares split by exhaustive enumeration over every feature and
/// every boundary between distinct sorted values. Returns
/// (gain, feature, threshold) with the threshold being the largest value
/// routed left; ties prefer the lower feature index, then the lower
/// threshold. `None` when no split with positive gain respects the leaf
/// minimum.
pub fn best_split_brute(
    columns: &[Vec<f64>],
    residuals: &[f64],
    min_samples_leaf: usize,
) -> Option<(f64, usize, f64)> {
    let n = residuals.len();
    let sse = |idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let mean = idx.iter().map(|&i| residuals[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (residuals[i] - mean).powi(2)).sum()
    };
    let all: Vec<usize> = (0..n).collect();
    let total_sse = sse(&all);
    let mut best: Option<(f64, usize, f64)> = None;
    for (feature, column) in columns.iter().enumerate() {
        let mut values: Vec<f64> = column.clone();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for t in &values[..values.len().saturating_sub(1)] {
            let left: Vec<usize> = (0..n).filter(|&i| column[i] <= *t).collect();
            let right: Vec<usize> = (0..n).filter(|&i| column[i] > *t).collect();
            if left.len() < min_samples_leaf || right.len() < min_samples_leaf {
                continue;
            }
            let gain = total_sse - sse(&left) - sse(&right);
            if gain <= 1e-12 {
                continue;
            }
            let better = match best {
                None => true,
                Some((g, f, th)) => {
                    gain > g || (gain == g && (feature < f || (feature == f && *t < th)))
                }
            };
            if better {
                best = Some((gain, feature, *t));
            }
        }
    }
    best
}

/// Mean logistic loss of scores against binary targets.
pub fn logistic_loss_brute(scores: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let p = 1.0 / (1.0 + (-s).exp());
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    total / scores.len() as f64
}

/// Central finite difference of the single-sample logistic loss with respect
/// to the score.
pub fn logistic_loss_fd(score: f64, target: f64, step: f64) -> f64 {
    let loss = |s: f64| -> f64 {
        let p = 1.0 / (1.0 + (-s).exp());
        -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
    };
    (loss(score + step) - loss(score - step)) / (2.0 * step)
}

/// Pearson correlation of two indicator (or real) sequences.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let a = pixel_set(&[(0, 0), (0, 1)]);
        let b = pixel_set(&[(0, 1), (0, 2)]);
        assert!((iou_of_sets(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn counts_on_tiny_example() {
        let gt = vec![pixel_set(&[(0, 0), (0, 1)])];
        let preds = vec![
            (pixel_set(&[(0, 1), (0, 2)]), 0.2),
            (pixel_set(&[(5, 5)]), 0.9),
        ];
        assert_eq!(counts_brute(&preds, &gt, 0.5), (1, 0, 0));
        assert_eq!(counts_brute(&preds, &gt, 1.0), (1, 1, 0));
        assert_eq!(counts_brute(&preds, &gt, 0.1), (0, 0, 1));
    }

    #[test]
    fn brute_split_finds_boundary() {
        let columns = vec![vec![1.0, 2.0, 3.0, 10.0, 11.0]];
        let residuals = vec![1.0, 1.0, 1.0, -1.0, -1.0];
        let (gain, feature, threshold) = best_split_brute(&columns, &residuals, 1).unwrap();
        assert_eq!(feature, 0);
        assert_eq!(threshold, 3.0);
        assert!(gain > 0.0);
    }
}
