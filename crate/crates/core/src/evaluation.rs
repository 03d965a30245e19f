//! Pixel-level accuracy: precision/recall sweep, F-measure threshold
//! selection, and mean per-image IoU at the averaged best threshold.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PixelConfusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl PixelConfusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `tp / (tp + fp)`, 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, 0 when the label has no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }

    /// `tp / (tp + fp + fn)`; an empty union counts as perfect agreement.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    fn add(&mut self, other: &PixelConfusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Confusion counts for the prediction `rate > th`.
pub fn confusion(label: &[f64], rates: &[f64], th: f64) -> Result<PixelConfusion> {
    check_dims(label, rates)?;
    let mut c = PixelConfusion::default();
    for (&y, &r) in label.iter().zip(rates) {
        match (y > 0.5, r > th) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn iou(label: &[f64], rates: &[f64], th: f64) -> Result<f64> {
    Ok(confusion(label, rates, th)?.iou())
}

fn check_dims(label: &[f64], rates: &[f64]) -> Result<()> {
    if label.len() != rates.len() {
        return Err(Error::invalid(format!(
            "label has {} pixels, prediction has {}",
            label.len(),
            rates.len()
        )));
    }
    Ok(())
}

/// Every distinct decision boundary for rates in `{0, 1/T, ..., 1}`:
/// `(i - 0.5) / T` for `i = 0..=T`, then `1.0`. Ascending.
pub fn threshold_candidates(steps: usize) -> Vec<f64> {
    let t = steps as f64;
    (0..=steps)
        .map(|i| (i as f64 - 0.5) / t)
        .chain(std::iter::once(1.0))
        .collect()
}

/// Confusion at every candidate threshold, computed in one sweep over a
/// histogram of how many candidates lie below each rate.
pub fn sweep(label: &[f64], rates: &[f64], steps: usize) -> Result<Vec<(f64, PixelConfusion)>> {
    check_dims(label, rates)?;
    if steps == 0 {
        return Err(Error::invalid("steps must be positive"));
    }
    let cands = threshold_candidates(steps);
    let n = cands.len();
    // level = number of candidates strictly below the rate; pixel is
    // predicted positive at candidate c iff c < level.
    let mut pos_hist = vec![0usize; n + 1];
    let mut neg_hist = vec![0usize; n + 1];
    for (&y, &r) in label.iter().zip(rates) {
        let level = cands.partition_point(|&th| th < r);
        if y > 0.5 {
            pos_hist[level] += 1;
        } else {
            neg_hist[level] += 1;
        }
    }
    let total_pos: usize = pos_hist.iter().sum();
    let total_neg: usize = neg_hist.iter().sum();
    // Walk candidates upward; pixels with level <= c turn negative.
    let (mut pos_off, mut neg_off) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for (c, &th) in cands.iter().enumerate() {
        pos_off += pos_hist[c];
        neg_off += neg_hist[c];
        out.push((
            th,
            PixelConfusion {
                tp: total_pos - pos_off,
                fp: total_neg - neg_off,
                fn_: pos_off,
                tn: neg_off,
            },
        ));
    }
    Ok(out)
}

/// Threshold maximizing the F-measure; ties go to the smallest threshold.
pub fn best_threshold(label: &[f64], rates: &[f64], steps: usize) -> Result<(f64, f64)> {
    let mut best = (f64::NAN, -1.0);
    for (th, c) in sweep(label, rates, steps)? {
        let f = c.f_measure();
        if f > best.1 {
            best = (th, f);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdReport {
    pub per_image_best_th: Vec<f64>,
    pub per_image_best_f: Vec<f64>,
    /// Arithmetic mean of the per-image best thresholds.
    pub mean_best_th: f64,
    /// IoU of each image at `mean_best_th`.
    pub per_image_iou: Vec<f64>,
    pub mean_iou: f64,
    /// Pooled precision/recall over all images at every candidate threshold.
    pub pr_curve: Vec<PrPoint>,
}

/// Per-image best thresholds are averaged into one shared threshold, which is
/// then applied to every image; the reported IoU is the mean per-image IoU.
pub fn evaluate<L, R>(predictions: &[(L, R)], steps: usize) -> Result<ThresholdReport>
where
    L: AsRef<[f64]>,
    R: AsRef<[f64]>,
{
    if predictions.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut per_image_best_th = Vec::with_capacity(predictions.len());
    let mut per_image_best_f = Vec::with_capacity(predictions.len());
    let mut pooled: Vec<(f64, PixelConfusion)> = Vec::new();
    for (label, rates) in predictions {
        let (label, rates) = (label.as_ref(), rates.as_ref());
        let (th, f) = best_threshold(label, rates, steps)?;
        per_image_best_th.push(th);
        per_image_best_f.push(f);
        let s = sweep(label, rates, steps)?;
        if pooled.is_empty() {
            pooled = s;
        } else {
            for (acc, (_, c)) in pooled.iter_mut().zip(&s) {
                acc.1.add(c);
            }
        }
    }
    let n = predictions.len() as f64;
    let mean_best_th = per_image_best_th.iter().sum::<f64>() / n;
    let per_image_iou = predictions
        .iter()
        .map(|(l, r)| iou(l.as_ref(), r.as_ref(), mean_best_th))
        .collect::<Result<Vec<_>>>()?;
    let mean_iou = per_image_iou.iter().sum::<f64>() / n;
    let pr_curve = pooled
        .into_iter()
        .map(|(threshold, c)| PrPoint {
            threshold,
            precision: c.precision(),
            recall: c.recall(),
            f_measure: c.f_measure(),
        })
        .collect();
    Ok(ThresholdReport {
        per_image_best_th,
        per_image_best_f,
        mean_best_th,
        per_image_iou,
        mean_iou,
        pr_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    const T: usize = 30;

    fn fixture(rng: &mut Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
        let label: Vec<f64> = (0..n).map(|_| (rng.uniform() < 0.25) as u8 as f64).collect();
        let rates = label
            .iter()
            .map(|&y| {
                let bias = if y > 0.0 { 0.3 } else { 0.0 };
                let k = ((rng.uniform() * 0.7 + bias) * T as f64).floor().min(T as f64);
                k / T as f64
            })
            .collect();
        (label, rates)
    }

    #[test]
    fn perfect_prediction() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let c = confusion(&y, &y, 0.5).unwrap();
        assert_eq!((c.fp, c.fn_, c.tp, c.tn), (0, 0, 2, 2));
        assert_eq!(best_threshold(&y, &y, T).unwrap().1, 1.0);
    }

    #[test]
    fn threshold_extremes() {
        let y = [1.0, 0.0, 1.0];
        let r = [1.0, 1.0, 0.0];
        let c = confusion(&y, &r, 1.0).unwrap();
        assert_eq!(c.tp + c.fp, 0);
        let c = confusion(&y, &r, -1e-9).unwrap();
        assert_eq!(c.tp + c.fp, 3);
        assert!(confusion(&y, &r[..2], 0.5).is_err());
    }

    #[test]
    fn f_measure_values() {
        assert_eq!(f_measure(0.5, 0.5), 0.5);
        assert_eq!(f_measure(1.0, 0.0), 0.0);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
        assert!((f_measure(0.8, 0.4) - 0.64 / 1.2).abs() < 1e-15);
    }

    #[test]
    fn all_background_label() {
        let y = [0.0; 10];
        let r: Vec<f64> = (0..10).map(|i| i as f64 / 30.0).collect();
        let (th, f) = best_threshold(&y, &r, T).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(th, threshold_candidates(T)[0]);
    }

    #[test]
    fn iou_set_cases() {
        // predicted {a, b}, true {b, c}
        let y = [0.0, 1.0, 1.0];
        let r = [1.0, 1.0, 0.0];
        assert!((iou(&y, &r, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&y, &y, 0.5).unwrap(), 1.0);
        assert_eq!(iou(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap(), 0.0);
        assert_eq!(iou(&[0.0, 0.0], &[0.0, 0.0], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn matches_dense_grid_scan() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let (y, r) = fixture(&mut rng, 20);
            let (th, f) = best_threshold(&y, &r, T).unwrap();
            let mut brute = (f64::NAN, -1.0);
            for k in 0..1000 {
                let g = (k as f64 + 0.5) / 1000.0 - 0.001;
                let bf = confusion(&y, &r, g).unwrap().f_measure();
                if bf > brute.1 {
                    brute = (g, bf);
                }
            }
            assert!((f - brute.1).abs() < 1e-12);
            let a = confusion(&y, &r, th).unwrap();
            let b = confusion(&y, &r, brute.0).unwrap();
            assert_eq!(a, b, "thresholds {th} vs {} select different masks", brute.0);
        }
    }

    #[test]
    fn evaluate_means() {
        let y1 = vec![1.0, 0.0];
        let y2 = vec![1.0, 0.0];
        let r1 = vec![1.0, 0.0];
        let r2 = vec![0.5, 0.2];
        let rep = evaluate(&[(y1.clone(), r1.clone())], 10).unwrap();
        assert_eq!(rep.mean_best_th, rep.per_image_best_th[0]);
        let rep = evaluate(&[(y1, r1), (y2, r2)], 10).unwrap();
        let m = (rep.per_image_best_th[0] + rep.per_image_best_th[1]) / 2.0;
        assert_eq!(rep.mean_best_th, m);
        assert_eq!(rep.mean_iou, (rep.per_image_iou[0] + rep.per_image_iou[1]) / 2.0);
        assert!(evaluate::<Vec<f64>, Vec<f64>>(&[], 10).is_err());
    }

    #[test]
    fn evaluate_against_straight_line_reference() {
        let mut rng = Rng::new(23);
        let preds: Vec<(Vec<f64>, Vec<f64>)> = (0..12).map(|_| fixture(&mut rng, 400)).collect();
        let rep = evaluate(&preds, T).unwrap();

        // Reference: brute candidates per image, mean, IoU by plain counting.
        let cands: Vec<f64> = (0..=T).map(|i| (i as f64 - 0.5) / T as f64).chain([1.0]).collect();
        let mut ths = Vec::new();
        for (y, r) in &preds {
            let mut best = (0.0, -1.0);
            for &th in &cands {
                let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
                for i in 0..y.len() {
                    let p = r[i] > th;
                    let t = y[i] == 1.0;
                    if p && t {
                        tp += 1.0
                    } else if p {
                        fp += 1.0
                    } else if t {
                        fnn += 1.0
                    }
                }
                let prec: f64 = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                let rec: f64 = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
                let f = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
                if f > best.1 {
                    best = (th, f);
                }
            }
            ths.push(best.0);
        }
        let mean_th = ths.iter().sum::<f64>() / ths.len() as f64;
        let mut total = 0.0;
        for (y, r) in &preds {
            let inter = (0..y.len()).filter(|&i| y[i] == 1.0 && r[i] > mean_th).count() as f64;
            let uni = (0..y.len()).filter(|&i| y[i] == 1.0 || r[i] > mean_th).count() as f64;
            total += if uni == 0.0 { 1.0 } else { inter / uni };
        }
        assert_eq!(rep.per_image_best_th, ths);
        assert_eq!(rep.mean_best_th, mean_th);
        assert!((rep.mean_iou - total / preds.len() as f64).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn sweep_agrees_with_direct_counts(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let (y, r) = fixture(&mut rng, 60);
            let mut prev_pos = usize::MAX;
            for (th, c) in sweep(&y, &r, T).unwrap() {
                prop_assert_eq!(c, confusion(&y, &r, th).unwrap());
                prop_assert_eq!(c.total(), 60);
                prop_assert!(c.tp + c.fp <= prev_pos);
                prev_pos = c.tp + c.fp;
                if c.tp + c.fp > 0 && c.tp + c.fn_ > 0 {
                    prop_assert!(c.iou() <= c.precision().min(c.recall()) + 1e-15);
                }
            }
        }

        #[test]
        fn evaluate_is_permutation_invariant(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let preds: Vec<(Vec<f64>, Vec<f64>)> = (0..5).map(|_| fixture(&mut rng, 40)).collect();
            let mut shuffled = preds.clone();
            rng.shuffle(&mut shuffled);
            let a = evaluate(&preds, T).unwrap();
            let b = evaluate(&shuffled, T).unwrap();
            prop_assert!((a.mean_best_th - b.mean_best_th).abs() < 1e-12);
            prop_assert!((a.mean_iou - b.mean_iou).abs() < 1e-12);
            prop_assert_eq!(a.pr_curve, b.pr_curve);
        }
    }
}
