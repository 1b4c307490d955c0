//! Segmentation losses over batches of probability grids, with their
//! gradients with respect to the probabilities.
//!
//! All reductions walk grids in batch order and voxels in linear order, so
//! results are bit-stable for a given input.

use crate::error::{Error, Result};
use crate::grid::{LabelGrid, ProbGrid};

/// Smoothing added to numerator and denominator of the soft Dice ratio.
pub const DICE_SMOOTHING: f64 = 1e-5;

/// Floor applied to the target-class probability inside the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which loss a gradient or value refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Dice,
    CrossEntropy,
    /// `½ ℓ_ce + ½ ℓ_dice`.
    Hybrid,
}

fn check_pairs(preds: &[ProbGrid], targets: &[LabelGrid]) -> Result<usize> {
    if preds.len() != targets.len() {
        return Err(Error::Arity { what: "target grids", expected: preds.len(), got: targets.len() });
    }
    let first = preds.first().ok_or_else(|| Error::shape("loss over an empty batch"))?;
    let k = first.num_classes();
    for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
        if p.num_classes() != k || t.num_classes() != k {
            return Err(Error::shape(format!(
                "item {i}: prediction has {} classes, target {}, expected {k}",
                p.num_classes(),
                t.num_classes()
            )));
        }
        if p.dims() != t.dims() {
            return Err(Error::shape(format!("item {i}: prediction {} vs target {}", p.dims(), t.dims())));
        }
    }
    Ok(k)
}

struct DiceSums {
    inter: Vec<f64>,
    pred: Vec<f64>,
    truth: Vec<f64>,
}

fn dice_sums(preds: &[ProbGrid], targets: &[LabelGrid], k: usize) -> DiceSums {
    let mut s = DiceSums { inter: vec![0.0; k], pred: vec![0.0; k], truth: vec![0.0; k] };
    for (p, t) in preds.iter().zip(targets) {
        for (probs, &label) in p.data().chunks_exact(k).zip(t.data()) {
            let c = usize::from(label);
            for (acc, &v) in s.pred.iter_mut().zip(probs) {
                *acc += v;
            }
            s.inter[c] += probs[c];
            s.truth[c] += 1.0;
        }
    }
    s
}

/// Multi-class soft Dice loss: `1 − mean_c (2Σp·t + ε) / (Σp + Σt + ε)`,
/// sums over all voxels of the batch, mean over every class including background.
pub fn soft_dice_loss(preds: &[ProbGrid], targets: &[LabelGrid], smoothing: f64) -> Result<f64> {
    if smoothing <= 0.0 {
        return Err(Error::value("Dice smoothing must be positive"));
    }
    let k = check_pairs(preds, targets)?;
    let s = dice_sums(preds, targets, k);
    let mean: f64 =
        (0..k).map(|c| (2.0 * s.inter[c] + smoothing) / (s.pred[c] + s.truth[c] + smoothing)).sum::<f64>() / k as f64;
    Ok(1.0 - mean)
}

/// Mean over voxels of `−ln max(p[target], 1e-12)`.
pub fn cross_entropy_loss(preds: &[ProbGrid], targets: &[LabelGrid]) -> Result<f64> {
    let k = check_pairs(preds, targets)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        for (probs, &label) in p.data().chunks_exact(k).zip(t.data()) {
            sum -= probs[usize::from(label)].max(PROB_FLOOR).ln();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Loss on the displaced batch: `½ ℓ_ce + ½ ℓ_dice`.
pub fn displacement_loss(preds: &[ProbGrid], targets: &[LabelGrid]) -> Result<f64> {
    Ok(0.5 * cross_entropy_loss(preds, targets)? + 0.5 * soft_dice_loss(preds, targets, DICE_SMOOTHING)?)
}

/// Loss value and its gradient with respect to every probability entry
/// (one vector per grid, laid out like [`ProbGrid::data`]).
pub fn loss_with_grad(kind: LossKind, preds: &[ProbGrid], targets: &[LabelGrid]) -> Result<(f64, Vec<Vec<f64>>)> {
    let k = check_pairs(preds, targets)?;
    match kind {
        LossKind::Dice => Ok(dice_with_grad(preds, targets, k)),
        LossKind::CrossEntropy => Ok(ce_with_grad(preds, targets, k)),
        LossKind::Hybrid => {
            let (ce, mut g) = ce_with_grad(preds, targets, k);
            let (dice, gd) = dice_with_grad(preds, targets, k);
            for (a, b) in g.iter_mut().zip(&gd) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = 0.5 * *x + 0.5 * y;
                }
            }
            Ok((0.5 * ce + 0.5 * dice, g))
        }
    }
}

fn dice_with_grad(preds: &[ProbGrid], targets: &[LabelGrid], k: usize) -> (f64, Vec<Vec<f64>>) {
    let eps = DICE_SMOOTHING;
    let s = dice_sums(preds, targets, k);
    let mut mean = 0.0;
    // d/dp_c of the class-c ratio: (2 t (P+T+ε) − (2I+ε)) / (P+T+ε)²
    let mut hit = vec![0.0; k];
    let mut miss = vec![0.0; k];
    for c in 0..k {
        let den = s.pred[c] + s.truth[c] + eps;
        let num = 2.0 * s.inter[c] + eps;
        mean += num / den;
        miss[c] = num / (den * den) / k as f64;
        hit[c] = miss[c] - 2.0 / den / k as f64;
    }
    let loss = 1.0 - mean / k as f64;
    let grads = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let mut g = Vec::with_capacity(p.data().len());
            for &label in t.data() {
                g.extend_from_slice(&miss);
                let last = g.len() - k + usize::from(label);
                g[last] = hit[usize::from(label)];
            }
            g
        })
        .collect();
    (loss, grads)
}

fn ce_with_grad(preds: &[ProbGrid], targets: &[LabelGrid], k: usize) -> (f64, Vec<Vec<f64>>) {
    let total: usize = targets.iter().map(|t| t.data().len()).sum();
    let scale = 1.0 / total as f64;
    let mut sum = 0.0;
    let grads = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let mut g = vec![0.0; p.data().len()];
            for (i, (probs, &label)) in p.data().chunks_exact(k).zip(t.data()).enumerate() {
                let c = usize::from(label);
                let v = probs[c];
                sum -= v.max(PROB_FLOOR).ln();
                if v > PROB_FLOOR {
                    g[i * k + c] = -scale / v;
                }
            }
            g
        })
        .collect();
    (sum * scale, grads)
}

/// Consistency weight α and displacement weight λ_disp; β is always α·λ_disp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    alpha: f64,
    lambda_disp: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, lambda_disp: f64) -> Result<Self> {
        if !(alpha >= 0.0 && lambda_disp >= 0.0 && alpha.is_finite() && lambda_disp.is_finite()) {
            return Err(Error::value(format!(
                "loss weights must be finite and nonnegative (α={alpha}, λ_disp={lambda_disp})"
            )));
        }
        Ok(LossWeights { alpha, lambda_disp })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda_disp(&self) -> f64 {
        self.lambda_disp
    }

    pub fn beta(&self) -> f64 {
        self.alpha * self.lambda_disp
    }
}

/// `L_layer^L + α L_layer^U + β L_disp`.
pub fn total_loss(layer_labeled: f64, layer_unlabeled: f64, disp: f64, weights: LossWeights) -> f64 {
    layer_labeled + weights.alpha() * layer_unlabeled + weights.beta() * disp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;

    fn labels(dims: Dims, k: usize, f: impl Fn(usize) -> u8) -> LabelGrid {
        LabelGrid::new(dims, k, (0..dims.len()).map(f).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction_has_tiny_dice_loss() {
        let d = Dims::new(10, 10, 10).unwrap();
        let y = labels(d, 3, |i| (i % 3) as u8);
        let loss = soft_dice_loss(&[ProbGrid::one_hot(&y)], &[y], DICE_SMOOTHING).unwrap();
        assert!(loss.abs() <= 1e-6, "{loss}");
    }

    #[test]
    fn complementary_prediction_has_unit_dice_loss() {
        let d = Dims::new(4, 4, 4).unwrap();
        let y = labels(d, 2, |i| (i % 2) as u8);
        let flipped = labels(d, 2, |i| 1 - (i % 2) as u8);
        let loss = soft_dice_loss(&[ProbGrid::one_hot(&flipped)], &[y], DICE_SMOOTHING).unwrap();
        assert!((loss - 1.0).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn half_overlap_binary_dice() {
        // 8 voxels, foreground: truth {0,1,2,3}, prediction {2,3,4,5}.
        // Class 1: 2·2/(4+4) = 0.5; class 0: truth {4..8}, pred {0,1,6,7}: 2·2/8 = 0.5.
        let d = Dims::new(1, 1, 8).unwrap();
        let y = labels(d, 2, |i| u8::from(i < 4));
        let p = labels(d, 2, |i| u8::from((2..6).contains(&i)));
        let loss = soft_dice_loss(&[ProbGrid::one_hot(&p)], &[y], DICE_SMOOTHING).unwrap();
        assert!((loss - 0.5).abs() < 1e-5, "{loss}");
    }

    #[test]
    fn cross_entropy_reference_values() {
        let d = Dims::new(2, 2, 2).unwrap();
        let y = labels(d, 4, |i| (i % 4) as u8);
        assert_eq!(cross_entropy_loss(&[ProbGrid::one_hot(&y)], std::slice::from_ref(&y)).unwrap(), 0.0);
        let uniform = cross_entropy_loss(&[ProbGrid::uniform(d, 4)], std::slice::from_ref(&y)).unwrap();
        assert!((uniform - 4f64.ln()).abs() < 1e-12);
        let y2 = labels(d, 2, |_| 1);
        let half = cross_entropy_loss(&[ProbGrid::uniform(d, 2)], &[y2]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_finite_on_zero_probability() {
        let d = Dims::new(1, 1, 1).unwrap();
        let p = ProbGrid::new(d, 2, vec![1.0, 0.0]).unwrap();
        let y = labels(d, 2, |_| 1);
        let v = cross_entropy_loss(&[p], &[y]).unwrap();
        assert!((v + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn displacement_loss_is_the_component_mean() {
        let d = Dims::new(1, 1, 8).unwrap();
        let y = labels(d, 2, |i| u8::from(i < 4));
        let p = labels(d, 2, |i| u8::from((2..6).contains(&i)));
        let y1 = ProbGrid::one_hot(&y);
        assert!(displacement_loss(&[y1], std::slice::from_ref(&y)).unwrap().abs() < 1e-6);

        let soft = ProbGrid::from_logits(d, 2, (0..16).map(|i| (i as f64).cos()).collect()).unwrap();
        let ce = cross_entropy_loss(std::slice::from_ref(&soft), std::slice::from_ref(&p)).unwrap();
        let dice = soft_dice_loss(std::slice::from_ref(&soft), std::slice::from_ref(&p), DICE_SMOOTHING).unwrap();
        let disp = displacement_loss(&[soft], &[p]).unwrap();
        assert!((disp - 0.5 * (ce + dice)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weights() {
        let w0 = LossWeights::new(0.0, 0.25).unwrap();
        assert_eq!(total_loss(0.2, 0.4, 0.8, w0), 0.2);
        let w = LossWeights::new(1.0, 0.25).unwrap();
        assert!((total_loss(0.2, 0.4, 0.8, w) - 0.8).abs() < 1e-15);
        assert_eq!(w.beta(), 0.25);
        let c = 3.0;
        assert!((total_loss(0.2 * c, 0.4 * c, 0.8 * c, w) - c * 0.8).abs() < 1e-12);
        assert!(LossWeights::new(-1.0, 0.25).is_err());
    }

    #[test]
    fn mismatched_classes_are_rejected() {
        let d = Dims::new(1, 1, 2).unwrap();
        let y = labels(d, 3, |_| 0);
        assert!(soft_dice_loss(&[ProbGrid::uniform(d, 2)], &[y], DICE_SMOOTHING).is_err());
    }

    #[test]
    fn probability_gradients_match_finite_differences() {
        let d = Dims::new(1, 2, 3).unwrap();
        let k = 3;
        let y = labels(d, k, |i| (i * 7 % 3) as u8);
        let raw: Vec<f64> = (0..d.len() * k).map(|i| 0.2 + 0.6 * ((i as f64 * 1.3).sin().abs())).collect();
        // Losses are defined on any positive table; differentiate entries directly.
        for kind in [LossKind::Dice, LossKind::CrossEntropy, LossKind::Hybrid] {
            let grid = |v: Vec<f64>| {
                use crate::grid::{Grid, Lattice};
                ProbGrid::uniform(d, k).rewrap(Grid::from_vec(d, k, v).unwrap())
            };
            let (_, g) = loss_with_grad(kind, &[grid(raw.clone())], std::slice::from_ref(&y)).unwrap();
            for i in 0..raw.len() {
                let h = 1e-6;
                let mut up = raw.clone();
                up[i] += h;
                let mut down = raw.clone();
                down[i] -= h;
                let f = |v| loss_with_grad(kind, &[grid(v)], std::slice::from_ref(&y)).unwrap().0;
                let fd = (f(up) - f(down)) / (2.0 * h);
                assert!((fd - g[0][i]).abs() < 1e-7 * (1.0 + fd.abs()), "{kind:?} entry {i}: {fd} vs {}", g[0][i]);
            }
        }
    }
}
