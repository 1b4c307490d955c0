//! Per-voxel linear softmax segmentor used by the training harness.
//!
//! Each voxel is described by four features: its intensity and its
//! normalized (z, y, x) position. Logits are `Wᵀφ + b`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{softmax_in_place, Dims, LabelGrid, ProbGrid, VolumeGrid};
use crate::losses::{loss_with_grad, LossKind};

pub const FEATURES: usize = 4;

/// Weights (`FEATURES × classes`, feature-major) followed by biases, in one
/// flat vector so optimizers and EMA can treat parameters uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentorParams {
    num_classes: usize,
    values: Vec<f64>,
}

impl SegmentorParams {
    pub fn zeros(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::value("a segmentor needs at least two classes"));
        }
        Ok(SegmentorParams { num_classes, values: vec![0.0; (FEATURES + 1) * num_classes] })
    }

    /// Small Gaussian weights, zero bias.
    pub fn random<R: Rng + ?Sized>(num_classes: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = SegmentorParams::zeros(num_classes)?;
        let normal = Normal::new(0.0, scale).map_err(|e| Error::value(e.to_string()))?;
        for w in &mut p.values[..FEATURES * num_classes] {
            *w = normal.sample(rng);
        }
        Ok(p)
    }

    pub fn from_values(num_classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != (FEATURES + 1) * num_classes {
            return Err(Error::shape(format!("{} parameters do not fit {num_classes} classes", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::value("parameters must be finite"));
        }
        Ok(SegmentorParams { num_classes, values })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn weight(&self, feature: usize, class: usize) -> f64 {
        self.values[feature * self.num_classes + class]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.values[FEATURES * self.num_classes + class]
    }

    pub fn set_weight(&mut self, feature: usize, class: usize, v: f64) {
        self.values[feature * self.num_classes + class] = v;
    }

    pub fn set_bias(&mut self, class: usize, v: f64) {
        self.values[FEATURES * self.num_classes + class] = v;
    }
}

/// Feature vector `(value, z/d, y/h, x/w)` of voxel `index`.
#[inline]
pub fn features(dims: Dims, index: usize, value: f32) -> [f64; FEATURES] {
    let [z, y, x] = dims.coords(index);
    [f64::from(value), z as f64 / dims.d() as f64, y as f64 / dims.h() as f64, x as f64 / dims.w() as f64]
}

/// `softmax(Wᵀφ + b)` at every voxel.
pub fn forward(params: &SegmentorParams, volume: &VolumeGrid) -> ProbGrid {
    let k = params.num_classes;
    let dims = volume.dims();
    let [d, h, w] = dims.as_array();
    let mut out = vec![0.0; dims.len() * k];
    let weights = |f: usize| &params.values[f * k..(f + 1) * k];
    let bias = &params.values[FEATURES * k..];
    // The positional part of the logits is accumulated plane by plane and row by row.
    let mut plane = vec![0.0; k];
    let mut row = vec![0.0; k];
    let mut voxels = volume.data().iter().zip(out.chunks_exact_mut(k));
    for z in 0..d {
        let fz = z as f64 / d as f64;
        for c in 0..k {
            plane[c] = bias[c] + fz * weights(1)[c];
        }
        for y in 0..h {
            let fy = y as f64 / h as f64;
            for c in 0..k {
                row[c] = plane[c] + fy * weights(2)[c];
            }
            for x in 0..w {
                let fx = x as f64 / w as f64;
                let (&v, logits) = voxels.next().expect("one voxel per output row");
                let v = f64::from(v);
                for c in 0..k {
                    logits[c] = row[c] + fx * weights(3)[c] + v * weights(0)[c];
                }
                softmax_in_place(logits);
            }
        }
    }
    ProbGrid::from_normalized(dims, k, out)
}

/// Gradient of a loss with respect to the parameters, given the loss's
/// gradient with respect to the probabilities of each prediction.
pub fn backprop(
    params: &SegmentorParams,
    volumes: &[VolumeGrid],
    preds: &[ProbGrid],
    prob_grads: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let k = params.num_classes;
    if volumes.len() != preds.len() || preds.len() != prob_grads.len() {
        return Err(Error::Arity { what: "predictions per volume", expected: volumes.len(), got: preds.len() });
    }
    let mut grad = vec![0.0; params.values.len()];
    let (gw, gb) = grad.split_at_mut(FEATURES * k);
    let mut dz = vec![0.0; k];
    for ((vol, pred), pg) in volumes.iter().zip(preds).zip(prob_grads) {
        let dims = vol.dims();
        if pred.dims() != dims || pred.num_classes() != k || pg.len() != pred.data().len() {
            return Err(Error::shape("prediction does not match its volume"));
        }
        let [d, h, w] = dims.as_array();
        let mut voxels = vol.data().iter().zip(pred.data().chunks_exact(k).zip(pg.chunks_exact(k)));
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let (&v, (p, g)) = voxels.next().expect("one voxel per prediction row");
                    // Softmax Jacobian: dz_c = p_c (g_c − Σ_j g_j p_j)
                    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    for c in 0..k {
                        dz[c] = p[c] * (g[c] - dot);
                    }
                    let phi = [f64::from(v), z as f64 / d as f64, y as f64 / h as f64, x as f64 / w as f64];
                    for (f, &feature) in phi.iter().enumerate() {
                        for (acc, &dzc) in gw[f * k..(f + 1) * k].iter_mut().zip(&dz) {
                            *acc += feature * dzc;
                        }
                    }
                    for (acc, &dzc) in gb.iter_mut().zip(&dz) {
                        *acc += dzc;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Forward pass, loss and parameter gradient for a batch.
pub fn backward(
    params: &SegmentorParams,
    volumes: &[VolumeGrid],
    targets: &[LabelGrid],
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let preds: Vec<ProbGrid> = volumes.iter().map(|v| forward(params, v)).collect();
    let (loss, pg) = loss_with_grad(kind, &preds, targets)?;
    Ok((loss, backprop(params, volumes, &preds, &pg)?))
}
