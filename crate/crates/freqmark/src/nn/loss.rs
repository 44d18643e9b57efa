//! Loss terms and their gradients.
//!
//! Classification terms use softmax cross-entropy; the similarity term is a
//! margin contrastive loss over hidden features of randomly matched sample
//! pairs. Every function returns the loss value together with the gradient
//! at its direct input, already averaged over the batch or pair count.

use super::model::{t, Scalar};
use crate::rng::SeededRng;

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean softmax cross-entropy over a batch of logit rows. Returns the loss
/// and `d loss / d logits`, scaled by `1/batch`.
pub fn cross_entropy<T: Scalar>(
    logits: &[T],
    num_classes: usize,
    labels: &[usize],
) -> (f64, Vec<T>) {
    let batch = labels.len();
    assert_eq!(logits.len(), batch * num_classes);
    let inv = t::<T>(1.0 / batch as f64);
    let mut loss = 0.0f64;
    let mut grad = vec![T::zero(); logits.len()];
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * num_classes..(b + 1) * num_classes];
        let probs = softmax(row);
        let p = probs[label].max(t(1e-300));
        loss -= p.to_f64().unwrap().ln();
        let grow = &mut grad[b * num_classes..(b + 1) * num_classes];
        for (g, &p) in grow.iter_mut().zip(&probs) {
            *g = p * inv;
        }
        grow[label] -= inv;
    }
    (loss / batch as f64, grad)
}

/// Mean KL divergence from a teacher distribution to the student softmax,
/// both taken at `temperature` (the student logits are divided by it, the
/// teacher rows are assumed already softened to match). The loss carries
/// the usual `temperature²` factor so gradient magnitudes stay on the
/// cross-entropy scale; at temperature 1 this is the plain soft-label
/// analogue of [`cross_entropy`] with gradient `(softmax − teacher)/batch`.
pub fn kl_to_teacher<T: Scalar>(
    logits: &[T],
    num_classes: usize,
    teacher: &[T],
    temperature: f64,
) -> (f64, Vec<T>) {
    assert_eq!(logits.len(), teacher.len());
    let batch = logits.len() / num_classes;
    let temp = t::<T>(temperature);
    let inv = t::<T>(temperature / batch as f64);
    let mut loss = 0.0f64;
    let mut grad = vec![T::zero(); logits.len()];
    for b in 0..batch {
        let row: Vec<T> =
            logits[b * num_classes..(b + 1) * num_classes].iter().map(|&z| z / temp).collect();
        let trow = &teacher[b * num_classes..(b + 1) * num_classes];
        let probs = softmax(&row);
        for ((g, &p), &q) in grad[b * num_classes..(b + 1) * num_classes]
            .iter_mut()
            .zip(&probs)
            .zip(trow)
        {
            let qf = q.to_f64().unwrap();
            if qf > 0.0 {
                loss += qf * (qf.ln() - p.to_f64().unwrap().max(1e-300).ln());
            }
            *g = (p - q) * inv;
        }
    }
    (loss * temperature * temperature / batch as f64, grad)
}

/// Soften a probability row to temperature `t`: `p_i^(1/t)` renormalized,
/// which equals the softmax of the underlying logits divided by `t`.
pub fn soften_probs<T: Scalar>(probs: &[T], temperature: f64) -> Vec<T> {
    let inv_t = t::<T>(1.0 / temperature);
    let raised: Vec<T> = probs.iter().map(|&p| p.max(t(1e-300)).powf(inv_t)).collect();
    let sum = raised.iter().fold(T::zero(), |a, &b| a + b);
    raised.into_iter().map(|p| p / sum).collect()
}

/// Random disjoint pairing of `0..n`: a seeded shuffle read off two at a
/// time. An odd trailing element is left unpaired; `n < 2` yields no pairs.
pub fn random_pairs(n: usize, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

/// Margin contrastive loss over feature rows:
/// `mean over pairs of ½·[same · d² + diff · max(margin − d, 0)²]`
/// where `d` is the Euclidean distance between the pair's features.
///
/// Returns the loss and the gradient at `features` (zero rows for samples in
/// no pair). With no pairs the loss is zero and a warning is logged, since a
/// caller asking for a similarity term presumably wanted one.
pub fn contrastive<T: Scalar>(
    features: &[T],
    dim: usize,
    labels: &[usize],
    pairs: &[(usize, usize)],
    margin: f64,
) -> (f64, Vec<T>) {
    let mut grad = vec![T::zero(); features.len()];
    if pairs.is_empty() {
        log::warn!("similarity term got no pairs (batch too small?); contributing zero");
        return (0.0, grad);
    }
    let n = pairs.len() as f64;
    let mut loss = 0.0f64;
    for &(i, j) in pairs {
        let fi = &features[i * dim..(i + 1) * dim];
        let fj = &features[j * dim..(j + 1) * dim];
        let mut d2 = 0.0f64;
        for (&a, &b) in fi.iter().zip(fj) {
            let diff = (a - b).to_f64().unwrap();
            d2 += diff * diff;
        }
        let d = d2.sqrt();
        if labels[i] == labels[j] {
            loss += 0.5 * d2;
            let scale = t::<T>(1.0 / n);
            for (k, (&a, &b)) in fi.iter().zip(fj).enumerate() {
                let g = (a - b) * scale;
                grad[i * dim + k] += g;
                grad[j * dim + k] -= g;
            }
        } else if d < margin {
            let gap = margin - d;
            loss += 0.5 * gap * gap;
            // d = 0 with distinct labels is a kink; use the zero subgradient
            if d > 1e-12 {
                let scale = t::<T>(-gap / (d * n));
                for (k, (&a, &b)) in fi.iter().zip(fj).enumerate() {
                    let g = (a - b) * scale;
                    grad[i * dim + k] += g;
                    grad[j * dim + k] -= g;
                }
            }
        }
    }
    (loss / n, grad)
}
