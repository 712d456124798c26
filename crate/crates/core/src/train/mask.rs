//! Gradient-ranked feature masks.
//!
//! Both masking trainers zero the features whose gradient magnitudes rank in
//! the top `q` percent; they differ only in which gradient they rank (the
//! true-domain logit for the domain-masking trainer, the true-class logit
//! for the self-challenging one).

use crate::error::{DgError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Entries zeroed per row of width `width` at percentile `q`.
pub fn mask_zero_count(width: usize, q: f64) -> usize {
    (q / 100.0 * width as f64 + 0.5).floor() as usize
}

/// Per-row mask over a `[batch, width]` gradient matrix: the
/// `round(q/100 * width)` entries with the largest `|grad|` get 0, the rest
/// 1. Ties break toward the lower index.
pub fn top_fraction_mask<T: Scalar>(grads: &Tensor<T>, q: f64) -> Result<Tensor<T>> {
    if !(0.0..=100.0).contains(&q) {
        return Err(DgError::Config(format!("percentile {q} outside [0, 100]")));
    }
    if grads.rank() != 2 {
        return Err(DgError::Dimension(format!(
            "mask expects [batch, width] gradients, got {:?}",
            grads.shape()
        )));
    }
    let (batch, width) = (grads.shape()[0], grads.shape()[1]);
    let k = mask_zero_count(width, q).min(width);
    let mut mask = vec![T::one(); batch * width];
    let mut order: Vec<usize> = Vec::with_capacity(width);
    for b in 0..batch {
        let row = &grads.data()[b * width..(b + 1) * width];
        order.clear();
        order.extend(0..width);
        // stable sort by descending magnitude keeps lower indices first on ties
        order.sort_by(|&i, &j| {
            row[j]
                .abs()
                .partial_cmp(&row[i].abs())
                .expect("finite gradients")
        });
        for &i in &order[..k] {
            mask[b * width + i] = T::zero();
        }
    }
    Tensor::from_vec(vec![batch, width], mask)
}

/// Batch-mean variant: ranks the batch-averaged `|grad|` once and applies
/// the same mask row to every sample.
pub fn top_fraction_mask_batch_mean<T: Scalar>(grads: &Tensor<T>, q: f64) -> Result<Tensor<T>> {
    if grads.rank() != 2 {
        return Err(DgError::Dimension(format!(
            "mask expects [batch, width] gradients, got {:?}",
            grads.shape()
        )));
    }
    let (batch, width) = (grads.shape()[0], grads.shape()[1]);
    let mut mean = vec![T::zero(); width];
    for b in 0..batch {
        for i in 0..width {
            mean[i] += grads.data()[b * width + i].abs();
        }
    }
    let row = top_fraction_mask(&Tensor::from_vec(vec![1, width], mean)?, q)?;
    let mut mask = Vec::with_capacity(batch * width);
    for _ in 0..batch {
        mask.extend_from_slice(row.data());
    }
    Tensor::from_vec(vec![batch, width], mask)
}

/// Mask from per-sample gradients of the true-domain logit w.r.t. `g`.
pub fn idfm_mask<T: Scalar>(domain_grad: &Tensor<T>, q: f64) -> Result<Tensor<T>> {
    top_fraction_mask(domain_grad, q)
}

/// Mask from per-sample gradients of the true-class logit w.r.t. `g`.
pub fn rsc_mask<T: Scalar>(class_grad: &Tensor<T>, q: f64) -> Result<Tensor<T>> {
    top_fraction_mask(class_grad, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(vec![1, vals.len()], vals.to_vec()).unwrap()
    }

    #[test]
    fn spec_example_masks_two_of_six() {
        let grads = row(&[0.9, 0.1, 0.5, 0.2, 0.8, 0.3]);
        let mask = idfm_mask(&grads, 33.0).unwrap();
        assert_eq!(mask.data(), &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_percentile_is_all_ones() {
        let grads = row(&[0.4, 0.2, 0.9]);
        let mask = idfm_mask(&grads, 0.0).unwrap();
        assert_eq!(mask.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn hundred_percentile_is_all_zeros() {
        let grads = row(&[0.4, 0.2, 0.9]);
        let mask = rsc_mask(&grads, 100.0).unwrap();
        assert_eq!(mask.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_break_toward_lower_indices() {
        let grads = row(&[0.5, 0.5, 0.5, 0.5]);
        let mask = idfm_mask(&grads, 50.0).unwrap();
        assert_eq!(mask.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn magnitude_ranking_ignores_sign() {
        let grads = row(&[-0.9, 0.1, -0.5, 0.2, 0.8, 0.3]);
        let mask = idfm_mask(&grads, 33.0).unwrap();
        assert_eq!(mask.data(), &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rows_are_masked_independently() {
        let grads = Tensor::from_vec(
            vec![2, 4],
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let mask = idfm_mask(&grads, 25.0).unwrap();
        assert_eq!(mask.data(), &[0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_counts_match_rounding() {
        assert_eq!(mask_zero_count(6, 33.0), 2);
        assert_eq!(mask_zero_count(64, 33.0), 21);
        assert_eq!(mask_zero_count(65, 33.0), 21);
        assert_eq!(mask_zero_count(65, 50.0), 33);
        assert_eq!(mask_zero_count(64, 0.0), 0);
        assert_eq!(mask_zero_count(64, 100.0), 64);
    }

    #[test]
    fn batch_mean_mask_is_shared_across_rows() {
        let grads = Tensor::from_vec(
            vec![2, 4],
            vec![1.0, 0.0, 0.2, 0.0, 0.0, 0.1, 0.9, 0.0],
        )
        .unwrap();
        // mean magnitudes: [0.5, 0.05, 0.55, 0.0] -> top 50% = indices 2, 0
        let mask = top_fraction_mask_batch_mean(&grads, 50.0).unwrap();
        assert_eq!(mask.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn percentile_out_of_range_is_rejected() {
        assert!(idfm_mask(&row(&[0.1]), 101.0).is_err());
        assert!(idfm_mask(&row(&[0.1]), -1.0).is_err());
    }
}
