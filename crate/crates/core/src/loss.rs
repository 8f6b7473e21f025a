//! Training losses: soft Dice, weak supervision through the warp, and
//! displacement consistency.
//!
//! The `*_with_grad` variants also return the gradient with respect to the
//! predicted displacement field, which seeds the model's backward pass.

use crate::error::{Error, Result};
use crate::grid::{Ddf, MaskSet};
use crate::warp::{warp_channel, warp_channel_with_grad};

/// `−2·Σ(w·r) / (Σw + Σr)`; defined as 0 when both masks are empty.
pub fn dice_loss(warped: &[f64], reference: &[f64]) -> Result<f64> {
    if warped.len() != reference.len() {
        return Err(Error::InvalidParameter(format!(
            "mask lengths differ: {} vs {}",
            warped.len(),
            reference.len()
        )));
    }
    let (inter, denom) = dice_terms(warped, reference);
    Ok(if denom == 0.0 {
        0.0
    } else {
        -2.0 * inter / denom
    })
}

fn dice_terms(w: &[f64], r: &[f64]) -> (f64, f64) {
    let mut inter = 0.0;
    let mut sum = 0.0;
    for (&a, &b) in w.iter().zip(r) {
        inter += a * b;
        sum += a + b;
    }
    (inter, sum)
}

/// Dice loss and its gradient with respect to `warped`.
pub fn dice_loss_with_grad(warped: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = dice_loss(warped, reference)?;
    let (inter, denom) = dice_terms(warped, reference);
    if denom == 0.0 {
        return Ok((0.0, vec![0.0; warped.len()]));
    }
    // ∂/∂w_i of −2I/S = −2r_i/S + 2I/S²
    let a = -2.0 / denom;
    let b = 2.0 * inter / (denom * denom);
    let grad = reference.iter().map(|&r| a * r + b).collect();
    Ok((loss, grad))
}

fn check_masks(moving: &MaskSet, fixed: &MaskSet, ddf: &Ddf) -> Result<()> {
    moving.dims().expect_same(&fixed.dims())?;
    moving.dims().expect_same(&ddf.dims())?;
    if moving.classes() != fixed.classes() {
        return Err(Error::ClassMismatch {
            expected: moving.classes(),
            found: fixed.classes(),
        });
    }
    Ok(())
}

/// Class-mean Dice loss between moving masks warped by `ddf` and the fixed masks.
pub fn weak_supervision_loss(moving: &MaskSet, fixed: &MaskSet, ddf: &Ddf) -> Result<f64> {
    check_masks(moving, fixed, ddf)?;
    let c = moving.classes();
    let mut total = 0.0;
    for k in 0..c {
        let warped = warp_channel(moving.channel(k), ddf);
        total += dice_loss(&warped, fixed.channel(k))?;
    }
    Ok(total / c as f64)
}

/// Weak-supervision loss and its gradient with respect to `ddf`.
pub fn weak_supervision_loss_with_grad(
    moving: &MaskSet,
    fixed: &MaskSet,
    ddf: &Ddf,
) -> Result<(f64, Ddf)> {
    check_masks(moving, fixed, ddf)?;
    let c = moving.classes();
    let n = ddf.dims().len();
    let mut total = 0.0;
    let mut grad = vec![0.0; 3 * n];
    for k in 0..c {
        let (warped, dwdu) = warp_channel_with_grad(moving.channel(k), ddf);
        let (loss, dldw) = dice_loss_with_grad(&warped, fixed.channel(k))?;
        total += loss;
        for i in 0..n {
            let g = dldw[i] / c as f64;
            grad[i] += g * dwdu[i][0];
            grad[n + i] += g * dwdu[i][1];
            grad[2 * n + i] += g * dwdu[i][2];
        }
    }
    Ok((total / c as f64, Ddf::from_raw(ddf.dims(), grad)))
}

/// Mean of squared component differences over all channels and voxels.
pub fn mse_consistency(a: &Ddf, b: &Ddf) -> Result<f64> {
    a.dims().expect_same(&b.dims())?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// MSE between a fixed `target` and a prediction, with the gradient with
/// respect to `prediction`. The target receives no gradient.
pub fn mse_consistency_with_grad(target: &Ddf, prediction: &Ddf) -> Result<(f64, Ddf)> {
    let loss = mse_consistency(target, prediction)?;
    let scale = 2.0 / prediction.data().len() as f64;
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Ok((loss, Ddf::from_raw(prediction.dims(), grad)))
}

/// `weak + α·consistency`.
pub fn total_loss(weak: f64, consistency: f64, alpha: f64) -> f64 {
    weak + alpha * consistency
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Dims, MaskMode};

    fn mask(dims: Dims, on: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; dims.len()];
        for &i in on {
            v[i] = 1.0;
        }
        v
    }

    #[test]
    fn dice_loss_cases() {
        let dims = Dims::cube(2);
        let a = mask(dims, &[0, 1]);
        let b = mask(dims, &[1, 2]);
        let c = mask(dims, &[5, 6]);
        assert_eq!(dice_loss(&a, &a).unwrap(), -1.0);
        assert_eq!(dice_loss(&a, &c).unwrap(), 0.0);
        assert_eq!(dice_loss(&a, &b).unwrap(), -0.5);
        assert_eq!(dice_loss(&mask(dims, &[]), &mask(dims, &[])).unwrap(), 0.0);
        assert!(dice_loss(&a, &a[..4]).is_err());
    }

    #[test]
    fn weak_loss_is_class_mean() {
        let dims = Dims::cube(2);
        let mut labels_a = vec![0; 8];
        labels_a[0] = 1;
        labels_a[1] = 2;
        let mut labels_b = vec![0; 8];
        labels_b[0] = 1;
        labels_b[7] = 2;
        let a = MaskSet::from_labels(dims, 2, &labels_a).unwrap();
        let b = MaskSet::from_labels(dims, 2, &labels_b).unwrap();
        let id = Ddf::zeros(dims);
        assert_eq!(weak_supervision_loss(&a, &a, &id).unwrap(), -1.0);
        assert_eq!(weak_supervision_loss(&a, &b, &id).unwrap(), -0.5);
    }

    #[test]
    fn weak_loss_class_mismatch() {
        let dims = Dims::cube(2);
        let a = MaskSet::new(dims, 1, MaskMode::Binary, vec![0.0; 8]).unwrap();
        let b = MaskSet::new(dims, 2, MaskMode::Binary, vec![0.0; 16]).unwrap();
        assert!(matches!(
            weak_supervision_loss(&a, &b, &Ddf::zeros(dims)),
            Err(Error::ClassMismatch { .. })
        ));
    }

    #[test]
    fn mse_cases() {
        let dims = Dims::cube(3);
        let a = Ddf::constant(dims, [1.0, 2.0, 3.0]);
        let b = Ddf::constant(dims, [3.0, 0.0, 5.0]);
        assert_eq!(mse_consistency(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_consistency(&a, &b).unwrap(), 4.0);
        assert!(mse_consistency(&a, &Ddf::zeros(Dims::cube(2))).is_err());
    }

    #[test]
    fn total_loss_is_weighted_sum() {
        assert_eq!(total_loss(-0.5, 0.2, 0.0), -0.5);
        assert!((total_loss(-0.5, 0.2, 1.0) + 0.3).abs() < 1e-15);
    }
}
