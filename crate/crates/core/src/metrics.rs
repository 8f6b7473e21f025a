//! Evaluation metrics on binary masks: Dice overlap in percent and the 95th
//! percentile Hausdorff distance in mm.

use crate::error::{Error, Result};
use crate::grid::Dims;

#[inline]
fn is_set(v: f64) -> bool {
    v >= 0.5
}

/// `100·2|a∩b| / (|a|+|b|)`; 100 when both masks are empty.
pub fn dice_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "mask lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (is_set(x), is_set(y));
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    }
    if na + nb == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / (na + nb) as f64)
}

/// Voxels that are set and either touch the grid edge or have an unset 6-neighbour.
pub fn surface_voxels(mask: &[f64], dims: Dims) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let [w, h, d] = dims.as_array();
    for (i, (x, y, z)) in dims.iter().enumerate() {
        if !is_set(mask[i]) {
            continue;
        }
        let edge = x == 0 || y == 0 || z == 0 || x == w - 1 || y == h - 1 || z == d - 1;
        let boundary = edge
            || !is_set(mask[dims.index(x - 1, y, z)])
            || !is_set(mask[dims.index(x + 1, y, z)])
            || !is_set(mask[dims.index(x, y - 1, z)])
            || !is_set(mask[dims.index(x, y + 1, z)])
            || !is_set(mask[dims.index(x, y, z - 1)])
            || !is_set(mask[dims.index(x, y, z + 1)]);
        if boundary {
            out.push((x, y, z));
        }
    }
    out
}

/// Linearly interpolated quantile of an ascending-sorted sample
/// (`h = (n−1)·q`, interpolate between order statistics `⌊h⌋` and `⌊h⌋+1`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn directed_distances(from: &[[f64; 3]], to: &[[f64; 3]], out: &mut Vec<f64>) {
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            let dz = p[2] - q[2];
            best = best.min(dx * dx + dy * dy + dz * dz);
        }
        out.push(best.sqrt());
    }
}

/// 95th percentile Hausdorff distance in mm.
///
/// Surface-to-surface nearest distances are collected in both directions,
/// pooled into one sample and summarised by [`quantile_sorted`] at 0.95.
/// An empty mask is an error so callers can report the class as missing.
pub fn hd95(a: &[f64], b: &[f64], dims: Dims, spacing: [f64; 3]) -> Result<f64> {
    if a.len() != dims.len() || b.len() != dims.len() {
        return Err(Error::InvalidParameter(format!(
            "mask lengths {} and {} do not match grid {dims}",
            a.len(),
            b.len()
        )));
    }
    let to_mm = |s: Vec<(usize, usize, usize)>| -> Vec<[f64; 3]> {
        s.into_iter()
            .map(|(x, y, z)| {
                [
                    x as f64 * spacing[0],
                    y as f64 * spacing[1],
                    z as f64 * spacing[2],
                ]
            })
            .collect()
    };
    let sa = to_mm(surface_voxels(a, dims));
    let sb = to_mm(surface_voxels(b, dims));
    if sa.is_empty() || sb.is_empty() {
        return Err(Error::EmptyMask("hd95 needs two non-empty masks".into()));
    }
    let mut pooled = Vec::with_capacity(sa.len() + sb.len());
    directed_distances(&sa, &sb, &mut pooled);
    directed_distances(&sb, &sa, &mut pooled);
    pooled.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&pooled, 0.95))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(dims: Dims, x: usize, y: usize, z: usize) -> Vec<f64> {
        let mut v = vec![0.0; dims.len()];
        v[dims.index(x, y, z)] = 1.0;
        v
    }

    #[test]
    fn dice_score_cases() {
        let a = vec![1.0, 1.0, 0.0, 0.0];
        let b = vec![0.0, 1.0, 1.0, 0.0];
        let c = vec![0.0, 0.0, 0.0, 1.0];
        assert_eq!(dice_score(&a, &a).unwrap(), 100.0);
        assert_eq!(dice_score(&a, &c).unwrap(), 0.0);
        assert_eq!(dice_score(&a, &b).unwrap(), 50.0);
        assert_eq!(dice_score(&[0.0; 4], &[0.0; 4]).unwrap(), 100.0);
    }

    #[test]
    fn hd95_identical_is_zero() {
        let dims = Dims::cube(6);
        let m: Vec<f64> = dims
            .iter()
            .map(|(x, y, z)| {
                if (1..4).contains(&x) && y < 3 && z > 1 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(hd95(&m, &m, dims, [1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn hd95_single_voxels() {
        let dims = Dims::cube(8);
        let a = single(dims, 1, 4, 4);
        let b = single(dims, 4, 4, 4);
        assert_eq!(hd95(&a, &b, dims, [1.0; 3]).unwrap(), 3.0);
        assert_eq!(hd95(&a, &b, dims, [2.0, 1.0, 1.0]).unwrap(), 6.0);
    }

    #[test]
    fn hd95_empty_is_error() {
        let dims = Dims::cube(4);
        let a = single(dims, 1, 1, 1);
        assert!(matches!(
            hd95(&a, &vec![0.0; dims.len()], dims, [1.0; 3]),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn interior_voxels_are_not_surface() {
        let dims = Dims::cube(5);
        let m = vec![1.0; dims.len()];
        // the whole grid is set, so only the edge shell counts
        assert_eq!(surface_voxels(&m, dims).len(), 125 - 27);
    }

    #[test]
    fn quantile_interpolates() {
        let s: Vec<f64> = (0..21).map(f64::from).collect();
        assert_eq!(quantile_sorted(&s, 0.95), 19.0);
        assert_eq!(quantile_sorted(&[0.0, 10.0], 0.95), 9.5);
        assert_eq!(quantile_sorted(&[4.0], 0.95), 4.0);
    }
}
