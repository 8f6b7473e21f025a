//! Affine transforms expressed as displacement fields.

use crate::error::{Error, Result};
use crate::grid::{AffineParams, Ddf, Dims};

pub type Mat3 = [[f64; 3]; 3];

/// `p ↦ matrix·p + offset` in voxel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMap {
    pub matrix: Mat3,
    pub offset: [f64; 3],
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

pub(crate) fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Rotation `Rz·Ry·Rx` from Euler angles in degrees about x, y, z.
pub fn rotation_matrix(deg: [f64; 3]) -> Mat3 {
    let [a, b, c] = deg.map(f64::to_radians);
    let rx = [
        [1.0, 0.0, 0.0],
        [0.0, a.cos(), -a.sin()],
        [0.0, a.sin(), a.cos()],
    ];
    let ry = [
        [b.cos(), 0.0, b.sin()],
        [0.0, 1.0, 0.0],
        [-b.sin(), 0.0, b.cos()],
    ];
    let rz = [
        [c.cos(), -c.sin(), 0.0],
        [c.sin(), c.cos(), 0.0],
        [0.0, 0.0, 1.0],
    ];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

impl AffineMap {
    /// `x ↦ R·S·(x − c) + c + t`.
    pub fn from_params(p: &AffineParams, dims: Dims) -> Result<Self> {
        if let Some(s) = p.scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "scale factors must be positive, got {s}"
            )));
        }
        let finite = p
            .rotation_deg
            .iter()
            .chain(&p.translation)
            .chain(p.center.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(
                "affine parameters must be finite".into(),
            ));
        }
        let c = p.center.unwrap_or_else(|| dims.center());
        let s = [
            [p.scale[0], 0.0, 0.0],
            [0.0, p.scale[1], 0.0],
            [0.0, 0.0, p.scale[2]],
        ];
        let matrix = mat_mul(&rotation_matrix(p.rotation_deg), &s);
        let mc = mat_vec(&matrix, c);
        let offset = [
            c[0] - mc[0] + p.translation[0],
            c[1] - mc[1] + p.translation[1],
            c[2] - mc[2] + p.translation[2],
        ];
        Ok(Self { matrix, offset })
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = mat_vec(&self.matrix, p);
        [
            m[0] + self.offset[0],
            m[1] + self.offset[1],
            m[2] + self.offset[2],
        ]
    }

    /// `self ∘ inner`, i.e. apply `inner` first.
    pub fn after(&self, inner: &AffineMap) -> AffineMap {
        let matrix = mat_mul(&self.matrix, &inner.matrix);
        let offset = self.apply(inner.offset);
        AffineMap { matrix, offset }
    }

    /// Displacement field `u(x) = map(x) − x`.
    pub fn to_ddf(&self, dims: Dims) -> Result<Ddf> {
        Ddf::from_fn(dims, |x, y, z| {
            let p = [x as f64, y as f64, z as f64];
            let q = self.apply(p);
            [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
        })
    }
}

/// Dense field of the affine map described by `p` on a grid of `dims`.
pub fn affine_to_ddf(p: &AffineParams, dims: Dims) -> Result<Ddf> {
    dims.validate()?;
    AffineMap::from_params(p, dims)?.to_ddf(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_params_give_zero_field() {
        let dims = Dims::new(5, 6, 4);
        let u = affine_to_ddf(&AffineParams::default(), dims).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn translation_is_constant() {
        let dims = Dims::cube(4);
        let u = affine_to_ddf(&AffineParams::translation([3.0, 0.0, 0.0]), dims).unwrap();
        for i in 0..dims.len() {
            assert_eq!(u.at(i), [3.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn scaling_about_center() {
        let dims = Dims::cube(7);
        let p = AffineParams {
            scale: [2.0; 3],
            ..AffineParams::default()
        };
        let u = affine_to_ddf(&p, dims).unwrap();
        assert_eq!(u.at(dims.index(3, 3, 3)), [0.0, 0.0, 0.0]);
        assert_eq!(u.at(dims.index(4, 3, 3)), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_non_positive_scale() {
        let p = AffineParams {
            scale: [1.0, 0.0, 1.0],
            ..AffineParams::default()
        };
        assert!(affine_to_ddf(&p, Dims::cube(3)).is_err());
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = rotation_matrix([3.0, -4.5, 5.0]);
        let rt_r = mat_mul(
            &[
                [r[0][0], r[1][0], r[2][0]],
                [r[0][1], r[1][1], r[2][1]],
                [r[0][2], r[1][2], r[2][2]],
            ],
            &r,
        );
        for (i, row) in rt_r.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-15);
            }
        }
    }
}
