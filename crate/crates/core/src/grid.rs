//! Grid containers: scalar volumes, displacement fields and mask sets.
//!
//! All grids share one memory layout: channel-major, then `z`, `y`, `x`
//! with `x` varying fastest. Displacements are in voxel units.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Voxel counts along `x`, `y` and `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub w: usize,
    pub h: usize,
    pub d: usize,
}

impl Dims {
    pub const fn new(w: usize, h: usize, d: usize) -> Self {
        Self { w, h, d }
    }

    pub const fn cube(n: usize) -> Self {
        Self { w: n, h: n, d: n }
    }

    /// Number of voxels.
    pub const fn len(&self) -> usize {
        self.w * self.h * self.d
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.w, self.h, self.d]
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.w * (y + self.h * z)
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.w;
        let y = (i / self.w) % self.h;
        let z = i / (self.w * self.h);
        (x, y, z)
    }

    /// Geometric center in voxel coordinates.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.w as f64 - 1.0) / 2.0,
            (self.h as f64 - 1.0) / 2.0,
            (self.d as f64 - 1.0) / 2.0,
        ]
    }

    /// Rejects grids with fewer than two voxels along any axis.
    pub fn validate(&self) -> Result<()> {
        if self.w < 2 || self.h < 2 || self.d < 2 {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least 2 voxels, got {self}"
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_same(&self, other: &Dims) -> Result<()> {
        if self != other {
            return Err(Error::DimsMismatch {
                expected: *self,
                found: *other,
            });
        }
        Ok(())
    }

    /// Iterates voxel coordinates in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (w, h, d) = (self.w, self.h, self.d);
        (0..d).flat_map(move |z| (0..h).flat_map(move |y| (0..w).map(move |x| (x, y, z))))
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.w, self.h, self.d)
    }
}

/// Scalar intensity volume with physical voxel spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidGrid(format!(
                "volume {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        ensure_finite("volume", &data)?;
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            spacing: [1.0; 3],
            data: vec![0.0; dims.len()],
        }
    }

    /// Builds a unit-spacing volume by evaluating `f` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let data = dims.iter().map(|(x, y, z)| f(x, y, z)).collect();
        Self::new(dims, [1.0; 3], data)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    /// `(min, max)` of the stored intensities.
    pub fn range(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Same grid, new values. Values are assumed finite.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.dims.len());
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }
}

/// Dense displacement field: three channels of per-voxel offsets in voxel units.
#[derive(Clone, Debug, PartialEq)]
pub struct Ddf {
    dims: Dims,
    data: Vec<f64>,
}

impl Ddf {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != 3 * dims.len() {
            return Err(Error::InvalidGrid(format!(
                "ddf {dims} needs {} values, got {}",
                3 * dims.len(),
                data.len()
            )));
        }
        ensure_finite("ddf", &data)?;
        Ok(Self { dims, data })
    }

    /// The all-zero field.
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; 3 * dims.len()],
        }
    }

    pub fn constant(dims: Dims, u: [f64; 3]) -> Self {
        let n = dims.len();
        let mut data = Vec::with_capacity(3 * n);
        for c in u {
            data.extend(std::iter::repeat_n(c, n));
        }
        Self { dims, data }
    }

    /// Builds a field by evaluating `f` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> [f64; 3]) -> Result<Self> {
        let n = dims.len();
        let mut data = vec![0.0; 3 * n];
        for (i, (x, y, z)) in dims.iter().enumerate() {
            let u = f(x, y, z);
            data[i] = u[0];
            data[n + i] = u[1];
            data[2 * n + i] = u[2];
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Displacement vector at voxel `i`.
    #[inline]
    pub fn at(&self, i: usize) -> [f64; 3] {
        let n = self.dims.len();
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest per-voxel Euclidean displacement.
    pub fn max_norm(&self) -> f64 {
        (0..self.dims.len())
            .map(|i| {
                let u = self.at(i);
                (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), 3 * dims.len());
        Self { dims, data }
    }
}

/// Whether a [`MaskSet`] holds hard labels or interpolated probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    Binary,
    Soft,
}

/// `C`-class segmentation masks on a grid.
///
/// In binary mode every value is 0 or 1 and at most one class is set per
/// voxel; a voxel with no class set is background.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    dims: Dims,
    classes: usize,
    mode: MaskMode,
    data: Vec<f64>,
}

impl MaskSet {
    pub fn new(dims: Dims, classes: usize, mode: MaskMode, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if classes == 0 {
            return Err(Error::InvalidParameter(
                "mask set needs at least one class".into(),
            ));
        }
        let n = dims.len();
        if data.len() != classes * n {
            return Err(Error::InvalidGrid(format!(
                "mask set {dims} with {classes} classes needs {} values, got {}",
                classes * n,
                data.len()
            )));
        }
        ensure_finite("mask", &data)?;
        match mode {
            MaskMode::Binary => {
                if let Some(i) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "binary mask value {} at index {i}",
                        data[i]
                    )));
                }
                for i in 0..n {
                    let set = (0..classes).filter(|c| data[c * n + i] == 1.0).count();
                    if set > 1 {
                        return Err(Error::InvalidParameter(format!(
                            "voxel {i} carries {set} classes"
                        )));
                    }
                }
            }
            MaskMode::Soft => {
                if let Some(i) = data.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::InvalidParameter(format!(
                        "soft mask value {} at index {i} outside [0,1]",
                        data[i]
                    )));
                }
            }
        }
        Ok(Self {
            dims,
            classes,
            mode,
            data,
        })
    }

    /// Binary mask set from per-voxel labels, 0 = background and `k` = class `k-1`.
    pub fn from_labels(dims: Dims, classes: usize, labels: &[usize]) -> Result<Self> {
        let n = dims.len();
        if labels.len() != n {
            return Err(Error::InvalidGrid(format!(
                "label map needs {n} entries, got {}",
                labels.len()
            )));
        }
        let mut data = vec![0.0; classes * n];
        for (i, &l) in labels.iter().enumerate() {
            if l > classes {
                return Err(Error::InvalidParameter(format!(
                    "label {l} exceeds class count {classes}"
                )));
            }
            if l > 0 {
                data[(l - 1) * n + i] = 1.0;
            }
        }
        Self::new(dims, classes, MaskMode::Binary, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Thresholds every channel at `>= threshold`.
    ///
    /// Overlapping classes after thresholding keep the highest soft value
    /// (lowest class index on ties) so the result stays mutually exclusive.
    pub fn binarize(&self, threshold: f64) -> MaskSet {
        let n = self.dims.len();
        let mut data = vec![0.0; self.data.len()];
        for i in 0..n {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..self.classes {
                let v = self.data[c * n + i];
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            if let Some((c, _)) = best {
                data[c * n + i] = 1.0;
            }
        }
        MaskSet {
            dims: self.dims,
            classes: self.classes,
            mode: MaskMode::Binary,
            data,
        }
    }

    pub(crate) fn soft_from_raw(dims: Dims, classes: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), classes * dims.len());
        Self {
            dims,
            classes,
            mode: MaskMode::Soft,
            data,
        }
    }
}

/// A moving/fixed image pair with optional segmentation masks.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub moving: Volume,
    pub fixed: Volume,
    pub moving_masks: Option<MaskSet>,
    pub fixed_masks: Option<MaskSet>,
}

impl ImagePair {
    /// Unlabelled pair.
    pub fn new(moving: Volume, fixed: Volume) -> Result<Self> {
        moving.dims().expect_same(&fixed.dims())?;
        Ok(Self {
            moving,
            fixed,
            moving_masks: None,
            fixed_masks: None,
        })
    }

    /// Labelled pair; both mask sets must match the image grid and each other.
    pub fn labelled(
        moving: Volume,
        fixed: Volume,
        moving_masks: MaskSet,
        fixed_masks: MaskSet,
    ) -> Result<Self> {
        let dims = moving.dims();
        dims.expect_same(&fixed.dims())?;
        dims.expect_same(&moving_masks.dims())?;
        dims.expect_same(&fixed_masks.dims())?;
        if moving_masks.classes() != fixed_masks.classes() {
            return Err(Error::ClassMismatch {
                expected: moving_masks.classes(),
                found: fixed_masks.classes(),
            });
        }
        Ok(Self {
            moving,
            fixed,
            moving_masks: Some(moving_masks),
            fixed_masks: Some(fixed_masks),
        })
    }

    pub fn dims(&self) -> Dims {
        self.moving.dims()
    }

    pub fn is_labelled(&self) -> bool {
        self.moving_masks.is_some() && self.fixed_masks.is_some()
    }
}

/// Rotation (Euler angles in degrees), per-axis scaling and translation
/// (voxels) about `center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: [f64; 3],
    pub scale: [f64; 3],
    pub translation: [f64; 3],
    /// Rotation/scale center in voxel coordinates; `None` means the grid center.
    pub center: Option<[f64; 3]>,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self {
            rotation_deg: [0.0; 3],
            scale: [1.0; 3],
            translation: [0.0; 3],
            center: None,
        }
    }
}

impl AffineParams {
    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::default()
        }
    }
}
