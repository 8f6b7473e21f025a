//! Commutative perturbation pairs for unlabelled image pairs.
//!
//! Each input-domain augmentation `A` has an output-domain partner `Ã` so
//! that a prediction on the augmented pair can be compared with `Ã` applied
//! to the prediction on the original pair:
//!
//! * WarpDDF warps the fixed image by a random affine field `u_aug`;
//!   `Ã(U) = u_aug + U ∘ u_aug`.
//! * RegCut pastes a cuboid of the fixed image into the moving image;
//!   `Ã(U) = (1 − M) ⊙ U`.
//! * Both combined: warp first, then paste from the warped fixed image;
//!   `Ã(U) = (1 − M) ⊙ (u_aug + U ∘ u_aug)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affine::affine_to_ddf;
use crate::error::{Error, Result};
use crate::grid::{AffineParams, Ddf, Dims, ImagePair};
use crate::warp::{compose_ddf, resample_volume};

/// Sampling ranges for WarpDDF and RegCut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugConfig {
    /// Per-axis Euler angle range in degrees.
    pub rotation_deg: [f64; 2],
    /// Per-axis scale factor range.
    pub scale: [f64; 2],
    /// Per-axis translation range in voxels.
    pub translation: [f64; 2],
    /// Cuboid extent as a fraction of each grid dimension.
    pub cuboid_fraction: [f64; 2],
    pub seed: u64,
    /// Forces `u_aug = 0` and an empty cuboid. Used to audit that the
    /// augmented training modes nest the unaugmented one.
    #[serde(default)]
    pub identity_override: bool,
}

impl AugConfig {
    /// Rotation ±5°, scaling 0.75–1.25 and translation ±20 voxels of a
    /// 256-wide grid, rescaled to a grid `width` voxels wide.
    pub fn scaled_to(width: usize) -> Self {
        let t = 20.0 / 256.0 * width as f64;
        Self {
            rotation_deg: [-5.0, 5.0],
            scale: [0.75, 1.25],
            translation: [-t, t],
            cuboid_fraction: [0.1, 0.5],
            seed: 0,
            identity_override: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: [f64; 2]| {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::InvalidConfig(format!(
                    "{name} range {r:?} is not ordered"
                )));
            }
            Ok(())
        };
        ordered("rotation", self.rotation_deg)?;
        ordered("scale", self.scale)?;
        ordered("translation", self.translation)?;
        ordered("cuboid fraction", self.cuboid_fraction)?;
        if self.scale[0] <= 0.0 {
            return Err(Error::InvalidConfig("scale range must be positive".into()));
        }
        let [lo, hi] = self.cuboid_fraction;
        if lo <= 0.0 || hi > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "cuboid fractions must lie in (0, 1], got {:?}",
                self.cuboid_fraction
            )));
        }
        Ok(())
    }
}

impl Default for AugConfig {
    fn default() -> Self {
        Self::scaled_to(32)
    }
}

/// Axis-aligned box `[x, x+w) × [y, y+h) × [z, z+d)` in voxel indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cuboid {
    pub origin: [usize; 3],
    pub extent: [usize; 3],
}

impl Cuboid {
    pub fn new(origin: [usize; 3], extent: [usize; 3], dims: Dims) -> Result<Self> {
        let n = dims.as_array();
        for a in 0..3 {
            if extent[a] == 0 || origin[a] + extent[a] > n[a] {
                return Err(Error::InvalidParameter(format!(
                    "cuboid {origin:?}+{extent:?} does not fit in {dims}"
                )));
            }
        }
        Ok(Self { origin, extent })
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x, y, z];
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.extent[a])
    }

    pub fn volume(&self) -> usize {
        self.extent.iter().product()
    }
}

/// Binary RegCut mask: 1 inside the cuboid, 0 elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct CuboidMask {
    dims: Dims,
    cuboid: Option<Cuboid>,
    values: Vec<f64>,
}

impl CuboidMask {
    pub fn new(dims: Dims, cuboid: Cuboid) -> Result<Self> {
        let cuboid = Cuboid::new(cuboid.origin, cuboid.extent, dims)?;
        let values = dims
            .iter()
            .map(|(x, y, z)| if cuboid.contains(x, y, z) { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            dims,
            cuboid: Some(cuboid),
            values,
        })
    }

    /// The all-zero mask.
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            cuboid: None,
            values: vec![0.0; dims.len()],
        }
    }

    /// The all-ones mask.
    pub fn full(dims: Dims) -> Self {
        Self::new(
            dims,
            Cuboid {
                origin: [0; 3],
                extent: dims.as_array(),
            },
        )
        .expect("full-grid cuboid always fits")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn cuboid(&self) -> Option<Cuboid> {
        self.cuboid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of voxels set to 1.
    pub fn count(&self) -> usize {
        self.cuboid.map_or(0, |c| c.volume())
    }
}

/// Draws a random affine field from the configured ranges.
pub fn sample_warpddf<R: Rng + ?Sized>(rng: &mut R, cfg: &AugConfig, dims: Dims) -> Result<Ddf> {
    if cfg.identity_override {
        return Ok(Ddf::zeros(dims));
    }
    let params = sample_affine(rng, cfg);
    affine_to_ddf(&params, dims)
}

/// Draws affine parameters uniformly from the configured ranges.
pub fn sample_affine<R: Rng + ?Sized>(rng: &mut R, cfg: &AugConfig) -> AffineParams {
    let mut draw = |r: [f64; 2]| {
        if r[0] < r[1] {
            rng.random_range(r[0]..=r[1])
        } else {
            r[0]
        }
    };
    let rotation_deg = [0; 3].map(|_| draw(cfg.rotation_deg));
    let scale = [0; 3].map(|_| draw(cfg.scale));
    let translation = [0; 3].map(|_| draw(cfg.translation));
    AffineParams {
        rotation_deg,
        scale,
        translation,
        center: None,
    }
}

/// Draws a random cuboid with per-axis extent fraction from the configured range.
pub fn sample_cuboid<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &AugConfig,
    dims: Dims,
) -> Result<CuboidMask> {
    if cfg.identity_override {
        return Ok(CuboidMask::empty(dims));
    }
    let [lo, hi] = cfg.cuboid_fraction;
    let n = dims.as_array();
    let mut origin = [0; 3];
    let mut extent = [0; 3];
    for a in 0..3 {
        let f = if lo < hi {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        extent[a] = ((f * n[a] as f64).round() as usize).clamp(1, n[a]);
        origin[a] = rng.random_range(0..=n[a] - extent[a]);
    }
    CuboidMask::new(dims, Cuboid { origin, extent })
}

fn check_pair(pair: &ImagePair, dims: Dims) -> Result<()> {
    pair.dims().expect_same(&dims)
}

/// Warps the fixed image by `u_aug`; the moving image and masks are untouched.
pub fn warpddf_apply(pair: &ImagePair, u_aug: &Ddf) -> Result<ImagePair> {
    check_pair(pair, u_aug.dims())?;
    Ok(ImagePair {
        moving: pair.moving.clone(),
        fixed: resample_volume(&pair.fixed, u_aug)?,
        moving_masks: pair.moving_masks.clone(),
        fixed_masks: pair.fixed_masks.clone(),
    })
}

/// `u_aug + u_t ∘ u_aug`.
pub fn warpddf_transform_output(u_t: &Ddf, u_aug: &Ddf) -> Result<Ddf> {
    compose_ddf(u_t, u_aug)
}

fn mix(m: &[f64], inside: &[f64], outside: &[f64]) -> Vec<f64> {
    m.iter()
        .zip(inside)
        .zip(outside)
        .map(|((&m, &a), &b)| m * a + (1.0 - m) * b)
        .collect()
}

/// Replaces moving intensities inside the cuboid with fixed intensities.
pub fn regcut_apply(pair: &ImagePair, m: &CuboidMask) -> Result<ImagePair> {
    check_pair(pair, m.dims())?;
    let moving = pair
        .moving
        .with_data(mix(m.values(), pair.fixed.data(), pair.moving.data()));
    Ok(ImagePair {
        moving,
        fixed: pair.fixed.clone(),
        moving_masks: pair.moving_masks.clone(),
        fixed_masks: pair.fixed_masks.clone(),
    })
}

/// `(1 − M) ⊙ u_t`, applied to all three displacement channels.
pub fn regcut_transform_output(u_t: &Ddf, m: &CuboidMask) -> Result<Ddf> {
    u_t.dims().expect_same(&m.dims())?;
    let n = m.dims().len();
    let mut data = u_t.data().to_vec();
    for c in 0..3 {
        for (v, &mv) in data[c * n..(c + 1) * n].iter_mut().zip(m.values()) {
            *v *= 1.0 - mv;
        }
    }
    Ok(Ddf::from_raw(u_t.dims(), data))
}

/// WarpDDF on the fixed image, then RegCut from the warped fixed image.
pub fn combined_apply(pair: &ImagePair, u_aug: &Ddf, m: &CuboidMask) -> Result<ImagePair> {
    let warped = warpddf_apply(pair, u_aug)?;
    regcut_apply(&warped, m)
}

/// `(1 − M) ⊙ (u_aug + u_t ∘ u_aug)`.
pub fn combined_transform_output(u_t: &Ddf, u_aug: &Ddf, m: &CuboidMask) -> Result<Ddf> {
    let composed = warpddf_transform_output(u_t, u_aug)?;
    regcut_transform_output(&composed, m)
}

/// One sampled perturbation, ready to apply to a pair and to a teacher prediction.
#[derive(Clone, Debug, PartialEq)]
pub enum Perturbation {
    Identity,
    WarpDdf(Ddf),
    RegCut(CuboidMask),
    Combined(Ddf, CuboidMask),
}

impl Perturbation {
    pub fn apply(&self, pair: &ImagePair) -> Result<ImagePair> {
        match self {
            Perturbation::Identity => Ok(pair.clone()),
            Perturbation::WarpDdf(u) => warpddf_apply(pair, u),
            Perturbation::RegCut(m) => regcut_apply(pair, m),
            Perturbation::Combined(u, m) => combined_apply(pair, u, m),
        }
    }

    pub fn transform_output(&self, u_t: &Ddf) -> Result<Ddf> {
        match self {
            Perturbation::Identity => Ok(u_t.clone()),
            Perturbation::WarpDdf(u) => warpddf_transform_output(u_t, u),
            Perturbation::RegCut(m) => regcut_transform_output(u_t, m),
            Perturbation::Combined(u, m) => combined_transform_output(u_t, u, m),
        }
    }
}
