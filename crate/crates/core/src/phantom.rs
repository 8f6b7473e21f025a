//! Synthetic multi-structure phantoms for inter-subject registration.
//!
//! Each structure is an analytic shape placed in normalised coordinates
//! (`[0, 1]` along every axis). A subject applies a global scale and shift
//! plus per-structure center and size jitter, so subjects differ by a mostly
//! affine deformation with local variation on top. Masks are exact; where
//! shapes overlap the structure with the higher `priority` owns the voxel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dims, MaskSet, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Ellipsoid {
        center: [f64; 3],
        radii: [f64; 3],
    },
    /// Cylinder along `z`.
    Tube {
        center: [f64; 2],
        radius: f64,
        z_range: [f64; 2],
    },
    /// Spherical shell; `inner < outer`.
    Shell {
        center: [f64; 3],
        inner: f64,
        outer: f64,
    },
}

impl Shape {
    fn center(&self) -> [f64; 3] {
        match self {
            Shape::Ellipsoid { center, .. } | Shape::Shell { center, .. } => *center,
            Shape::Tube {
                center, z_range, ..
            } => [center[0], center[1], 0.5 * (z_range[0] + z_range[1])],
        }
    }

    /// Half extent along each axis.
    fn half_extent(&self) -> [f64; 3] {
        match self {
            Shape::Ellipsoid { radii, .. } => *radii,
            Shape::Tube {
                radius, z_range, ..
            } => [*radius, *radius, 0.5 * (z_range[1] - z_range[0])],
            Shape::Shell { outer, .. } => [*outer; 3],
        }
    }

    /// Whether offset `d` from the center, in units already divided by the
    /// subject's size scale, lies inside.
    fn contains(&self, d: [f64; 3]) -> bool {
        match self {
            Shape::Ellipsoid { radii, .. } => {
                (0..3).map(|a| (d[a] / radii[a]).powi(2)).sum::<f64>() <= 1.0
            }
            Shape::Tube {
                radius, z_range, ..
            } => {
                let half = 0.5 * (z_range[1] - z_range[0]);
                d[0] * d[0] + d[1] * d[1] <= radius * radius && d[2].abs() <= half
            }
            Shape::Shell { inner, outer, .. } => {
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                r2 <= outer * outer && r2 >= inner * inner
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Structure {
    pub name: String,
    pub shape: Shape,
    pub intensity: f64,
    pub priority: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub dims: Dims,
    /// Voxel size in mm.
    pub spacing: [f64; 3],
    pub structures: Vec<Structure>,
    pub background: f64,
    /// Global isotropic scale range applied about the grid center.
    pub global_scale: [f64; 2],
    /// Global shift range as a fraction of each axis.
    pub global_shift: f64,
    /// Per-structure center jitter as a fraction of each axis.
    pub center_jitter: f64,
    /// Per-structure size scale range.
    pub size_jitter: [f64; 2],
    pub noise_sigma: f64,
    /// Peak amplitude of a smooth linear bias field.
    pub bias_amplitude: f64,
}

impl PhantomConfig {
    /// Four structures on `dims`: two ellipsoids of different size, a thin
    /// tube and a shell. Class 1 (the smaller ellipsoid) is the gland.
    pub fn standard(dims: Dims) -> Self {
        // voxel size scaled from a 256x256x48 grid at 0.75x0.75x2.5 mm
        let spacing = [
            0.75 * 256.0 / dims.w as f64,
            0.75 * 256.0 / dims.h as f64,
            2.5 * 48.0 / dims.d as f64,
        ];
        Self {
            dims,
            spacing,
            structures: vec![
                Structure {
                    name: "bladder".into(),
                    shape: Shape::Ellipsoid {
                        center: [0.5, 0.35, 0.5],
                        radii: [0.2, 0.12, 0.22],
                    },
                    intensity: 0.85,
                    priority: 0,
                },
                Structure {
                    name: "gland".into(),
                    shape: Shape::Ellipsoid {
                        center: [0.5, 0.63, 0.5],
                        radii: [0.13, 0.11, 0.2],
                    },
                    intensity: 0.5,
                    priority: 1,
                },
                Structure {
                    name: "vesicle".into(),
                    shape: Shape::Tube {
                        center: [0.28, 0.6],
                        radius: 0.06,
                        z_range: [0.3, 0.7],
                    },
                    intensity: 1.0,
                    priority: 3,
                },
                Structure {
                    name: "rectum".into(),
                    shape: Shape::Shell {
                        center: [0.7, 0.62, 0.5],
                        inner: 0.05,
                        outer: 0.1,
                    },
                    intensity: 0.3,
                    priority: 2,
                },
            ],
            background: 0.1,
            global_scale: [0.9, 1.1],
            global_shift: 0.04,
            center_jitter: 0.03,
            size_jitter: [0.85, 1.15],
            noise_sigma: 0.02,
            bias_amplitude: 0.05,
        }
    }

    pub fn classes(&self) -> usize {
        self.structures.len()
    }

    /// Checks every structure stays at least one voxel inside the grid at
    /// the jitter extremes.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.structures.is_empty() {
            return Err(Error::InvalidConfig(
                "phantom needs at least one structure".into(),
            ));
        }
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !ordered(self.global_scale) || !ordered(self.size_jitter) {
            return Err(Error::InvalidConfig(
                "scale ranges must be positive and ordered".into(),
            ));
        }
        if self.global_shift < 0.0 || self.center_jitter < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig(
                "jitter and noise must be non-negative".into(),
            ));
        }
        if self.spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidConfig("spacing must be positive".into()));
        }
        let n = self.dims.as_array();
        for s in &self.structures {
            if let Shape::Shell { inner, outer, .. } = s.shape {
                if !(0.0 <= inner && inner < outer) {
                    return Err(Error::InvalidConfig(format!(
                        "shell {} needs inner < outer",
                        s.name
                    )));
                }
            }
            let c = s.shape.center();
            let e = s.shape.half_extent();
            for a in 0..3 {
                let margin = 1.0 / n[a] as f64;
                let reach = self.global_scale[1]
                    * ((c[a] - 0.5).abs() + self.center_jitter + e[a] * self.size_jitter[1])
                    + self.global_shift;
                if 0.5 + reach > 1.0 - margin || 0.5 - reach < margin {
                    return Err(Error::InvalidConfig(format!(
                        "structure {} can leave the grid along axis {a}",
                        s.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One subject: intensity image and, when labelled, its masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub image: Volume,
    pub masks: Option<MaskSet>,
}

/// Generates one subject deterministically from `subject_seed`.
pub fn generate_subject(cfg: &PhantomConfig, subject_seed: u64) -> Result<Subject> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
    let span = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[0] < r[1] {
            rng.random_range(r[0]..=r[1])
        } else {
            r[0]
        }
    };
    let sym = |rng: &mut ChaCha8Rng, a: f64| {
        if a > 0.0 {
            rng.random_range(-a..=a)
        } else {
            0.0
        }
    };

    let g_scale = span(&mut rng, cfg.global_scale);
    let g_shift = [0; 3].map(|_| sym(&mut rng, cfg.global_shift));
    let placed: Vec<([f64; 3], f64)> = cfg
        .structures
        .iter()
        .map(|s| {
            let c = s.shape.center();
            let j = [0; 3].map(|_| sym(&mut rng, cfg.center_jitter));
            let center = [0, 1, 2].map(|a| 0.5 + g_scale * (c[a] - 0.5 + j[a]) + g_shift[a]);
            let size = g_scale * span(&mut rng, cfg.size_jitter);
            (center, size)
        })
        .collect();
    let bias_dir = [0; 3].map(|_| rng.random_range(-1.0..=1.0));

    let dims = cfg.dims;
    let n = dims.len();
    let [w, h, d] = dims.as_array().map(|v| v as f64);
    let mut order: Vec<usize> = (0..cfg.structures.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(cfg.structures[k].priority));

    let mut labels = vec![0usize; n];
    let mut image = vec![cfg.background; n];
    for (i, (x, y, z)) in dims.iter().enumerate() {
        let p = [
            (x as f64 + 0.5) / w,
            (y as f64 + 0.5) / h,
            (z as f64 + 0.5) / d,
        ];
        for &k in &order {
            let (center, size) = placed[k];
            let off = [0, 1, 2].map(|a| (p[a] - center[a]) / size);
            if cfg.structures[k].shape.contains(off) {
                labels[i] = k + 1;
                image[i] = cfg.structures[k].intensity;
                break;
            }
        }
        let bias = cfg.bias_amplitude
            * (bias_dir[0] * (p[0] - 0.5)
                + bias_dir[1] * (p[1] - 0.5)
                + bias_dir[2] * (p[2] - 0.5));
        image[i] += bias;
    }
    if cfg.noise_sigma > 0.0 {
        let normal =
            Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for v in &mut image {
            *v += normal.sample(&mut rng);
        }
    }
    let masks = MaskSet::from_labels(dims, cfg.classes(), &labels)?;
    let image = Volume::new(dims, cfg.spacing, image)?;
    Ok(Subject {
        image,
        masks: Some(masks),
    })
}

/// Subjects with a seeded train/test split and inter-subject pair lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// All ordered `(moving, fixed)` pairs of distinct entries.
pub fn ordered_pairs(ids: &[usize]) -> Vec<(usize, usize)> {
    ids.iter()
        .flat_map(|&a| ids.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
        .collect()
}

impl Dataset {
    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        ordered_pairs(&self.train)
    }

    pub fn test_pairs(&self) -> Vec<(usize, usize)> {
        ordered_pairs(&self.test)
    }
}

/// Seed of subject `index` within a dataset generated from `seed`.
pub fn subject_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// `train_split(n, train_fraction, seed)`: a seeded permutation of `0..n`
/// cut into `round(n·train_fraction)` training and the rest test indices.
pub fn train_test_split(
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} outside [0,1]"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
    let n_train = (n as f64 * train_fraction).round() as usize;
    let test = ids.split_off(n_train);
    let mut train = ids;
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    Ok((train, test))
}

/// Generates `n` subjects and splits them into train and test sets.
pub fn generate_dataset(
    cfg: &PhantomConfig,
    n: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "dataset needs at least 2 subjects, got {n}"
        )));
    }
    cfg.validate()?;
    let subjects = (0..n)
        .map(|i| generate_subject(cfg, subject_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = train_test_split(n, train_fraction, seed)?;
    Ok(Dataset {
        subjects,
        train,
        test,
    })
}
