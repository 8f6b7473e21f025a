use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::grid::Dims;

/// Shape of the control-grid registrar.
///
/// Both images are average-pooled by `pool` to a coarse grid, passed through
/// three 3×3×3 convolutions with leaky-ReLU, resized to the control grid,
/// projected to three channels, bounded by `tanh · max_displacement` and
/// upsampled trilinearly to the input grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub dims: Dims,
    pub pool: usize,
    pub hidden: [usize; 3],
    pub control: Dims,
    /// Per-axis displacement bound in voxels.
    pub max_displacement: [f64; 3],
}

impl ArchConfig {
    /// Pool factor `pool`, hidden width 8, control grid = pooled grid and a
    /// displacement bound of a quarter of the grid extent.
    pub fn for_grid(dims: Dims, pool: usize) -> Result<Self> {
        let pool = pool.max(1);
        let control = Dims::new(dims.w / pool, dims.h / pool, dims.d / pool);
        let cfg = Self {
            dims,
            pool,
            hidden: [8, 8, 8],
            control,
            max_displacement: [
                0.25 * dims.w as f64,
                0.25 * dims.h as f64,
                0.25 * dims.d as f64,
            ],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn coarse(&self) -> Dims {
        Dims::new(
            self.dims.w / self.pool,
            self.dims.h / self.pool,
            self.dims.d / self.pool,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.pool == 0 {
            return Err(Error::InvalidConfig("pool factor must be positive".into()));
        }
        if self.dims.as_array().iter().any(|n| n % self.pool != 0) {
            return Err(Error::InvalidConfig(format!(
                "grid {} is not divisible by pool factor {}",
                self.dims, self.pool
            )));
        }
        self.coarse().validate().map_err(|_| {
            Error::InvalidConfig(format!("coarse grid {} too small", self.coarse()))
        })?;
        self.control.validate().map_err(|_| {
            Error::InvalidConfig(format!("control grid {} too small", self.control))
        })?;
        let fits = self
            .control
            .as_array()
            .iter()
            .zip(self.dims.as_array())
            .all(|(c, n)| *c <= n);
        if !fits {
            return Err(Error::InvalidConfig(format!(
                "control grid {} exceeds input grid {}",
                self.control, self.dims
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden channel counts must be positive".into(),
            ));
        }
        if self
            .max_displacement
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidConfig(
                "max displacement must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Parameter blocks in storage order.
    pub fn manifest(&self) -> Vec<ParamBlock> {
        let [c1, c2, c3] = self.hidden;
        let shapes: [(&'static str, Vec<usize>); 8] = [
            ("conv1.weight", vec![c1, 2, 27]),
            ("conv1.bias", vec![c1]),
            ("conv2.weight", vec![c2, c1, 27]),
            ("conv2.bias", vec![c2]),
            ("conv3.weight", vec![c3, c2, 27]),
            ("conv3.bias", vec![c3]),
            ("head.weight", vec![3, c3]),
            ("head.bias", vec![3]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let block = ParamBlock {
                    name,
                    shape,
                    offset,
                    len,
                };
                offset += len;
                block
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.manifest().iter().map(|b| b.len).sum()
    }
}

/// One named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

impl ParamBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter vector of a registrar together with its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    theta: Vec<f64>,
}

impl ModelParams {
    /// He-uniform hidden layers and biases at zero; the head is zero so the
    /// untrained model predicts the identity transform.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; arch.param_count()];
        for block in arch.manifest() {
            if block.name.starts_with("conv") && block.name.ends_with("weight") {
                let fan_in = (block.shape[1] * block.shape[2]) as f64;
                let bound = (6.0 / fan_in).sqrt();
                for v in &mut theta[block.range()] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(Self { arch, theta })
    }

    pub fn from_vec(arch: ArchConfig, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::InvalidParameter(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                theta.len()
            )));
        }
        ensure_finite("parameters", &theta)?;
        Ok(Self { arch, theta })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn manifest(&self) -> Vec<ParamBlock> {
        self.arch.manifest()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.manifest()
            .into_iter()
            .find(|b| b.name == name)
            .map(|b| &self.theta[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let block = self.manifest().into_iter().find(|b| b.name == name)?;
        Some(&mut self.theta[block.range()])
    }

    pub(crate) fn same_shape(&self, other: &ModelParams) -> Result<()> {
        if self.arch != other.arch || self.theta.len() != other.theta.len() {
            return Err(Error::InvalidParameter(
                "parameter vectors come from different architectures".into(),
            ));
        }
        Ok(())
    }
}
