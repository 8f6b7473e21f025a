//! Finite-difference validation of the registrar's backward pass.
//!
//! For every parameter the analytic `dL/dθ` is compared with a central
//! difference at step `h = 1e-5·max(1, |θ|)`. Trilinear warping and
//! leaky-ReLU are piecewise smooth; a coordinate whose central differences at
//! `h` and `h/2` disagree beyond rounding noise straddles a kink and is
//! skipped (and counted).
//! Error per block is `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{combined_apply, combined_transform_output, Cuboid, CuboidMask};
use crate::error::{Error, Result};
use crate::grid::{Ddf, Dims, ImagePair, MaskMode, MaskSet, Volume};
use crate::loss::{
    mse_consistency, mse_consistency_with_grad, weak_supervision_loss,
    weak_supervision_loss_with_grad,
};
use crate::model::arch::{ArchConfig, ModelParams};
use crate::model::network::{backward_with_fault, forward, predict};
use crate::model::tape::Fault;

/// Which loss the gradient flows from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradPath {
    /// Class-mean Dice of warped moving masks.
    WeakDice,
    /// MSE against a detached teacher target transformed by WarpDDF+RegCut.
    Consistency,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub path: GradPath,
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Every block under tolerance and no more than 5% of coordinates skipped.
    pub fn passed(&self) -> bool {
        let checked: usize = self.blocks.iter().map(|b| b.checked).sum();
        let skipped: usize = self.blocks.iter().map(|b| b.skipped).sum();
        self.max_rel_error() < self.tolerance && skipped * 20 <= checked + skipped
    }
}

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-3;

struct Problem {
    pair: ImagePair,
    teacher: ModelParams,
    u_aug: Ddf,
    mask: CuboidMask,
}

fn smooth_volume(dims: Dims, rng: &mut ChaCha8Rng) -> Volume {
    let c = [0; 3].map(|_| rng.random_range(0.3..0.7));
    let k = [0; 3].map(|_| rng.random_range(0.5..1.5));
    let [w, h, d] = dims.as_array().map(|n| n as f64);
    Volume::from_fn(dims, |x, y, z| {
        let p = [
            x as f64 / w - c[0],
            y as f64 / h - c[1],
            z as f64 / d - c[2],
        ];
        (-(k[0] * p[0] * p[0] + k[1] * p[1] * p[1] + k[2] * p[2] * p[2]) * 8.0).exp()
            + 0.3 * (2.0 * p[0] + p[1] - p[2]).sin()
    })
    .expect("finite by construction")
}

fn blob_masks(dims: Dims, rng: &mut ChaCha8Rng) -> MaskSet {
    let n = dims.len();
    let mut data = vec![0.0; 2 * n];
    for c in 0..2 {
        let center = dims
            .as_array()
            .map(|s| rng.random_range(0.3..0.7) * s as f64);
        let r = rng.random_range(1.2..2.2);
        for (i, (x, y, z)) in dims.iter().enumerate() {
            let d2 = (x as f64 - center[0]).powi(2)
                + (y as f64 - center[1]).powi(2)
                + (z as f64 - center[2]).powi(2);
            data[c * n + i] = (-d2 / (2.0 * r * r)).exp();
        }
    }
    MaskSet::new(dims, 2, MaskMode::Soft, data).expect("values in [0,1]")
}

fn setup(arch: &ArchConfig, seed: u64) -> Result<(ModelParams, Problem)> {
    let dims = arch.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut student = ModelParams::init(arch.clone(), seed)?;
    let mut teacher = ModelParams::init(arch.clone(), seed ^ 0x5eed)?;
    for p in [&mut student, &mut teacher] {
        for v in p.block_mut("head.weight").expect("head exists") {
            *v = rng.random_range(-0.6..0.6);
        }
        for v in p.block_mut("head.bias").expect("head exists") {
            *v = rng.random_range(-0.2..0.2);
        }
        for name in ["conv1.bias", "conv2.bias", "conv3.bias"] {
            for v in p.block_mut(name).expect("bias exists") {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let moving = smooth_volume(dims, &mut rng);
    let fixed = smooth_volume(dims, &mut rng);
    let pair = ImagePair {
        moving,
        fixed,
        moving_masks: Some(blob_masks(dims, &mut rng)),
        fixed_masks: Some(blob_masks(dims, &mut rng)),
    };
    let u_aug = Ddf::from_fn(dims, |x, y, z| {
        [
            0.3 + 0.05 * y as f64,
            -0.2 + 0.04 * z as f64,
            0.1 - 0.03 * x as f64,
        ]
    })?;
    let extent = dims.as_array().map(|n| (n / 3).max(1));
    let mask = CuboidMask::new(
        dims,
        Cuboid {
            origin: [1, 1, 1],
            extent,
        },
    )?;
    Ok((
        student,
        Problem {
            pair,
            teacher,
            u_aug,
            mask,
        },
    ))
}

fn loss(path: GradPath, params: &ModelParams, prob: &Problem) -> Result<f64> {
    match path {
        GradPath::WeakDice => {
            let u = forward(params, &prob.pair)?.ddf;
            let (mm, fm) = masks(&prob.pair)?;
            weak_supervision_loss(mm, fm, &u)
        }
        GradPath::Consistency => {
            let (target, augmented) = consistency_inputs(prob)?;
            let u = forward(params, &augmented)?.ddf;
            mse_consistency(&target, &u)
        }
    }
}

fn masks(pair: &ImagePair) -> Result<(&MaskSet, &MaskSet)> {
    match (&pair.moving_masks, &pair.fixed_masks) {
        (Some(m), Some(f)) => Ok((m, f)),
        _ => Err(Error::Missing("labelled pair required".into())),
    }
}

fn consistency_inputs(prob: &Problem) -> Result<(Ddf, ImagePair)> {
    let u_t = predict(&prob.teacher, &prob.pair.moving, &prob.pair.fixed)?;
    let target = combined_transform_output(&u_t, &prob.u_aug, &prob.mask)?;
    let augmented = combined_apply(&prob.pair, &prob.u_aug, &prob.mask)?;
    Ok((target, augmented))
}

fn analytic(
    path: GradPath,
    params: &ModelParams,
    prob: &Problem,
    fault: Fault,
) -> Result<Vec<f64>> {
    match path {
        GradPath::WeakDice => {
            let mut f = forward(params, &prob.pair)?;
            let (mm, fm) = masks(&prob.pair)?;
            let (_, du) = weak_supervision_loss_with_grad(mm, fm, &f.ddf)?;
            backward_with_fault(&mut f.tape, params, &du, fault)
        }
        GradPath::Consistency => {
            let (target, augmented) = consistency_inputs(prob)?;
            let mut f = forward(params, &augmented)?;
            let (_, du) = mse_consistency_with_grad(&target, &f.ddf)?;
            backward_with_fault(&mut f.tape, params, &du, fault)
        }
    }
}

/// Checks `dL/dθ` for one loss path on a tiny grid.
pub fn grad_check(arch: &ArchConfig, seed: u64, path: GradPath) -> Result<GradCheckReport> {
    grad_check_with_fault(arch, seed, path, Fault::None)
}

#[doc(hidden)]
pub fn grad_check_with_fault(
    arch: &ArchConfig,
    seed: u64,
    path: GradPath,
    fault: Fault,
) -> Result<GradCheckReport> {
    arch.validate()?;
    if arch.dims.as_array().iter().any(|&n| n > 8) {
        return Err(Error::InvalidConfig(format!(
            "gradient checks run on grids up to 8³, got {}",
            arch.dims
        )));
    }
    let (params, prob) = setup(arch, seed)?;
    let grad = analytic(path, &params, &prob, fault)?;

    let central = |j: usize, h: f64| -> Result<f64> {
        let mut plus = params.clone();
        plus.theta_mut()[j] += h;
        let mut minus = params.clone();
        minus.theta_mut()[j] -= h;
        Ok((loss(path, &plus, &prob)? - loss(path, &minus, &prob)?) / (2.0 * h))
    };

    let mut blocks = Vec::new();
    for block in params.manifest() {
        let mut numeric = Vec::with_capacity(block.len);
        let mut analytic_kept = Vec::with_capacity(block.len);
        let mut skipped = 0;
        let block_norm = grad[block.range()]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for j in block.range() {
            let h = 1e-5 * params.theta()[j].abs().max(1.0);
            let fd = central(j, h)?;
            let fd_half = central(j, h / 2.0)?;
            let noise = 1e-5 * fd.abs().max(fd_half.abs()) + 1e-7 * block_norm;
            if (fd - fd_half).abs() > noise {
                skipped += 1;
                continue;
            }
            numeric.push(fd);
            analytic_kept.push(grad[j]);
        }
        let norm = numeric
            .iter()
            .chain(&analytic_kept)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = numeric
            .iter()
            .zip(&analytic_kept)
            .fold(0.0f64, |m, (n, a)| m.max((n - a).abs()));
        let max_rel_error = if norm == 0.0 { 0.0 } else { diff / norm };
        blocks.push(BlockError {
            name: block.name,
            max_rel_error,
            checked: numeric.len(),
            skipped,
        });
    }
    Ok(GradCheckReport {
        path,
        blocks,
        tolerance: GRAD_CHECK_TOLERANCE,
    })
}
