//! Self-checks runnable from the command line.
//!
//! Each suite builds small synthetic instances, evaluates an identity or an
//! oracle and reports one outcome per check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affine::affine_to_ddf;
use crate::atlas::{build_atlas, population_diversity};
use crate::augment::{
    regcut_apply, regcut_transform_output, sample_affine, warpddf_apply, warpddf_transform_output,
    AugConfig, Cuboid, CuboidMask,
};
use crate::error::Result;
use crate::grid::{Ddf, Dims, ImagePair, MaskSet, Volume};
use crate::loss::dice_loss;
use crate::metrics::{dice_score, hd95};
use crate::model::gradcheck::grad_check_with_fault;
use crate::model::tape::Fault;
use crate::model::{ArchConfig, GradPath, Registrar};
use crate::phantom::Subject;
use crate::warp::{resample_volume, sample_channel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    All,
    Compose,
    Augment,
    Metrics,
    Gradient,
    Atlas,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(suite: &'static str, name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        suite,
        name,
        passed,
        detail,
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Compose {
        out.push(compose_identity()?);
    }
    if all || suite == Suite::Augment {
        out.push(warpddf_oracle()?);
        out.extend(regcut_algebra()?);
    }
    if all || suite == Suite::Metrics {
        out.extend(metric_oracles()?);
    }
    if all || suite == Suite::Gradient {
        out.extend(gradient_checks()?);
    }
    if all || suite == Suite::Atlas {
        out.extend(atlas_sanity()?);
    }
    Ok(out)
}

fn inside(p: [f64; 3], dims: Dims) -> bool {
    let n = dims.as_array();
    (0..3).all(|a| p[a] >= 0.0 && p[a] <= (n[a] - 1) as f64)
}

fn ramp(dims: Dims) -> Volume {
    Volume::from_fn(dims, |x, y, z| {
        1.0 + 0.3 * x as f64 - 0.2 * y as f64 + 0.1 * z as f64
    })
    .expect("finite")
}

fn blobs(dims: Dims) -> Volume {
    let c = dims.center();
    Volume::from_fn(dims, |x, y, z| {
        let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
        let s = (c[0] + 1.0) * 0.6;
        (-(d[0] * d[0] + 0.8 * d[1] * d[1] + 1.2 * d[2] * d[2]) / (s * s)).exp()
    })
    .expect("finite")
}

/// Sample position of the sequential warp `(V∘a)∘b` at voxel `i`, or `None`
/// any interpolated sample of either stage reads outside the grid.
fn two_stage_point(a: &Ddf, b: &Ddf, i: usize) -> Option<[f64; 3]> {
    let dims = a.dims();
    let (x, y, z) = dims.coords(i);
    let ub = b.at(i);
    let p1 = [x as f64 + ub[0], y as f64 + ub[1], z as f64 + ub[2]];
    if !inside(p1, dims) {
        return None;
    }
    // every node interpolated by the second stage must itself be unclamped
    for corner in 0..8 {
        let node = [0, 1, 2].map(|ax| {
            let f = p1[ax].floor();
            if corner >> ax & 1 == 1 && f < p1[ax] {
                f + 1.0
            } else {
                f
            }
        });
        let j = dims.index(node[0] as usize, node[1] as usize, node[2] as usize);
        let ua = a.at(j);
        if !inside([node[0] + ua[0], node[1] + ua[1], node[2] + ua[2]], dims) {
            return None;
        }
    }
    let ua = [0, 1, 2].map(|c| sample_channel(a.channel(c), &dims, p1));
    let p2 = [p1[0] + ua[0], p1[1] + ua[1], p1[2] + ua[2]];
    inside(p2, dims).then_some(p2)
}

fn compose_identity() -> Result<CheckOutcome> {
    let dims = Dims::cube(16);
    let cfg = AugConfig::scaled_to(16);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v = ramp(dims);
    let mut worst = 0.0f64;
    let mut used = 0usize;
    for _ in 0..100 {
        let a = affine_to_ddf(&sample_affine(&mut rng, &cfg), dims)?;
        let b = affine_to_ddf(&sample_affine(&mut rng, &cfg), dims)?;
        let seq = resample_volume(&resample_volume(&v, &a)?, &b)?;
        let comp = resample_volume(&v, &crate::warp::compose_ddf(&a, &b)?)?;
        for i in 0..dims.len() {
            if two_stage_point(&a, &b, i).is_some() {
                worst = worst.max((seq.data()[i] - comp.data()[i]).abs());
                used += 1;
            }
        }
    }
    Ok(outcome(
        "compose",
        "sequential_equals_composed",
        worst < 1e-6 && used > 0,
        format!("max |diff| {worst:.3e} over {used} unclamped voxels in 100 affine pairs"),
    ))
}

fn warpddf_oracle() -> Result<CheckOutcome> {
    let dims = Dims::cube(16);
    let cfg = AugConfig::scaled_to(16);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let moving = blobs(dims);
    let (lo, hi) = moving.range();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let u_star = affine_to_ddf(&sample_affine(&mut rng, &cfg), dims)?;
        let u_aug = affine_to_ddf(&sample_affine(&mut rng, &cfg), dims)?;
        let fixed = resample_volume(&moving, &u_star)?;
        let pair = ImagePair::new(moving.clone(), fixed)?;
        let augmented = warpddf_apply(&pair, &u_aug)?;
        let target = warpddf_transform_output(&u_star, &u_aug)?;
        let warped = resample_volume(&moving, &target)?;
        let (mut sq, mut n) = (0.0, 0usize);
        for i in 0..dims.len() {
            if two_stage_point(&u_star, &u_aug, i).is_some() {
                sq += (warped.data()[i] - augmented.fixed.data()[i]).powi(2);
                n += 1;
            }
        }
        let rms = if n == 0 {
            f64::INFINITY
        } else {
            (sq / n as f64).sqrt()
        };
        worst = worst.max(rms / (hi - lo));
    }
    Ok(outcome(
        "augment",
        "warpddf_consistency",
        worst < 1e-2,
        format!("worst relative RMS {worst:.3e} over 50 draws"),
    ))
}

fn regcut_algebra() -> Result<Vec<CheckOutcome>> {
    let dims = Dims::new(12, 10, 8);
    let moving = blobs(dims);
    let fixed = Volume::from_fn(dims, |x, y, z| 0.05 * (x * y) as f64 - 0.1 * z as f64)?;
    let pair = ImagePair::new(moving.clone(), fixed.clone())?;
    let u = Ddf::from_fn(dims, |x, y, z| {
        [0.3 * y as f64 - 1.0, 0.25, -0.1 * (x + z) as f64]
    })?;

    let empty = CuboidMask::empty(dims);
    let trivial0 =
        regcut_apply(&pair, &empty)? == pair && regcut_transform_output(&u, &empty)? == u;
    let full = CuboidMask::full(dims);
    let p1 = regcut_apply(&pair, &full)?;
    let trivial1 =
        p1.moving.data() == fixed.data() && regcut_transform_output(&u, &full)?.max_abs() == 0.0;

    // displacement zero within Chebyshev distance 1 of the cuboid, so no
    // sample outside the cuboid reads a pasted voxel
    let cuboid = Cuboid::new([1, 1, 1], [4, 3, 3], dims)?;
    let m = CuboidMask::new(dims, cuboid)?;
    let shift = [0.3, -0.45, 0.2];
    let near = |x: usize, y: usize, z: usize| {
        let d = |v: usize, o: usize, e: usize| {
            if v < o {
                o - v
            } else if v >= o + e {
                v + 1 - o - e
            } else {
                0
            }
        };
        d(x, 1, 4).max(d(y, 1, 3)).max(d(z, 1, 3)) <= 1
    };
    let n = dims.as_array();
    let u_d = Ddf::from_fn(dims, |x, y, z| {
        let interior =
            x >= 1 && y >= 1 && z >= 1 && x + 2 <= n[0] && y + 2 <= n[1] && z + 2 <= n[2];
        if near(x, y, z) || !interior {
            [0.0; 3]
        } else {
            shift
        }
    })?;
    let lhs_warp = resample_volume(&moving, &u_d)?;
    let lhs: Vec<f64> = (0..dims.len())
        .map(|i| {
            let mv = m.values()[i];
            mv * fixed.data()[i] + (1.0 - mv) * lhs_warp.data()[i]
        })
        .collect();
    let mixed = regcut_apply(&pair, &m)?;
    let rhs = resample_volume(&mixed.moving, &regcut_transform_output(&u_d, &m)?)?;
    let exact = lhs
        .iter()
        .zip(rhs.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());

    Ok(vec![
        outcome(
            "augment",
            "regcut_empty_mask",
            trivial0,
            "pair and field unchanged".into(),
        ),
        outcome(
            "augment",
            "regcut_full_mask",
            trivial1,
            "moving equals fixed, field zero".into(),
        ),
        outcome(
            "augment",
            "regcut_disjoint_support",
            exact,
            "mixed-then-warped equals warped-then-mixed bit for bit".into(),
        ),
    ])
}

fn random_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    if m.iter().all(|&v| v == 0.0) {
        m[rng.random_range(0..n)] = 1.0;
    }
    m
}

/// Explicit double loop over surface voxels of both masks.
fn hd95_reference(a: &[f64], b: &[f64], dims: Dims, spacing: [f64; 3]) -> f64 {
    let surface = |m: &[f64]| -> Vec<[f64; 3]> {
        let n = dims.as_array();
        dims.iter()
            .filter(|&(x, y, z)| {
                if m[dims.index(x, y, z)] < 0.5 {
                    return false;
                }
                let p = [x, y, z];
                (0..3).any(|ax| {
                    [-1i64, 1].iter().any(|&s| {
                        let q = p[ax] as i64 + s;
                        if q < 0 || q >= n[ax] as i64 {
                            return true;
                        }
                        let mut r = p;
                        r[ax] = q as usize;
                        m[dims.index(r[0], r[1], r[2])] < 0.5
                    })
                })
            })
            .map(|(x, y, z)| {
                [
                    x as f64 * spacing[0],
                    y as f64 * spacing[1],
                    z as f64 * spacing[2],
                ]
            })
            .collect()
    };
    let (sa, sb) = (surface(a), surface(b));
    let directed = |from: &[[f64; 3]], to: &[[f64; 3]]| -> Vec<f64> {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut d = directed(&sa, &sb);
    d.extend(directed(&sb, &sa));
    d.sort_by(f64::total_cmp);
    let h = (d.len() - 1) as f64 * 0.95;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(d.len() - 1);
    d[lo] + (h - lo as f64) * (d[hi] - d[lo])
}

fn diversity_reference(ddfs: &[Ddf]) -> f64 {
    let nv = ddfs[0].dims().len();
    let mut acc = 0.0;
    for i in 0..nv {
        let mut vals = Vec::new();
        for a in 0..ddfs.len() {
            for b in 0..ddfs.len() {
                if a < b {
                    let (p, q) = (ddfs[a].at(i), ddfs[b].at(i));
                    vals.push(
                        (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2),
                    );
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        acc += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    }
    acc / nv as f64
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn metric_oracles() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut hd_worst = 0.0f64;
    let mut div_worst = 0.0f64;
    let mut dice_worst = 0.0f64;
    for trial in 0..20 {
        let dims = Dims::new(
            rng.random_range(3..=8),
            rng.random_range(3..=8),
            rng.random_range(3..=8),
        );
        let spacing = [
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..3.0),
        ];
        let a = random_mask(&mut rng, dims.len(), 0.3);
        let b = random_mask(&mut rng, dims.len(), 0.3);
        hd_worst = hd_worst.max(rel(
            hd95(&a, &b, dims, spacing)?,
            hd95_reference(&a, &b, dims, spacing),
        ));
        dice_worst = dice_worst.max((dice_score(&a, &b)? + 100.0 * dice_loss(&a, &b)?).abs());
        let k = 2 + trial % 4;
        let ddfs: Vec<Ddf> = (0..k)
            .map(|_| Ddf::from_fn(dims, |_, _, _| [0; 3].map(|_| rng.random_range(-2.0..2.0))))
            .collect::<Result<_>>()?;
        div_worst = div_worst.max(rel(
            population_diversity(&ddfs)?,
            diversity_reference(&ddfs),
        ));
    }
    Ok(vec![
        outcome(
            "metrics",
            "hd95_bruteforce",
            hd_worst <= 1e-12,
            format!("max relative error {hd_worst:.3e}"),
        ),
        outcome(
            "metrics",
            "diversity_bruteforce",
            div_worst <= 1e-12,
            format!("max relative error {div_worst:.3e}"),
        ),
        outcome(
            "metrics",
            "dice_score_vs_loss",
            dice_worst <= 1e-12,
            format!("max |score + 100·loss| {dice_worst:.3e}"),
        ),
    ])
}

fn gradient_checks() -> Result<Vec<CheckOutcome>> {
    let mut arch = ArchConfig::for_grid(Dims::cube(6), 2)?;
    arch.hidden = [3, 3, 3];
    let mut out = Vec::new();
    for (name, path, seed) in [
        ("weak_dice_gradient", GradPath::WeakDice, 11),
        ("consistency_gradient", GradPath::Consistency, 12),
    ] {
        let r = grad_check_with_fault(&arch, seed, path, Fault::None)?;
        out.push(outcome(
            "gradient",
            name,
            r.passed(),
            format!("max relative error {:.3e}", r.max_rel_error()),
        ));
    }
    let m1 = grad_check_with_fault(&arch, 11, GradPath::WeakDice, Fault::LeakyReluSlope)?;
    let m2 = grad_check_with_fault(&arch, 12, GradPath::Consistency, Fault::TanhDerivative)?;
    out.push(outcome(
        "gradient",
        "mutations_detected",
        !m1.passed() && !m2.passed(),
        format!(
            "corrupted rules give errors {:.3e} and {:.3e}",
            m1.max_rel_error(),
            m2.max_rel_error()
        ),
    ));
    Ok(out)
}

struct ZeroField;

impl Registrar for ZeroField {
    fn register(&self, moving: &Volume, _fixed: &Volume) -> Result<Ddf> {
        Ok(Ddf::zeros(moving.dims()))
    }
}

fn atlas_sanity() -> Result<Vec<CheckOutcome>> {
    let dims = Dims::new(10, 8, 6);
    let image = blobs(dims);
    let labels: Vec<usize> = image
        .data()
        .iter()
        .map(|&v| usize::from(v > 0.5) + usize::from(v > 0.8))
        .collect();
    let masks = MaskSet::from_labels(dims, 2, &labels)?;
    let same = vec![
        Subject {
            image: image.clone(),
            masks: Some(masks.clone()),
        };
        4
    ];
    let r = build_atlas(&ZeroField, &same, 3, 1e-4)?;
    let identical = r.atlas.data() == image.data()
        && r.iterations == 1
        && population_diversity(&r.ddfs)? == 0.0
        && r.probability.data() == masks.data();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let varied: Vec<Subject> = (0..4)
        .map(|_| {
            let labels: Vec<usize> = (0..dims.len()).map(|_| rng.random_range(0..3)).collect();
            Ok(Subject {
                image: Volume::from_fn(dims, |_, _, _| rng.random::<f64>())?,
                masks: Some(MaskSet::from_labels(dims, 2, &labels)?),
            })
        })
        .collect::<Result<_>>()?;
    let r = build_atlas(&ZeroField, &varied, 3, 1e-4)?;
    let mut worst = 0.0f64;
    for (i, p) in r.probability.data().iter().enumerate() {
        let mean = varied
            .iter()
            .map(|s| s.masks.as_ref().expect("labelled").data()[i])
            .sum::<f64>()
            / varied.len() as f64;
        worst = worst.max((p - mean).abs());
    }
    Ok(vec![
        outcome(
            "atlas",
            "identical_samples",
            identical,
            "atlas equals the sample after one pass, zero diversity".into(),
        ),
        outcome(
            "atlas",
            "probability_maps_bruteforce",
            worst <= 1e-12,
            format!("max |diff| {worst:.3e}"),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suites_pass() {
        for suite in [Suite::Compose, Suite::Augment, Suite::Metrics, Suite::Atlas] {
            for o in run_suite(suite).unwrap() {
                assert!(o.passed, "{o:?}");
            }
        }
    }
}
