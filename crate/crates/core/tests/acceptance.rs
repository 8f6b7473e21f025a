//! Acceptance criteria 1 to 10. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swreg_core::atlas::{build_atlas, population_diversity};
use swreg_core::augment::{
    regcut_apply, regcut_transform_output, sample_affine, warpddf_apply, warpddf_transform_output,
    AugConfig, Cuboid, CuboidMask,
};
use swreg_core::evaluate::evaluate_pairs;
use swreg_core::loss::dice_loss;
use swreg_core::metrics::{dice_score, hd95};
use swreg_core::model::gradcheck::grad_check_with_fault;
use swreg_core::model::tape::Fault;
use swreg_core::model::GradPath;
use swreg_core::phantom::{generate_dataset, generate_subject, PhantomConfig};
use swreg_core::train::{make_split, train, train_observed, DatasetSplit, StepLosses, TrainConfig};
use swreg_core::{
    affine_to_ddf, compose_ddf, resample_volume, ArchConfig, Ddf, Dims, ImagePair, MaskSet,
    ModelParams, Registrar, Result, Subject, TrainMode, Volume,
};

type Criterion = fn() -> Result<Outcome>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

// ---------------------------------------------------------------- oracles

/// Clamp-to-edge trilinear interpolation written out corner by corner.
fn trilinear(src: &[f64], dims: Dims, p: [f64; 3]) -> f64 {
    let n = dims.as_array();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..3 {
        let q = p[a].clamp(0.0, (n[a] - 1) as f64);
        let f = q.floor();
        lo[a] = f as usize;
        hi[a] = (lo[a] + 1).min(n[a] - 1);
        t[a] = q - f;
    }
    let mut acc = 0.0;
    for c in 0..8 {
        let pick = |a: usize| c >> a & 1 == 1;
        let idx = [0, 1, 2].map(|a| if pick(a) { hi[a] } else { lo[a] });
        let w: f64 = (0..3)
            .map(|a| if pick(a) { t[a] } else { 1.0 - t[a] })
            .product();
        acc += w * src[dims.index(idx[0], idx[1], idx[2])];
    }
    acc
}

fn inside(p: [f64; 3], dims: Dims) -> bool {
    let n = dims.as_array();
    (0..3).all(|a| p[a] >= 0.0 && p[a] <= (n[a] - 1) as f64)
}

fn field_at(u: &Ddf, p: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|c| trilinear(u.channel(c), u.dims(), p))
}

/// Final sample position of warping by `a` then by `b` at voxel `i`, or
/// `None` when any interpolation node of either stage is clamped.
fn sequential_point(a: &Ddf, b: &Ddf, i: usize) -> Option<[f64; 3]> {
    let dims = a.dims();
    let (x, y, z) = dims.coords(i);
    let ub = b.at(i);
    let p1 = [x as f64 + ub[0], y as f64 + ub[1], z as f64 + ub[2]];
    if !inside(p1, dims) {
        return None;
    }
    let base = p1.map(f64::floor);
    for c in 0..8 {
        let node: [f64; 3] =
            [0, 1, 2].map(|ax| base[ax] + if c >> ax & 1 == 1 { 1.0 } else { 0.0 });
        if !inside(node, dims) {
            // only reachable when p1 lies on the upper face, where that node has weight zero
            continue;
        }
        let ua = a.at(dims.index(node[0] as usize, node[1] as usize, node[2] as usize));
        if !inside([node[0] + ua[0], node[1] + ua[1], node[2] + ua[2]], dims) {
            return None;
        }
    }
    let ua = field_at(a, p1);
    let p2 = [p1[0] + ua[0], p1[1] + ua[1], p1[2] + ua[2]];
    inside(p2, dims).then_some(p2)
}

fn ramp_value(p: [f64; 3]) -> f64 {
    0.7 + 0.25 * p[0] - 0.15 * p[1] + 0.05 * p[2]
}

fn smooth_volume(dims: Dims) -> Volume {
    let c = dims.center();
    Volume::from_fn(dims, |x, y, z| {
        let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
        let r2 = d[0] * d[0] / 20.0 + d[1] * d[1] / 14.0 + d[2] * d[2] / 26.0;
        (-r2).exp() + 0.3 * (0.4 * x as f64).sin() * (0.3 * y as f64).cos()
    })
    .unwrap()
}

fn binary_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n)
        .map(|_| f64::from(u8::from(rng.random::<f64>() < p)))
        .collect();
    if m.iter().all(|&v| v == 0.0) {
        m[rng.random_range(0..n)] = 1.0;
    }
    m
}

/// HD95 by exhaustive search over boundary voxels in millimetres.
fn hd95_bruteforce(a: &[f64], b: &[f64], dims: Dims, spacing: [f64; 3]) -> f64 {
    let n = dims.as_array();
    let set = |m: &[f64], x: i64, y: i64, z: i64| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < n[0]
            && (y as usize) < n[1]
            && (z as usize) < n[2]
            && m[dims.index(x as usize, y as usize, z as usize)] > 0.5
    };
    let boundary = |m: &[f64]| {
        let mut pts = Vec::new();
        for z in 0..n[2] as i64 {
            for y in 0..n[1] as i64 {
                for x in 0..n[0] as i64 {
                    let neighbours = [
                        (1, 0, 0),
                        (-1, 0, 0),
                        (0, 1, 0),
                        (0, -1, 0),
                        (0, 0, 1),
                        (0, 0, -1),
                    ];
                    if set(m, x, y, z)
                        && neighbours
                            .iter()
                            .any(|&(dx, dy, dz)| !set(m, x + dx, y + dy, z + dz))
                    {
                        pts.push([
                            x as f64 * spacing[0],
                            y as f64 * spacing[1],
                            z as f64 * spacing[2],
                        ]);
                    }
                }
            }
        }
        pts
    };
    let (pa, pb) = (boundary(a), boundary(b));
    let mut d = Vec::new();
    for (from, to) in [(&pa, &pb), (&pb, &pa)] {
        for p in from.iter() {
            let best = to
                .iter()
                .map(|q| {
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            d.push(best);
        }
    }
    d.sort_by(f64::total_cmp);
    let pos = 0.95 * (d.len() - 1) as f64;
    let k = pos.floor() as usize;
    if k + 1 < d.len() {
        d[k] * (1.0 - (pos - k as f64)) + d[k + 1] * (pos - k as f64)
    } else {
        d[k]
    }
}

/// Voxel-averaged variance of pairwise squared displacement distances.
fn diversity_bruteforce(fields: &[Ddf]) -> f64 {
    let nv = fields[0].dims().len();
    let mut total = 0.0;
    for v in 0..nv {
        let mut d = Vec::new();
        for i in 0..fields.len() {
            for j in i + 1..fields.len() {
                let (p, q) = (fields[i].at(v), fields[j].at(v));
                d.push((0..3).map(|c| (p[c] - q[c]) * (p[c] - q[c])).sum::<f64>());
            }
        }
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        total += d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64;
    }
    total / nv as f64
}

fn dice_percent(a: &[f64], b: &[f64]) -> f64 {
    let inter = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x > 0.5 && **y > 0.5)
        .count() as f64;
    let sa = a.iter().filter(|x| **x > 0.5).count() as f64;
    let sb = b.iter().filter(|x| **x > 0.5).count() as f64;
    200.0 * inter / (sa + sb)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn small_subjects(n: usize, seed: u64) -> Vec<Subject> {
    let cfg = PhantomConfig::standard(Dims::new(16, 16, 8));
    (0..n)
        .map(|i| generate_subject(&cfg, seed + i as u64))
        .collect::<Result<_>>()
        .unwrap()
}

fn small_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        labelled_ratio: 0.5,
        alpha: 0.1,
        epochs: 3,
        warmup_epochs: 1,
        hidden: [2, 2, 2],
        aug: AugConfig::scaled_to(16),
        mode,
        ..TrainConfig::default()
    }
}

// ---------------------------------------------------------------- criteria

fn criterion_1() -> Result<Outcome> {
    let start = Instant::now();
    let dims = Dims::cube(16);
    let cfg = AugConfig::scaled_to(16);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let v = Volume::from_fn(dims, |x, y, z| ramp_value([x as f64, y as f64, z as f64]))?;
    let (mut worst, mut worst_analytic, mut checked) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..100 {
        let a = affine_to_ddf(&sample_affine(&mut rng, &cfg), dims)?;
        let b = affine_to_ddf(&sample_affine(&mut rng, &cfg), dims)?;
        let sequential = resample_volume(&resample_volume(&v, &a)?, &b)?;
        let composed = resample_volume(&v, &compose_ddf(&a, &b)?)?;
        for i in 0..dims.len() {
            if let Some(p2) = sequential_point(&a, &b, i) {
                worst = worst.max((sequential.data()[i] - composed.data()[i]).abs());
                worst_analytic = worst_analytic.max((composed.data()[i] - ramp_value(p2)).abs());
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && worst_analytic < 1e-6 && checked > dims.len() * 10 && secs < 30.0,
        format!(
            "max |sequential - composed| {worst:.2e}, max |composed - analytic| {worst_analytic:.2e} over {checked} voxels, {secs:.1}s"
        ),
    )
}

fn criterion_2() -> Result<Outcome> {
    let dims = Dims::cube(16);
    let cfg = AugConfig::scaled_to(16);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let moving = smooth_volume(dims);
    let (lo, hi) = moving.range();
    let mut worst = 0.0f64;
    let mut fixed_matches = true;
    for _ in 0..50 {
        let u_star = affine_to_ddf(&sample_affine(&mut rng, &cfg), dims)?;
        let u_aug = affine_to_ddf(&sample_affine(&mut rng, &cfg), dims)?;
        let fixed = resample_volume(&moving, &u_star)?;
        let expected = resample_volume(&fixed, &u_aug)?;
        let augmented = warpddf_apply(&ImagePair::new(moving.clone(), fixed)?, &u_aug)?;
        fixed_matches &=
            augmented.fixed.data() == expected.data() && augmented.moving.data() == moving.data();
        let warped = resample_volume(&moving, &warpddf_transform_output(&u_star, &u_aug)?)?;
        let (mut sq, mut n) = (0.0, 0usize);
        for i in 0..dims.len() {
            if sequential_point(&u_star, &u_aug, i).is_some() {
                sq += (warped.data()[i] - expected.data()[i]).powi(2);
                n += 1;
            }
        }
        worst = worst.max((sq / n.max(1) as f64).sqrt() / (hi - lo));
    }
    outcome(
        worst < 1e-2 && fixed_matches,
        format!("worst RMS / intensity range {worst:.2e} over 50 draws"),
    )
}

fn criterion_3() -> Result<Outcome> {
    let dims = Dims::new(12, 11, 9);
    let moving = smooth_volume(dims);
    let fixed = Volume::from_fn(dims, |x, y, z| {
        ((x + 2 * y) % 5) as f64 * 0.2 - 0.03 * z as f64
    })?;
    let pair = ImagePair::new(moving.clone(), fixed.clone())?;
    let u = Ddf::from_fn(dims, |x, y, z| {
        [0.2 * z as f64 - 0.7, -0.35, 0.05 * (x * y) as f64]
    })?;

    let empty = CuboidMask::empty(dims);
    let empty_ok =
        regcut_apply(&pair, &empty)? == pair && regcut_transform_output(&u, &empty)? == u;
    let full = CuboidMask::full(dims);
    let mixed = regcut_apply(&pair, &full)?;
    let full_ok = mixed.moving.data() == fixed.data()
        && mixed.fixed.data() == fixed.data()
        && regcut_transform_output(&u, &full)?
            .data()
            .iter()
            .all(|&v| v == 0.0);

    // a field that never samples across the cuboid boundary from outside
    let (origin, extent) = ([2usize, 3, 2], [5usize, 4, 3]);
    let m = CuboidMask::new(dims, Cuboid::new(origin, extent, dims)?)?;
    let n = dims.as_array();
    let u_d = Ddf::from_fn(dims, |x, y, z| {
        let p = [x, y, z];
        let gap = (0..3)
            .map(|a| {
                let (o, e) = (origin[a], extent[a]);
                if p[a] < o {
                    o - p[a]
                } else if p[a] >= o + e {
                    p[a] + 1 - o - e
                } else {
                    0
                }
            })
            .max()
            .unwrap();
        let border = (0..3).any(|a| p[a] == 0 || p[a] + 1 == n[a]);
        if gap <= 1 || border {
            [0.0; 3]
        } else {
            [-0.4, 0.35, 0.15]
        }
    })?;
    let warped_moving = resample_volume(&moving, &u_d)?;
    let lhs: Vec<f64> = (0..dims.len())
        .map(|i| {
            let w = m.values()[i];
            w * fixed.data()[i] + (1.0 - w) * warped_moving.data()[i]
        })
        .collect();
    let cut = regcut_apply(&pair, &m)?;
    let rhs = resample_volume(&cut.moving, &regcut_transform_output(&u_d, &m)?)?;
    let exact = lhs
        .iter()
        .zip(rhs.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        empty_ok && full_ok && exact,
        format!("empty mask {empty_ok}, full mask {full_ok}, disjoint support bit-exact {exact}"),
    )
}

fn criterion_4() -> Result<Outcome> {
    let mut details = Vec::new();
    let mut ok = true;
    let grids = [
        (Dims::cube(6), [3, 3, 3], 31),
        (Dims::new(8, 6, 6), [2, 3, 2], 32),
    ];
    for (dims, hidden, seed) in grids {
        let mut arch = ArchConfig::for_grid(dims, 2)?;
        arch.hidden = hidden;
        for path in [GradPath::WeakDice, GradPath::Consistency] {
            let r = grad_check_with_fault(&arch, seed, path, Fault::None)?;
            ok &= r.passed() && r.max_rel_error() < 1e-3;
            details.push(format!("{dims} {path:?} {:.1e}", r.max_rel_error()));
        }
        for (path, fault) in [
            (GradPath::WeakDice, Fault::LeakyReluSlope),
            (GradPath::Consistency, Fault::TanhDerivative),
        ] {
            let r = grad_check_with_fault(&arch, seed, path, fault)?;
            ok &= !r.passed();
            details.push(format!("{dims} {fault:?} mutant {:.1e}", r.max_rel_error()));
        }
    }
    outcome(ok, details.join(", "))
}

fn criterion_5() -> Result<Outcome> {
    let subjects = small_subjects(8, 500);
    let cfg = small_config(TrainMode::WarpDdfRegCut);
    let split = make_split(&subjects, cfg.labelled_ratio, cfg.seed)?;
    let gamma = cfg.gamma;
    let mut audited = 0usize;
    let mut worst = 0.0f64;
    let mut chained = true;
    let mut previous_after: Option<Vec<f64>> = None;
    let mut last_warmup_student: Option<Vec<f64>> = None;
    train_observed(&cfg, &split, |rec| {
        if rec.warmup {
            last_warmup_student = Some(rec.student.theta().to_vec());
            return;
        }
        if audited == 20 {
            return;
        }
        let (Some(before), Some(after)) = (rec.teacher_before, rec.teacher_after) else {
            chained = false;
            return;
        };
        let expected_before = previous_after.as_ref().or(last_warmup_student.as_ref());
        chained &= expected_before.is_some_and(|e| e.as_slice() == before.theta());
        for ((&t, &s), &a) in before
            .theta()
            .iter()
            .zip(rec.student.theta())
            .zip(after.theta())
        {
            let want = gamma * t + (1.0 - gamma) * s;
            let scale = t.abs().max(s.abs()).max(f64::MIN_POSITIVE);
            worst = worst.max((a - want).abs() / scale);
        }
        previous_after = Some(after.theta().to_vec());
        audited += 1;
    })?;
    outcome(
        audited == 20 && chained && worst <= 2.0 * f64::EPSILON,
        format!("{audited} post-warmup steps audited, worst relative deviation {worst:.1e}, teacher chain intact {chained}"),
    )
}

fn criterion_6() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut hd_worst, mut div_worst, mut dice_worst) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..30 {
        let dims = Dims::new(
            rng.random_range(2..=8),
            rng.random_range(2..=8),
            rng.random_range(2..=8),
        );
        let spacing = [
            rng.random_range(0.4..2.5),
            rng.random_range(0.4..2.5),
            rng.random_range(0.4..3.5),
        ];
        let a = binary_mask(&mut rng, dims.len(), 0.35);
        let b = binary_mask(&mut rng, dims.len(), 0.35);
        hd_worst = hd_worst.max(rel_err(
            hd95(&a, &b, dims, spacing)?,
            hd95_bruteforce(&a, &b, dims, spacing),
        ));
        let score = dice_score(&a, &b)?;
        dice_worst = dice_worst
            .max((score + 100.0 * dice_loss(&a, &b)?).abs() / 100.0)
            .max(rel_err(score, dice_percent(&a, &b)));
        let n = 2 + trial % 4;
        let fields: Vec<Ddf> = (0..n)
            .map(|_| Ddf::from_fn(dims, |_, _, _| [(); 3].map(|_| rng.random_range(-3.0..3.0))))
            .collect::<Result<_>>()?;
        div_worst = div_worst.max(rel_err(
            population_diversity(&fields)?,
            diversity_bruteforce(&fields),
        ));
    }
    outcome(
        hd_worst <= 1e-12 && div_worst <= 1e-12 && dice_worst <= 1e-12,
        format!("relative errors: HD95 {hd_worst:.1e}, diversity {div_worst:.1e}, Dice identity {dice_worst:.1e}"),
    )
}

/// Seeds whose combined-mode test Dice is at least the weak-only Dice.
fn criterion_7() -> Result<Outcome> {
    let start = Instant::now();
    let dims = Dims::new(32, 32, 16);
    let phantom = PhantomConfig::standard(dims);
    let mut improved = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let ds = generate_dataset(&phantom, 54, 100 + seed, 40.0 / 54.0)?;
        assert_eq!(ds.train.len(), 40);
        let train_subjects: Vec<Subject> =
            ds.train.iter().map(|&i| ds.subjects[i].clone()).collect();
        let split = make_split(&train_subjects, 0.1, seed)?;
        let mut dice = [0.0; 2];
        for (k, mode) in [TrainMode::WeakOnly, TrainMode::WarpDdfRegCut]
            .into_iter()
            .enumerate()
        {
            let cfg = TrainConfig {
                alpha: 0.1,
                mode,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&cfg, &split)?;
            dice[k] = evaluate_pairs(&out.student, &ds.subjects, &ds.test_pairs())?.mean_dice();
        }
        improved += usize::from(dice[1] >= dice[0]);
        lines.push(format!("seed {seed}: {:.2} vs {:.2}", dice[0], dice[1]));
        eprintln!(
            "  criterion 7 seed {seed}: weak-only {:.3}, combined {:.3}",
            dice[0], dice[1]
        );
    }
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    outcome(
        improved >= 4 && minutes < 30.0,
        format!(
            "{improved}/5 seeds improve ({}), {minutes:.1} min",
            lines.join("; ")
        ),
    )
}

fn first_steps(
    cfg: &TrainConfig,
    split: &DatasetSplit,
    n: usize,
) -> Result<(Vec<StepLosses>, Vec<Vec<f64>>)> {
    let mut losses = Vec::new();
    let mut params = Vec::new();
    train_observed(cfg, split, |rec| {
        if losses.len() < n {
            losses.push(rec.losses);
            params.push(rec.student.theta().to_vec());
        }
    })?;
    Ok((losses, params))
}

fn criterion_8() -> Result<Outcome> {
    let subjects = small_subjects(8, 800);
    let mut combined = small_config(TrainMode::WarpDdfRegCut);
    combined.warmup_epochs = 0;
    combined.epochs = 1;
    combined.aug.identity_override = true;
    let noaug = TrainConfig {
        mode: TrainMode::NoAug,
        ..combined.clone()
    };
    let split = make_split(&subjects, combined.labelled_ratio, combined.seed)?;
    let (la, pa) = first_steps(&combined, &split, 10)?;
    let (lb, pb) = first_steps(&noaug, &split, 10)?;
    let bits = |l: &StepLosses| [l.weak.to_bits(), l.consistency.to_bits(), l.total.to_bits()];
    let same_losses = la.len() == 10 && la.iter().map(bits).eq(lb.iter().map(bits));
    let same_params = pa == pb;
    let nonzero = la.iter().any(|l| l.consistency > 0.0);
    outcome(
        same_losses && same_params && nonzero,
        format!(
            "{} steps compared, losses bit-identical {same_losses}, parameters identical {same_params}",
            la.len()
        ),
    )
}

struct ZeroField;

impl Registrar for ZeroField {
    fn register(&self, moving: &Volume, _fixed: &Volume) -> Result<Ddf> {
        Ok(Ddf::zeros(moving.dims()))
    }
}

fn criterion_9() -> Result<Outcome> {
    let subject = small_subjects(1, 900).remove(0);
    let same = vec![subject.clone(); 5];
    let untrained = ModelParams::init(TrainConfig::default().arch(subject.image.dims())?, 3)?;
    let mut ok = true;
    let mut details = Vec::new();
    for (name, reg) in [
        ("zero field", &ZeroField as &dyn Registrar),
        ("untrained model", &untrained),
    ] {
        let r = build_atlas(reg, &same, 3, 1e-4)?;
        let atlas_err = r
            .atlas
            .data()
            .iter()
            .zip(subject.image.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let sigma2 = population_diversity(&r.ddfs)?;
        let prob_ok = r.probability.data() == subject.masks.as_ref().unwrap().data();
        ok &= atlas_err <= 1e-12 && sigma2 == 0.0 && prob_ok;
        details.push(format!(
            "{name}: atlas error {atlas_err:.1e}, diversity {sigma2:.1e}"
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let dims = Dims::new(9, 7, 5);
    let varied: Vec<Subject> = (0..5)
        .map(|_| {
            let labels: Vec<usize> = (0..dims.len()).map(|_| rng.random_range(0..4)).collect();
            Ok(Subject {
                image: Volume::from_fn(dims, |_, _, _| rng.random::<f64>())?,
                masks: Some(MaskSet::from_labels(dims, 3, &labels)?),
            })
        })
        .collect::<Result<_>>()?;
    let r = build_atlas(&ZeroField, &varied, 3, 1e-4)?;
    let mut prob_worst = 0.0f64;
    for c in 0..3 {
        for v in 0..dims.len() {
            let votes: f64 = varied
                .iter()
                .map(|s| s.masks.as_ref().unwrap().channel(c)[v])
                .sum();
            prob_worst = prob_worst.max((r.probability.channel(c)[v] - votes / 5.0).abs());
        }
    }
    ok &= prob_worst <= 1e-12;
    details.push(format!("probability maps vs averaging {prob_worst:.1e}"));
    outcome(ok, details.join(", "))
}

fn criterion_10() -> Result<Outcome> {
    let subjects = small_subjects(8, 1000);
    let train_subjects = subjects[..6].to_vec();
    let cfg = small_config(TrainMode::WarpDdfRegCut);
    let pairs = [(6, 7), (7, 6)];
    let run = || -> Result<(String, String)> {
        let split = make_split(&train_subjects, cfg.labelled_ratio, cfg.seed)?;
        let out = train(&cfg, &split)?;
        let report = evaluate_pairs(&out.student, &subjects, &pairs)?;
        Ok((out.log.to_csv(), report.to_csv()))
    };
    let (log_a, eval_a) = run()?;
    let (log_b, eval_b) = run()?;
    let same = log_a.as_bytes() == log_b.as_bytes() && eval_a.as_bytes() == eval_b.as_bytes();
    outcome(
        same && log_a.lines().count() == 1 + cfg.epochs,
        format!(
            "train log {} bytes, evaluation {} bytes, byte-identical {same}",
            log_a.len(),
            eval_a.len()
        ),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--nocapture`; a name filter
    // restricts the run to matching criteria
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(&str, Criterion); 10] = [
        ("composition identity", criterion_1),
        ("warpddf consistency oracle", criterion_2),
        ("regcut algebra", criterion_3),
        ("gradient correctness", criterion_4),
        ("ema exactness", criterion_5),
        ("metric oracles", criterion_6),
        ("directional semi-weak gain", criterion_7),
        ("ablation nesting", criterion_8),
        ("atlas sanity", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion_{}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id == *f || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!(
            "{} criterion {} ({name}): {detail}",
            if passed { "PASS" } else { "FAIL" },
            k + 1
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
