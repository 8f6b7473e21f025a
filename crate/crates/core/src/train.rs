//! Semi-weakly-supervised mean-teacher training.
//!
//! Labelled pairs contribute the weak Dice loss. After warmup a teacher,
//! initialised as a copy of the student and then tracked as an exponential
//! moving average, predicts on an unaugmented unlabelled pair; the student
//! predicts on the perturbed pair and is pulled toward `Ã(U_teacher)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{sample_cuboid, sample_warpddf, AugConfig, Perturbation};
use crate::error::{Error, Result};
use crate::grid::{Dims, ImagePair};
use crate::loss::{mse_consistency_with_grad, total_loss, weak_supervision_loss_with_grad};
use crate::model::{adam_step, forward, predict, AdamConfig, AdamState, ArchConfig, ModelParams};
use crate::phantom::{ordered_pairs, Subject};

/// Which consistency branch runs after warmup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Labelled pairs only; no consistency loss.
    WeakOnly,
    /// Consistency with identity perturbation.
    NoAug,
    WarpDdf,
    RegCut,
    WarpDdfRegCut,
}

impl TrainMode {
    pub fn uses_consistency(self) -> bool {
        self != TrainMode::WeakOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::WeakOnly => "weak_only",
            TrainMode::NoAug => "no_aug",
            TrainMode::WarpDdf => "warp_ddf",
            TrainMode::RegCut => "reg_cut",
            TrainMode::WarpDdfRegCut => "warp_ddf_reg_cut",
        }
    }
}

fn default_pool() -> usize {
    2
}

fn default_hidden() -> [usize; 3] {
    [8, 8, 8]
}

/// Missing JSON fields take their [`Default`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Fraction of training subjects that keep their masks.
    pub labelled_ratio: f64,
    /// Consistency loss weight.
    pub alpha: f64,
    /// EMA decay of the teacher.
    pub gamma: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub adam: AdamConfig,
    pub aug: AugConfig,
    pub mode: TrainMode,
    pub seed: u64,
    #[serde(default = "default_pool")]
    pub pool: usize,
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 3],
}

impl Default for TrainConfig {
    /// 200 epochs with 50 warmup epochs on a 32-wide grid.
    fn default() -> Self {
        Self {
            labelled_ratio: 0.1,
            alpha: 1.0,
            gamma: 0.99,
            epochs: 200,
            warmup_epochs: 50,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            aug: AugConfig::scaled_to(32),
            mode: TrainMode::WarpDdfRegCut,
            seed: 0,
            pool: default_pool(),
            hidden: default_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.labelled_ratio > 0.0 && self.labelled_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "labelled_ratio {} outside (0, 1]",
                self.labelled_ratio
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} must be finite and >= 0",
                self.alpha
            )));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        self.adam.validate()?;
        self.aug.validate()
    }

    pub fn arch(&self, dims: Dims) -> Result<ArchConfig> {
        let mut arch = ArchConfig::for_grid(dims, self.pool)?;
        arch.hidden = self.hidden;
        arch.validate()?;
        Ok(arch)
    }
}

/// Subjects with masks kept on the labelled subset, plus pair lists.
///
/// Pairs are `(moving, fixed)` indices into `subjects`. Labelled pairs join
/// two labelled subjects; unlabelled pairs join two unlabelled subjects.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub subjects: Vec<Subject>,
    pub labelled: Vec<(usize, usize)>,
    pub unlabelled: Vec<(usize, usize)>,
}

impl DatasetSplit {
    pub fn dims(&self) -> Result<Dims> {
        self.subjects
            .first()
            .map(|s| s.image.dims())
            .ok_or_else(|| Error::Missing("dataset has no subjects".into()))
    }

    pub fn pair(&self, (moving, fixed): (usize, usize)) -> Result<ImagePair> {
        let get = |i: usize| {
            self.subjects
                .get(i)
                .ok_or_else(|| Error::Missing(format!("subject {i} of {}", self.subjects.len())))
        };
        let (m, f) = (get(moving)?, get(fixed)?);
        match (&m.masks, &f.masks) {
            (Some(mm), Some(fm)) => {
                ImagePair::labelled(m.image.clone(), f.image.clone(), mm.clone(), fm.clone())
            }
            _ => ImagePair::new(m.image.clone(), f.image.clone()),
        }
    }
}

/// Keeps masks on `round(r·N)` seeded-random subjects and strips the rest.
pub fn make_split(subjects: &[Subject], r: f64, seed: u64) -> Result<DatasetSplit> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "labelled ratio {r} outside (0, 1]"
        )));
    }
    let n_lab = (r * subjects.len() as f64).round() as usize;
    if n_lab == 0 {
        return Err(Error::InvalidConfig(format!(
            "labelled ratio {r} leaves no labelled subjects out of {}",
            subjects.len()
        )));
    }
    if let Some(i) = subjects.iter().position(|s| s.masks.is_none()) {
        return Err(Error::Missing(format!("subject {i} has no masks")));
    }
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labelled: Vec<usize> = order[..n_lab].to_vec();
    let mut unlabelled: Vec<usize> = order[n_lab..].to_vec();
    labelled.sort_unstable();
    unlabelled.sort_unstable();
    let mut subjects = subjects.to_vec();
    for &i in &unlabelled {
        subjects[i].masks = None;
    }
    Ok(DatasetSplit {
        subjects,
        labelled: ordered_pairs(&labelled),
        unlabelled: ordered_pairs(&unlabelled),
    })
}

/// `γ·teacher + (1−γ)·student`, element-wise.
pub fn ema_update(teacher: &ModelParams, student: &ModelParams, gamma: f64) -> Result<ModelParams> {
    teacher.same_shape(student)?;
    let theta = teacher
        .theta()
        .iter()
        .zip(student.theta())
        .map(|(&t, &s)| gamma * t + (1.0 - gamma) * s)
        .collect();
    ModelParams::from_vec(teacher.arch().clone(), theta)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub weak: f64,
    pub consistency: f64,
    pub total: f64,
}

/// Losses and `dL/dθ` for one labelled pair and, when `mode` uses it, one
/// unlabelled pair under `perturbation`. The teacher runs without a tape.
pub fn train_step(
    student: &ModelParams,
    teacher: &ModelParams,
    labelled: &ImagePair,
    unlabelled: Option<&ImagePair>,
    perturbation: &Perturbation,
    mode: TrainMode,
    alpha: f64,
) -> Result<(StepLosses, Vec<f64>)> {
    let (Some(mm), Some(fm)) = (&labelled.moving_masks, &labelled.fixed_masks) else {
        return Err(Error::Missing("labelled pair without masks".into()));
    };
    let mut fwd = forward(student, labelled)?;
    let (weak, du) = weak_supervision_loss_with_grad(mm, fm, &fwd.ddf)?;
    let mut grad = fwd.backward(student, &du)?;

    let mut consistency = 0.0;
    if mode.uses_consistency() {
        let pair = unlabelled.ok_or_else(|| {
            Error::Missing(format!("mode {} needs an unlabelled pair", mode.name()))
        })?;
        let u_t = predict(teacher, &pair.moving, &pair.fixed)?;
        let target = perturbation.transform_output(&u_t)?;
        let augmented = perturbation.apply(pair)?;
        let mut fwd = forward(student, &augmented)?;
        let (cons, dc) = mse_consistency_with_grad(&target, &fwd.ddf)?;
        let g_cons = fwd.backward(student, &dc)?;
        for (g, c) in grad.iter_mut().zip(&g_cons) {
            *g += alpha * c;
        }
        consistency = cons;
    }
    Ok((
        StepLosses {
            weak,
            consistency,
            total: total_loss(weak, consistency, alpha),
        },
        grad,
    ))
}

/// Per-epoch means. Wall time is kept out of the CSV so logs of identical
/// runs compare byte for byte.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub warmup: bool,
    pub steps: usize,
    pub weak: f64,
    pub consistency: f64,
    pub total: f64,
    /// Word positions of the pair and augmentation generators.
    pub rng_digest: String,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub mode: TrainMode,
    pub alpha: f64,
    pub gamma: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,phase,mode,alpha,gamma,steps,weak_loss,consistency_loss,total_loss,rng_state\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{},{:e},{:e},{:e},{}\n",
                e.epoch,
                if e.warmup { "warmup" } else { "semi" },
                self.mode.name(),
                self.alpha,
                self.gamma,
                e.steps,
                e.weak,
                e.consistency,
                e.total,
                e.rng_digest
            ));
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("epoch,wall_seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.6}\n", e.epoch, e.wall_seconds));
        }
        out
    }
}

/// What one optimizer step did, for audits.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub epoch: usize,
    pub step: usize,
    pub warmup: bool,
    pub losses: StepLosses,
    pub student: &'a ModelParams,
    /// Teacher before and after the EMA update; `None` during warmup.
    pub teacher_before: Option<&'a ModelParams>,
    pub teacher_after: Option<&'a ModelParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub adam: AdamState,
    pub log: TrainLog,
}

pub fn train(cfg: &TrainConfig, data: &DatasetSplit) -> Result<TrainOutput> {
    train_observed(cfg, data, |_| {})
}

fn digest(pair_rng: &ChaCha8Rng, aug_rng: &ChaCha8Rng) -> String {
    format!("{:x}-{:x}", pair_rng.get_word_pos(), aug_rng.get_word_pos())
}

fn sample_perturbation(
    mode: TrainMode,
    rng: &mut ChaCha8Rng,
    aug: &AugConfig,
    dims: Dims,
) -> Result<Perturbation> {
    Ok(match mode {
        TrainMode::WeakOnly | TrainMode::NoAug => Perturbation::Identity,
        TrainMode::WarpDdf => Perturbation::WarpDdf(sample_warpddf(rng, aug, dims)?),
        TrainMode::RegCut => Perturbation::RegCut(sample_cuboid(rng, aug, dims)?),
        TrainMode::WarpDdfRegCut => {
            let u = sample_warpddf(rng, aug, dims)?;
            Perturbation::Combined(u, sample_cuboid(rng, aug, dims)?)
        }
    })
}

/// [`train`] with a callback after every optimizer step.
///
/// Each epoch visits every labelled pair once in a shuffled order. Unlabelled
/// pairs come from a shuffled queue drawn without replacement and refilled
/// when empty. Pair order and augmentations use separate generators, so
/// switching the perturbation never changes which pairs are seen.
pub fn train_observed(
    cfg: &TrainConfig,
    data: &DatasetSplit,
    mut observe: impl FnMut(&StepRecord<'_>),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.labelled.is_empty() {
        return Err(Error::Missing(
            "training needs at least one labelled pair".into(),
        ));
    }
    let consistency_epochs = cfg.epochs > cfg.warmup_epochs;
    if cfg.mode.uses_consistency() && consistency_epochs && data.unlabelled.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "mode {} needs unlabelled pairs but the split has none",
            cfg.mode.name()
        )));
    }
    let dims = data.dims()?;
    let arch = cfg.arch(dims)?;
    let mut student = ModelParams::init(arch, cfg.seed)?;
    let mut teacher: Option<ModelParams> = None;
    let mut adam = AdamState::new(cfg.adam, student.len());

    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pair_rng.set_stream(1);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.aug.seed ^ cfg.seed.rotate_left(32));
    aug_rng.set_stream(2);

    let mut lab_order = data.labelled.clone();
    let mut unl_queue: Vec<(usize, usize)> = Vec::new();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = std::time::Instant::now();
        let warmup = epoch < cfg.warmup_epochs;
        if !warmup && teacher.is_none() {
            teacher = Some(student.clone());
        }
        lab_order.shuffle(&mut pair_rng);
        let mut sums = StepLosses::default();
        for (step, &lab_idx) in lab_order.iter().enumerate() {
            let lab = data.pair(lab_idx)?;
            let (losses, grad) = match (&teacher, warmup || !cfg.mode.uses_consistency()) {
                (Some(t), false) => {
                    if unl_queue.is_empty() {
                        unl_queue = data.unlabelled.clone();
                        unl_queue.shuffle(&mut pair_rng);
                    }
                    let unl = data.pair(unl_queue.pop().expect("refilled above"))?;
                    let pert = sample_perturbation(cfg.mode, &mut aug_rng, &cfg.aug, dims)?;
                    train_step(&student, t, &lab, Some(&unl), &pert, cfg.mode, cfg.alpha)?
                }
                _ => train_step(
                    &student,
                    &student,
                    &lab,
                    None,
                    &Perturbation::Identity,
                    TrainMode::WeakOnly,
                    0.0,
                )?,
            };
            adam_step(student.theta_mut(), &grad, &mut adam)?;
            let before = match teacher.as_mut() {
                Some(t) if !warmup => {
                    let prev = t.clone();
                    *t = ema_update(&prev, &student, cfg.gamma)?;
                    Some(prev)
                }
                _ => None,
            };
            observe(&StepRecord {
                epoch,
                step,
                warmup,
                losses,
                student: &student,
                teacher_before: before.as_ref(),
                teacher_after: if warmup { None } else { teacher.as_ref() },
            });
            sums.weak += losses.weak;
            sums.consistency += losses.consistency;
            sums.total += losses.total;
        }
        let k = lab_order.len() as f64;
        records.push(EpochRecord {
            epoch,
            warmup,
            steps: lab_order.len(),
            weak: sums.weak / k,
            consistency: sums.consistency / k,
            total: sums.total / k,
            rng_digest: digest(&pair_rng, &aug_rng),
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    let teacher = teacher.unwrap_or_else(|| student.clone());
    Ok(TrainOutput {
        student,
        teacher,
        adam,
        log: TrainLog {
            mode: cfg.mode,
            alpha: cfg.alpha,
            gamma: cfg.gamma,
            epochs: records,
        },
    })
}
