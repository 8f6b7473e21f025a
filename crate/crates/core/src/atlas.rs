//! Atlas construction and population diversity.
//!
//! The atlas starts from the sample whose masks best agree with the
//! binarised mean mask, then is refined by registering every sample to it and
//! averaging the warped intensities and soft masks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Ddf, MaskMode, MaskSet, Volume};
use crate::metrics::dice_score;
use crate::model::Registrar;
use crate::phantom::Subject;
use crate::warp::{resample_masks, resample_volume};

fn require_masks(samples: &[Subject]) -> Result<Vec<&MaskSet>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.masks
                .as_ref()
                .ok_or_else(|| Error::Missing(format!("sample {i} has no masks")))
        })
        .collect()
}

/// Index of the sample with the highest class-mean binary Dice against the
/// binarised (≥ 0.5) voxel-wise mean mask. Ties go to the lowest index.
pub fn init_atlas(masks: &[&MaskSet]) -> Result<usize> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Missing("atlas needs at least one sample".into()))?;
    let (dims, classes) = (first.dims(), first.classes());
    for m in masks {
        dims.expect_same(&m.dims())?;
        if m.classes() != classes {
            return Err(Error::ClassMismatch {
                expected: classes,
                found: m.classes(),
            });
        }
    }
    let n = masks.len() as f64;
    let mut mean = vec![0.0; first.data().len()];
    for m in masks {
        for (a, v) in mean.iter_mut().zip(m.data()) {
            *a += v;
        }
    }
    let mean: Vec<f64> = mean
        .iter()
        .map(|v| if v / n >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    let nv = dims.len();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, m) in masks.iter().enumerate() {
        let b = m.binarize(0.5);
        let mut sim = 0.0;
        for c in 0..classes {
            sim += dice_score(b.channel(c), &mean[c * nv..(c + 1) * nv])?;
        }
        sim /= classes as f64;
        if sim > best.1 {
            best = (i, sim);
        }
    }
    Ok(best.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtlasResult {
    pub atlas: Volume,
    /// Mean warped soft masks.
    pub probability: MaskSet,
    /// Displacement of each sample onto the atlas of the last pass.
    pub ddfs: Vec<Ddf>,
    pub initial_index: usize,
    pub iterations: usize,
    /// Mean absolute atlas change per pass.
    pub history: Vec<f64>,
}

/// Iterated register-warp-average passes. Stops when the mean absolute atlas
/// change drops below `tol` times the sample intensity range, or after
/// `max_iters` passes.
pub fn build_atlas(
    model: &dyn Registrar,
    samples: &[Subject],
    max_iters: usize,
    tol: f64,
) -> Result<AtlasResult> {
    if max_iters == 0 {
        return Err(Error::InvalidParameter(
            "max_iters must be at least 1".into(),
        ));
    }
    let masks = require_masks(samples)?;
    let start = init_atlas(&masks)?;
    let dims = samples[start].image.dims();
    for s in samples {
        dims.expect_same(&s.image.dims())?;
    }
    let (lo, hi) = samples
        .iter()
        .map(|s| s.image.range())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        });
    let threshold = tol * (hi - lo);
    let n = samples.len() as f64;

    let mut atlas = samples[start].image.clone();
    let mut history = Vec::new();
    loop {
        let warped: Vec<(Ddf, Volume, MaskSet)> = samples
            .par_iter()
            .zip(masks.par_iter())
            .map(|(s, m)| {
                let ddf = model.register(&s.image, &atlas)?;
                let v = resample_volume(&s.image, &ddf)?;
                let p = resample_masks(m, &ddf)?;
                Ok((ddf, v, p))
            })
            .collect::<Result<_>>()?;
        let mut mean = vec![0.0; dims.len()];
        let mut prob = vec![0.0; warped[0].2.data().len()];
        for (_, v, p) in &warped {
            for (a, x) in mean.iter_mut().zip(v.data()) {
                *a += x;
            }
            for (a, x) in prob.iter_mut().zip(p.data()) {
                *a += x;
            }
        }
        mean.iter_mut().for_each(|a| *a /= n);
        prob.iter_mut().for_each(|a| *a = (*a / n).clamp(0.0, 1.0));
        let change = mean
            .iter()
            .zip(atlas.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / dims.len() as f64;
        history.push(change);
        atlas = Volume::new(dims, atlas.spacing(), mean)?;
        if change < threshold || history.len() >= max_iters {
            let classes = masks[0].classes();
            return Ok(AtlasResult {
                atlas,
                probability: MaskSet::new(dims, classes, MaskMode::Soft, prob)?,
                ddfs: warped.into_iter().map(|(d, _, _)| d).collect(),
                initial_index: start,
                iterations: history.len(),
                history,
            });
        }
    }
}

/// Voxel mean of the population variance of `‖u_i − u_j‖²` over all pairs
/// `i < j`.
pub fn population_diversity(ddfs: &[Ddf]) -> Result<f64> {
    if ddfs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "population diversity needs at least 2 fields, got {}",
            ddfs.len()
        )));
    }
    let dims = ddfs[0].dims();
    for d in ddfs {
        dims.expect_same(&d.dims())?;
    }
    let nv = dims.len();
    let k = ddfs.len();
    let pairs = (k * (k - 1) / 2) as f64;
    let mut values = Vec::with_capacity(k * (k - 1) / 2);
    let mut total = 0.0;
    for i in 0..nv {
        values.clear();
        for a in 0..k {
            let ua = ddfs[a].at(i);
            for other in &ddfs[a + 1..] {
                let ub = other.at(i);
                values.push((0..3).map(|c| (ua[c] - ub[c]).powi(2)).sum::<f64>());
            }
        }
        let mean = values.iter().sum::<f64>() / pairs;
        total += values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pairs;
    }
    Ok(total / nv as f64)
}

/// Set voxel count times voxel volume, in mm³.
pub fn gland_volume(mask: &[f64], spacing: [f64; 3]) -> f64 {
    let count = mask.iter().filter(|&&v| v >= 0.5).count();
    count as f64 * spacing[0] * spacing[1] * spacing[2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cohort {
    Bottom,
    Middle,
    Top,
}

impl Cohort {
    pub fn name(self) -> &'static str {
        match self {
            Cohort::Bottom => "bottom",
            Cohort::Middle => "middle",
            Cohort::Top => "top",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversityReport {
    pub sigma2_pop: f64,
    pub volumes: Vec<f64>,
    pub cohorts: Vec<Cohort>,
    pub top: f64,
    pub bottom: f64,
    /// `top / bottom`; `None` when the bottom cohort has zero diversity.
    pub ratio: Option<f64>,
}

impl DiversityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,gland_volume_mm3,cohort\n");
        for (i, (v, c)) in self.volumes.iter().zip(&self.cohorts).enumerate() {
            out.push_str(&format!("{i},{v:e},{}\n", c.name()));
        }
        let ratio = self
            .ratio
            .map_or_else(|| "undefined".to_string(), |r| format!("{r:e}"));
        out.push_str(&format!(
            "# sigma2_pop={:e} top={:e} bottom={:e} ratio={ratio}\n",
            self.sigma2_pop, self.top, self.bottom
        ));
        out
    }
}

/// Splits samples into the top and bottom `fraction` by the volume of
/// `gland_class` and compares their population diversity.
pub fn cohort_diversity(
    samples: &[Subject],
    ddfs: &[Ddf],
    gland_class: usize,
    fraction: f64,
) -> Result<DiversityReport> {
    if samples.len() != ddfs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} samples but {} fields",
            samples.len(),
            ddfs.len()
        )));
    }
    let masks = require_masks(samples)?;
    let k = (samples.len() as f64 * fraction + 1e-9).floor() as usize;
    if k < 2 || 2 * k > samples.len() {
        return Err(Error::InvalidParameter(format!(
            "cohort fraction {fraction} of {} samples gives cohorts of {k}",
            samples.len()
        )));
    }
    let mut volumes = Vec::with_capacity(samples.len());
    for (s, m) in samples.iter().zip(&masks) {
        if gland_class >= m.classes() {
            return Err(Error::ClassMismatch {
                expected: gland_class + 1,
                found: m.classes(),
            });
        }
        volumes.push(gland_volume(m.channel(gland_class), s.image.spacing()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| volumes[a].total_cmp(&volumes[b]).then(a.cmp(&b)));
    let mut cohorts = vec![Cohort::Middle; samples.len()];
    let pick = |ids: &[usize]| ids.iter().map(|&i| ddfs[i].clone()).collect::<Vec<_>>();
    let bottom_ids = &order[..k];
    let top_ids = &order[order.len() - k..];
    for &i in bottom_ids {
        cohorts[i] = Cohort::Bottom;
    }
    for &i in top_ids {
        cohorts[i] = Cohort::Top;
    }
    let bottom = population_diversity(&pick(bottom_ids))?;
    let top = population_diversity(&pick(top_ids))?;
    Ok(DiversityReport {
        sigma2_pop: population_diversity(ddfs)?,
        volumes,
        cohorts,
        top,
        bottom,
        ratio: (bottom > 0.0).then(|| top / bottom),
    })
}
