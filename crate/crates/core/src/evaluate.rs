//! Held-out pair evaluation: per-class Dice and HD95 after warping.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{dice_score, hd95};
use crate::model::Registrar;
use crate::phantom::Subject;
use crate::warp::resample_masks;

/// One `(pair, class)` row. `hd95` is `None` when either mask is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub moving: usize,
    pub fixed: usize,
    pub class: usize,
    pub dice: f64,
    pub hd95: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn mean_dice(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.dice).sum::<f64>() / self.rows.len() as f64
    }

    /// Mean over rows where HD95 is defined.
    pub fn mean_hd95(&self) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.hd95).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("moving,fixed,class,dice,hd95\n");
        for r in &self.rows {
            let hd = r
                .hd95
                .map_or_else(|| "nan".to_string(), |h| format!("{h:e}"));
            out.push_str(&format!(
                "{},{},{},{:e},{}\n",
                r.moving, r.fixed, r.class, r.dice, hd
            ));
        }
        out
    }
}

/// Registers every `(moving, fixed)` pair, warps the moving masks (soft,
/// then thresholded at 0.5) and scores them against the fixed masks. Pairs
/// run in parallel; rows come back in pair order.
pub fn evaluate_pairs(
    model: &dyn Registrar,
    subjects: &[Subject],
    pairs: &[(usize, usize)],
) -> Result<EvalReport> {
    let per_pair: Vec<Vec<EvalRow>> = pairs
        .par_iter()
        .map(|&(mi, fi)| {
            let get = |i: usize| {
                subjects
                    .get(i)
                    .ok_or_else(|| Error::Missing(format!("subject {i} of {}", subjects.len())))
            };
            let (m, f) = (get(mi)?, get(fi)?);
            let (Some(mm), Some(fm)) = (&m.masks, &f.masks) else {
                return Err(Error::Missing(format!(
                    "pair ({mi}, {fi}) needs masks on both subjects"
                )));
            };
            let ddf = model.register(&m.image, &f.image)?;
            let warped = resample_masks(mm, &ddf)?.binarize(0.5);
            let spacing = f.image.spacing();
            (0..fm.classes())
                .map(|c| {
                    let (a, b) = (warped.channel(c), fm.channel(c));
                    let dice = dice_score(a, b)?;
                    let hd = match hd95(a, b, fm.dims(), spacing) {
                        Ok(h) => Some(h),
                        Err(Error::EmptyMask(_)) => None,
                        Err(e) => return Err(e),
                    };
                    Ok(EvalRow {
                        moving: mi,
                        fixed: fi,
                        class: c,
                        dice,
                        hd95: hd,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        rows: per_pair.into_iter().flatten().collect(),
    })
}
