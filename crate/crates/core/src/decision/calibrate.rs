use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ProbabilityVector;
use crate::error::{Error, Result};
use crate::label::TissueLabel;
use crate::tiling::PatchRecord;

use super::{assign_class, build_map, decide, PatchClass, Thresholds, Verdict};

/// Per-patch outputs of one validation slide plus its known verdict.
#[derive(Debug, Clone)]
pub struct ValidationSlide {
    pub probs: Vec<ProbabilityVector>,
    pub truth: Verdict,
}

impl ValidationSlide {
    /// Checks that the records form a valid map before keeping the vectors.
    pub fn from_map_inputs(
        records: &[PatchRecord],
        probs: Vec<ProbabilityVector>,
        level_dims: (u32, u32),
        stride: u32,
        downsample: u32,
        truth: Verdict,
    ) -> Result<Self> {
        let placeholder = vec![PatchClass::Unseen; records.len()];
        let id = records.first().map_or("", |r| r.slide_id.as_str());
        build_map(id, records, &placeholder, level_dims, stride, downsample)?;
        if probs.len() != records.len() {
            return Err(Error::LengthMismatch {
                left: records.len(),
                right: probs.len(),
            });
        }
        Ok(ValidationSlide { probs, truth })
    }

    /// Slide verdict at the given thresholds. Records are grid-disjoint, so
    /// counting classes equals counting map cells.
    fn verdict(&self, t: &Thresholds) -> Verdict {
        let (mut m, mut b) = (0u64, 0u64);
        for p in &self.probs {
            match assign_class(p, t.t_p).expect("validated vector") {
                PatchClass::Malignant => m += 1,
                PatchClass::Benign => b += 1,
                _ => {}
            }
        }
        let no_lesion = m + b == 0;
        let rho = if no_lesion { 0.0 } else { m as f64 / (m + b) as f64 };
        decide(rho, t.t_r, no_lesion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub t_p: f64,
    pub t_r: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// The validation set held only one truth class; the missing metric was
    /// treated as 1.
    pub single_class: bool,
}

impl Calibration {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            t_p: self.t_p,
            t_r: self.t_r,
        }
    }
}

fn grid(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|k| f64::from(k) / 100.0).collect()
}

/// 0.50, 0.51, ..., 0.99.
pub fn default_tp_grid() -> Vec<f64> {
    grid(50, 99)
}

/// 0.01, 0.02, ..., 0.50.
pub fn default_tr_grid() -> Vec<f64> {
    grid(1, 50)
}

fn prepare_grid(name: &str, values: &[f64], lo_open: bool) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    for &v in values {
        let ok = if lo_open {
            v > 0.0 && v <= 1.0
        } else {
            (0.0..=1.0).contains(&v)
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("{name} grid value {v} out of range")));
        }
    }
    let mut out = values.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// (sensitivity, specificity, -t_r), compared lexicographically.
type Score = (f64, f64, f64);

fn better(a: &Score, b: &Score) -> bool {
    a.partial_cmp(b) == Some(std::cmp::Ordering::Greater)
}

/// Exhaustive grid search. Maximizes slide-level sensitivity, then
/// specificity, then prefers the smaller `t_r`; the first grid point with the
/// best score in `(t_p, t_r)` ascending order wins.
pub fn calibrate(val: &[ValidationSlide], tp_grid: &[f64], tr_grid: &[f64]) -> Result<Calibration> {
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let tps = prepare_grid("t_p", tp_grid, true)?;
    let trs = prepare_grid("t_r", tr_grid, false)?;
    let positives = val.iter().filter(|s| s.truth == Verdict::Melanoma).count();
    let negatives = val.len() - positives;
    let single_class = positives == 0 || negatives == 0;
    if single_class {
        log::warn!("validation set holds a single truth class; the missing rate is treated as 1");
    }

    let per_tp: Vec<(Score, Thresholds)> = tps
        .par_iter()
        .map(|&t_p| {
            let mut best: Option<(Score, Thresholds)> = None;
            for &t_r in &trs {
                let t = Thresholds { t_p, t_r };
                let (mut tp, mut tn) = (0usize, 0usize);
                for s in val {
                    match (s.truth, s.verdict(&t)) {
                        (Verdict::Melanoma, Verdict::Melanoma) => tp += 1,
                        (Verdict::BenignNevus, Verdict::BenignNevus) => tn += 1,
                        _ => {}
                    }
                }
                let sens = if positives == 0 {
                    1.0
                } else {
                    tp as f64 / positives as f64
                };
                let spec = if negatives == 0 {
                    1.0
                } else {
                    tn as f64 / negatives as f64
                };
                let score = (sens, spec, -t_r);
                if best.as_ref().is_none_or(|(b, _)| better(&score, b)) {
                    best = Some((score, t));
                }
            }
            best.expect("t_r grid is non-empty")
        })
        .collect();

    let mut best = per_tp[0];
    for cand in &per_tp[1..] {
        if better(&cand.0, &best.0) {
            best = *cand;
        }
    }
    let ((sensitivity, specificity, _), t) = best;
    Ok(Calibration {
        t_p: t.t_p,
        t_r: t.t_r,
        sensitivity,
        specificity,
        single_class,
    })
}

/// Convenience for validation data where every patch carries a ground label:
/// treats each label as a confident one-hot prediction.
pub fn one_hot(label: TissueLabel, width: usize) -> ProbabilityVector {
    let mut p = vec![0.0; width];
    p[label.index()] = 1.0;
    ProbabilityVector::new(p).expect("one-hot vector is normalized")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A slide of `m` malignant and `b` benign confident patches.
    fn slide(m: usize, b: usize, truth: Verdict) -> ValidationSlide {
        let mut probs = vec![one_hot(TissueLabel::Malignant, 2); m];
        probs.extend(vec![one_hot(TissueLabel::Benign, 2); b]);
        ValidationSlide { probs, truth }
    }

    /// Independent brute force: scores every grid point, keeps the first best.
    fn oracle(val: &[ValidationSlide], tps: &[f64], trs: &[f64]) -> (f64, f64) {
        type Scored = ((f64, f64, f64), (f64, f64));
        let mut best: Option<Scored> = None;
        for &tp in tps {
            for &tr in trs {
                let t = Thresholds { t_p: tp, t_r: tr };
                let pos: Vec<_> = val.iter().filter(|s| s.truth == Verdict::Melanoma).collect();
                let neg: Vec<_> = val.iter().filter(|s| s.truth == Verdict::BenignNevus).collect();
                let sens = pos.iter().filter(|s| s.verdict(&t) == Verdict::Melanoma).count() as f64 / pos.len() as f64;
                let spec =
                    neg.iter().filter(|s| s.verdict(&t) == Verdict::BenignNevus).count() as f64 / neg.len() as f64;
                let score = (sens, spec, -tr);
                if best.is_none() || score > best.unwrap().0 {
                    best = Some((score, (tp, tr)));
                }
            }
        }
        best.unwrap().1
    }

    #[test]
    fn separated_ratios_pick_smallest_separating_t_r() {
        // Benign slides at rho 0 and 0.01; melanoma slides at 0.20 and 0.5.
        let val = vec![
            slide(0, 100, Verdict::BenignNevus),
            slide(1, 99, Verdict::BenignNevus),
            slide(20, 80, Verdict::Melanoma),
            slide(50, 50, Verdict::Melanoma),
        ];
        let cal = calibrate(&val, &default_tp_grid(), &default_tr_grid()).unwrap();
        assert_eq!(cal.t_r, 0.02);
        assert_eq!(cal.t_p, 0.5);
        assert_eq!((cal.sensitivity, cal.specificity), (1.0, 1.0));
        assert_eq!((cal.t_p, cal.t_r), oracle(&val, &default_tp_grid(), &default_tr_grid()));
    }

    #[test]
    fn default_grids_contain_operating_point() {
        assert!(default_tp_grid().contains(&0.99));
        assert!(default_tr_grid().contains(&0.04));
    }

    #[test]
    fn single_class_is_flagged() {
        let val = vec![slide(10, 10, Verdict::Melanoma)];
        let cal = calibrate(&val, &default_tp_grid(), &default_tr_grid()).unwrap();
        assert!(cal.single_class);
        assert_eq!(cal.sensitivity, 1.0);
        assert_eq!(cal.t_r, 0.01);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(calibrate(&[], &[0.5], &[0.1]).is_err());
        let val = vec![slide(1, 1, Verdict::Melanoma)];
        assert!(calibrate(&val, &[], &[0.1]).is_err());
        assert!(calibrate(&val, &[0.5], &[]).is_err());
    }

    #[test]
    fn uncertain_patches_respond_to_t_p() {
        // Malignant patches at 0.9 confidence only count when t_p <= 0.9.
        let unsure = ProbabilityVector::new(vec![0.1, 0.9]).unwrap();
        let val = vec![
            ValidationSlide {
                probs: vec![unsure.clone(); 10]
                    .into_iter()
                    .chain(vec![one_hot(TissueLabel::Benign, 2); 10])
                    .collect(),
                truth: Verdict::Melanoma,
            },
            slide(0, 20, Verdict::BenignNevus),
        ];
        let tps = default_tp_grid();
        let trs = default_tr_grid();
        let cal = calibrate(&val, &tps, &trs).unwrap();
        assert_eq!((cal.t_p, cal.t_r), oracle(&val, &tps, &trs));
        assert!(cal.t_p <= 0.9);
    }
}
