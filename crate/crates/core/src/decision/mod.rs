//! Unseen-class thresholding, localization maps, the malignancy ratio,
//! slide verdicts and threshold calibration.

mod calibrate;
mod map;
mod verdict;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classifier::{ProbabilityVector, SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::label::TissueLabel;

pub use calibrate::{calibrate, default_tp_grid, default_tr_grid, one_hot, Calibration, ValidationSlide};
pub use map::{build_map, composite, render_map, LocalizationMap, PALETTE_ABSENT};
pub use verdict::{decide, malignancy_ratio, slide_verdict, ClassCounts, RatioSummary, SlideVerdict, Verdict};

pub const DEFAULT_T_P: f64 = 0.99;
pub const DEFAULT_T_R: f64 = 0.04;

/// Final per-patch prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchClass {
    Benign,
    Malignant,
    Normal,
    /// Maximum probability below `t_p`.
    Unseen,
}

impl PatchClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PatchClass::Benign => "benign",
            PatchClass::Malignant => "malignant",
            PatchClass::Normal => "normal",
            PatchClass::Unseen => "unseen",
        }
    }

    pub fn label(self) -> Option<TissueLabel> {
        match self {
            PatchClass::Benign => Some(TissueLabel::Benign),
            PatchClass::Malignant => Some(TissueLabel::Malignant),
            PatchClass::Normal => Some(TissueLabel::Normal),
            PatchClass::Unseen => None,
        }
    }
}

impl From<TissueLabel> for PatchClass {
    fn from(l: TissueLabel) -> Self {
        match l {
            TissueLabel::Benign => PatchClass::Benign,
            TissueLabel::Malignant => PatchClass::Malignant,
            TissueLabel::Normal => PatchClass::Normal,
        }
    }
}

impl fmt::Display for PatchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_p: f64,
    pub t_r: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            t_p: DEFAULT_T_P,
            t_r: DEFAULT_T_R,
        }
    }
}

impl Thresholds {
    pub fn new(t_p: f64, t_r: f64) -> Result<Self> {
        let t = Thresholds { t_p, t_r };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_p > 0.0 && self.t_p <= 1.0) {
            return Err(Error::InvalidArgument(format!("t_p {} outside (0, 1]", self.t_p)));
        }
        if !(0.0..=1.0).contains(&self.t_r) {
            return Err(Error::InvalidArgument(format!("t_r {} outside [0, 1]", self.t_r)));
        }
        Ok(())
    }
}

/// Argmax class if its probability reaches `t_p`, otherwise Unseen.
pub fn assign_class(y_p: &ProbabilityVector, t_p: f64) -> Result<PatchClass> {
    let sum: f64 = y_p.probs().iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::NotNormalized(format!("entries sum to {sum}")));
    }
    let (label, p) = y_p.max();
    Ok(if p >= t_p { label.into() } else { PatchClass::Unseen })
}
