use serde::{Deserialize, Serialize};

use super::{LocalizationMap, PatchClass, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Melanoma,
    BenignNevus,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Melanoma => "melanoma",
            Verdict::BenignNevus => "benign_nevus",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub benign: u64,
    pub malignant: u64,
    pub normal: u64,
    pub unseen: u64,
}

impl ClassCounts {
    pub fn add(&mut self, class: PatchClass) {
        match class {
            PatchClass::Benign => self.benign += 1,
            PatchClass::Malignant => self.malignant += 1,
            PatchClass::Normal => self.normal += 1,
            PatchClass::Unseen => self.unseen += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub rho: f64,
    /// No malignant or benign cell at all; `rho` is then 0.
    pub no_lesion: bool,
    pub counts: ClassCounts,
}

/// Malignant cells over malignant plus benign cells.
pub fn malignancy_ratio(map: &LocalizationMap) -> RatioSummary {
    let mut counts = ClassCounts::default();
    for class in map.cells.iter().flatten() {
        counts.add(*class);
    }
    let lesion = counts.malignant + counts.benign;
    let (rho, no_lesion) = if lesion == 0 {
        (0.0, true)
    } else {
        (counts.malignant as f64 / lesion as f64, false)
    };
    RatioSummary { rho, no_lesion, counts }
}

/// Melanoma iff `rho >= t_r` and the slide has lesion cells.
pub fn decide(rho: f64, t_r: f64, no_lesion: bool) -> Verdict {
    if rho >= t_r && !no_lesion {
        Verdict::Melanoma
    } else {
        Verdict::BenignNevus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideVerdict {
    pub slide_id: String,
    pub rho: f64,
    pub t_p: f64,
    pub t_r: f64,
    pub verdict: Verdict,
    pub counts: ClassCounts,
    pub no_lesion_flag: bool,
}

pub fn slide_verdict(slide_id: &str, ratio: &RatioSummary, thresholds: &Thresholds) -> SlideVerdict {
    if ratio.no_lesion {
        log::warn!("{slide_id}: no benign or malignant cells; reporting benign nevus");
    }
    SlideVerdict {
        slide_id: slide_id.to_string(),
        rho: ratio.rho,
        t_p: thresholds.t_p,
        t_r: thresholds.t_r,
        verdict: decide(ratio.rho, thresholds.t_r, ratio.no_lesion),
        counts: ratio.counts,
        no_lesion_flag: ratio.no_lesion,
    }
}
