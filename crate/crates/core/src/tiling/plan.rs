use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::TissueLabel;
use crate::slide_io::SlideHandle;

use super::hsv::BinaryMask;
use super::raster::LabelMask;

pub const DEFAULT_PATCH_SIZE: u32 = 256;
pub const DEFAULT_OVERLAP_MIN: f64 = 0.70;

/// One planned patch. `x`/`y` are level-0 pixels; `size_px` is measured at `level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub level: usize,
    pub size_px: u32,
    pub ground_label: Option<TissueLabel>,
    pub qualifying_fraction: f64,
}

/// How foreground and annotation coverage combine into the qualifying fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapRule {
    /// Pixels must be foreground and carry the label at the same time.
    #[default]
    Conjunction,
    /// Foreground share and label share are tested separately; the
    /// fraction is the smaller of the two.
    Independent,
}

/// Which cells become patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Only cells whose annotated tissue passes the overlap test.
    #[default]
    Annotated,
    /// Every cell whose foreground share passes the overlap test; a ground
    /// label is attached when the annotated test also passes.
    Tissue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanParams {
    /// Patch side at the mask level.
    pub patch_size: u32,
    pub overlap_min: f64,
    pub rule: OverlapRule,
    pub mode: PlanMode,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams {
            patch_size: DEFAULT_PATCH_SIZE,
            overlap_min: DEFAULT_OVERLAP_MIN,
            rule: OverlapRule::Conjunction,
            mode: PlanMode::Annotated,
        }
    }
}

impl PlanParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        if !(self.overlap_min > 0.0 && self.overlap_min <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "overlap_min {} outside (0, 1]",
                self.overlap_min
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Default)]
struct CellCounts {
    fg: u32,
    both: [u32; 3],
    labeled: [u32; 3],
}

/// Grid planning over one level. Cells are `patch_size` squares with stride
/// `patch_size`; partial cells at the right and bottom edges take part, with
/// their out-of-extent area counted as non-qualifying.
pub fn plan_patches(
    slide: &SlideHandle,
    fg: &BinaryMask,
    labels: &LabelMask,
    params: &PlanParams,
) -> Result<Vec<PatchRecord>> {
    params.validate()?;
    if fg.level != labels.level {
        return Err(Error::MaskMismatch(format!(
            "foreground mask is at level {}, label mask at level {}",
            fg.level, labels.level
        )));
    }
    let dims = slide.level_dimensions(fg.level)?;
    for (name, found) in [
        ("foreground", (fg.width, fg.height)),
        ("label", (labels.width, labels.height)),
    ] {
        if found != dims {
            return Err(Error::MaskMismatch(format!(
                "{name} mask is {}x{}, level {} is {}x{}",
                found.0, found.1, fg.level, dims.0, dims.1
            )));
        }
    }
    let downsample = slide.level_downsample(fg.level)?;

    let ps = params.patch_size as usize;
    let (w, h) = (dims.0 as usize, dims.1 as usize);
    let cols = w.div_ceil(ps);
    let rows = h.div_ceil(ps);
    let mut counts = vec![CellCounts::default(); cols * rows];
    for y in 0..h {
        let cell_row = &mut counts[(y / ps) * cols..(y / ps + 1) * cols];
        let fg_row = &fg.bits[y * w..(y + 1) * w];
        let label_row = &labels.cells[y * w..(y + 1) * w];
        for (x, (&f, &l)) in fg_row.iter().zip(label_row).enumerate() {
            let c = &mut cell_row[x / ps];
            c.fg += u32::from(f);
            if let Some(l) = l {
                c.labeled[l.index()] += 1;
                c.both[l.index()] += u32::from(f);
            }
        }
    }

    let area = (ps * ps) as f64;
    let mut records = Vec::new();
    for (i, c) in counts.iter().enumerate() {
        let fg_frac = f64::from(c.fg) / area;
        // Largest fraction wins; strict comparison keeps the earliest label on ties.
        let mut best: Option<(TissueLabel, f64)> = None;
        for label in TissueLabel::ALL {
            let li = label.index();
            let frac = match params.rule {
                OverlapRule::Conjunction => f64::from(c.both[li]) / area,
                OverlapRule::Independent => fg_frac.min(f64::from(c.labeled[li]) / area),
            };
            if frac >= params.overlap_min && best.is_none_or(|(_, b)| frac > b) {
                best = Some((label, frac));
            }
        }
        let (ground_label, fraction) = match params.mode {
            PlanMode::Annotated => match best {
                Some((l, f)) => (Some(l), f),
                None => continue,
            },
            PlanMode::Tissue => {
                if fg_frac < params.overlap_min {
                    continue;
                }
                (best.map(|(l, _)| l), fg_frac)
            }
        };
        let (row, col) = (i / cols, i % cols);
        records.push(PatchRecord {
            slide_id: slide.id.clone(),
            x: (col * ps) as u32 * downsample,
            y: (row * ps) as u32 * downsample,
            level: fg.level,
            size_px: params.patch_size,
            ground_label,
            qualifying_fraction: fraction,
        });
    }
    Ok(records)
}
